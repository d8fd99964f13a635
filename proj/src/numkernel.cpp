#include "tapool/numkernel.hpp"

#include <boost/math/distributions/poisson.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace tapool {

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::DegenerateRegion: return "degenerate-region";
    case ErrorKind::Indefinite: return "indefinite-matrix";
    case ErrorKind::Feasibility: return "feasibility";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::MissingWeight: return "missing-weight";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::PropensityUnderflow: return "propensity-underflow";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Collinearity: return "collinearity";
    case ErrorKind::RankDeficiency: return "rank-deficiency";
    case ErrorKind::SingularJacobian: return "singular-jacobian";
    case ErrorKind::Singularity: return "singularity";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Budget: return "budget";
    case ErrorKind::Replicates: return "replicate-failure";
    case ErrorKind::Diagnostics: return "diagnostics";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

void rethrow_in_stage(const std::string& stage, const Error& e) {
  std::string msg = e.what();
  // Strip the "<kind> error: " prefix added by the constructor.
  const std::string prefix = std::string(kind_name(e.kind())) + " error: ";
  if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
  if (msg.rfind("stage ", 0) == 0) throw e;
  throw Error(e.kind(), "stage " + stage + ": " + msg);
}

namespace {

void check_df(int df) {
  if (df < 1) throw Error(ErrorKind::Domain, "degrees of freedom must be >= 1, got " + std::to_string(df));
}

void check_x(double x) {
  if (!(x >= 0.0)) {
    std::ostringstream os;
    os << "chi-square argument must be >= 0, got " << x;
    throw Error(ErrorKind::Domain, os.str());
  }
}

constexpr double kSeriesTol = 1e-14;
constexpr int kMaxSeriesTerms = 100000;

}  // namespace

double chisq_cdf(double x, int df) {
  check_df(df);
  check_x(x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

double chisq_quantile(double p, int df) {
  check_df(df);
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "probability must lie in (0, 1), got " << p;
    throw Error(ErrorKind::Domain, os.str());
  }
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(df));
  while (chisq_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (chisq_cdf(mid, df) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-13 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

double noncentral_chisq_cdf(double x, int df, double delta) {
  check_df(df);
  check_x(x);
  if (!(delta >= 0.0) || std::isinf(delta)) {
    std::ostringstream os;
    os << "noncentrality must be finite and >= 0, got " << delta;
    throw Error(ErrorKind::Domain, os.str());
  }
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (delta == 0.0) return chisq_cdf(x, df);

  // Poisson(delta) mixture of central CDFs P(df/2 + k, x/2), summed outward from the
  // Poisson mode. Neighbouring incomplete-gamma values differ by t_a = z^a e^-z / Gamma(a+1).
  const double z = 0.5 * x;
  const int k0 = static_cast<int>(std::floor(delta));
  const double a0 = 0.5 * df + k0;
  const double p0 = boost::math::gamma_p(a0, z);
  const double t0 = boost::math::gamma_p_derivative(a0 + 1.0, z);
  const double w0 = boost::math::pdf(boost::math::poisson_distribution<double>(delta), k0);

  double sum = w0 * p0;
  int terms = 1;

  // Forward: k = k0+1, k0+2, ...
  {
    double p = p0, t = t0, w = w0, a = a0;
    for (int k = k0;; ++k) {
      p = std::max(0.0, p - t);
      t *= z / (a + 1.0);
      a += 1.0;
      w *= delta / (k + 1.0);
      double term = w * p;
      sum += term;
      if (++terms > kMaxSeriesTerms) {
        throw Error(ErrorKind::Convergence, "noncentral chi-square series exceeded 1e5 terms");
      }
      // Remaining terms are bounded by p * (Poisson upper tail beyond k+1).
      double ratio = delta / (k + 3.0);
      double tail = ratio < 1.0 ? w * ratio / (1.0 - ratio) : 1.0;
      bool small_term = term <= kSeriesTol * sum;
      if ((small_term && tail < kSeriesTol) || p * tail <= kSeriesTol * sum * 1e-2 || (p == 0.0 && k > delta)) {
        break;
      }
    }
  }
  // Backward: k = k0-1, ..., 0.
  {
    double p = p0, t = t0, w = w0, a = a0;
    for (int k = k0; k > 0; --k) {
      // t currently holds z^a e^-z / Gamma(a+1); step it down to a-1.
      t *= a / z;
      a -= 1.0;
      p = std::min(1.0, p + t);
      w *= k / delta;
      double term = w * p;
      sum += term;
      if (++terms > kMaxSeriesTerms) {
        throw Error(ErrorKind::Convergence, "noncentral chi-square series exceeded 1e5 terms");
      }
      // Remaining lower Poisson tail is bounded geometrically by w * r / (1 - r), r = (k-1)/delta.
      double r = (k - 1.0) / delta;
      double tail = r < 1.0 ? w * r / (1.0 - r) : 1.0;
      if (term <= kSeriesTol * sum && tail < kSeriesTol) break;
    }
  }
  return std::clamp(sum, 0.0, 1.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    std::ostringstream os;
    os << "probability must lie in (0, 1), got " << p;
    throw Error(ErrorKind::Domain, os.str());
  }
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

void TruncRegion::validate() const {
  if (!(lower >= 0.0) || !(upper > lower)) {
    std::ostringstream os;
    os << "truncation region requires 0 <= a < b, got [" << lower << ", " << upper << "]";
    throw Error(ErrorKind::Domain, os.str());
  }
}

PartialMoments partial_moments(const Eigen::VectorXd& mu2, const TruncRegion& region) {
  region.validate();
  const int l = static_cast<int>(mu2.size());
  if (l < 1) throw Error(ErrorKind::Domain, "mean vector must be nonempty");
  const double delta = 0.5 * mu2.squaredNorm();
  auto F = [&](int df, double t) { return std::isinf(t) ? 1.0 : noncentral_chisq_cdf(t, df, delta); };
  double mass = std::max(0.0, F(l, region.upper) - F(l, region.lower));
  double g2 = std::max(0.0, F(l + 2, region.upper) - F(l + 2, region.lower));
  double g4 = std::max(0.0, F(l + 4, region.upper) - F(l + 4, region.lower));
  PartialMoments out;
  out.mass = mass;
  out.first = mu2 * g2;
  out.second = Eigen::MatrixXd::Identity(l, l) * g2 + mu2 * mu2.transpose() * g4;
  return out;
}

TruncMoments trunc_moments(const Eigen::VectorXd& mu2, const TruncRegion& region) {
  PartialMoments pm = partial_moments(mu2, region);
  if (pm.mass <= 1e-12) {
    std::ostringstream os;
    os << "truncation mass " << pm.mass << " <= 1e-12 on [" << region.lower << ", " << region.upper << "]";
    throw Error(ErrorKind::DegenerateRegion, os.str());
  }
  TruncMoments out;
  out.mass = pm.mass;
  out.mean = pm.first / pm.mass;
  out.second_moment = pm.second / pm.mass;
  out.second_moment = 0.5 * (out.second_moment + out.second_moment.transpose()).eval();
  return out;
}

namespace {

struct Eig {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  double norm;
};

Eig symmetric_eig(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::DimensionMismatch, "matrix must be square");
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  if (!sym.allFinite()) throw Error(ErrorKind::Domain, "matrix has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eig out{es.eigenvalues(), es.eigenvectors(), 0.0};
  if (out.values.size() > 0) out.norm = out.values.cwiseAbs().maxCoeff();
  return out;
}

Eigen::MatrixXd reassemble(const Eig& e, const Eigen::VectorXd& values) {
  Eigen::MatrixXd r = e.vectors * values.asDiagonal() * e.vectors.transpose();
  return 0.5 * (r + r.transpose());
}

}  // namespace

double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eig e = symmetric_eig(m);
  return e.values.size() ? e.values.minCoeff() : 0.0;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eig e = symmetric_eig(m);
  Eigen::VectorXd v = e.values;
  for (int i = 0; i < v.size(); ++i) {
    if (v(i) < -1e-10 * e.norm) {
      std::ostringstream os;
      os << "eigenvalue " << v(i) << " below -1e-10*||M|| (||M|| = " << e.norm << ")";
      throw Error(ErrorKind::Indefinite, os.str());
    }
    v(i) = std::sqrt(std::max(0.0, v(i)));
  }
  return reassemble(e, v);
}

Eigen::MatrixXd pd_inv_sqrt(const Eigen::MatrixXd& m) {
  Eig e = symmetric_eig(m);
  Eigen::VectorXd v = e.values;
  for (int i = 0; i < v.size(); ++i) {
    if (!(v(i) > 1e-14 * std::max(e.norm, 1e-300))) {
      std::ostringstream os;
      os << "matrix is not positive definite (eigenvalue " << v(i) << ")";
      throw Error(ErrorKind::Singularity, os.str());
    }
    v(i) = 1.0 / std::sqrt(v(i));
  }
  return reassemble(e, v);
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, bool* changed) {
  Eig e = symmetric_eig(m);
  Eigen::VectorXd v = e.values;
  bool any = false;
  for (int i = 0; i < v.size(); ++i) {
    if (v(i) < 0.0) {
      v(i) = 0.0;
      any = true;
    }
  }
  if (changed) *changed = any;
  if (!any) return 0.5 * (m + m.transpose());
  return reassemble(e, v);
}

// ---------------------------------------------------------------------------

namespace {

struct Simplex {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> f;
};

double safe_eval(const Objective& f, const Eigen::VectorXd& x) {
  double v = f(x);
  return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

NelderMeadResult run_simplex(const Objective& f, Simplex s, int max_iter, double tol) {
  const int n = static_cast<int>(s.x.size()) - 1;
  std::vector<int> order(n + 1);
  NelderMeadResult res;
  int it = 0;
  for (; it < max_iter; ++it) {
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s.f[a] < s.f[b]; });
    Simplex sorted;
    for (int i : order) {
      sorted.x.push_back(s.x[i]);
      sorted.f.push_back(s.f[i]);
    }
    s = std::move(sorted);

    double diameter = 0.0;
    for (int i = 1; i <= n; ++i) diameter = std::max(diameter, (s.x[i] - s.x[0]).cwiseAbs().maxCoeff());
    double spread = s.f[n] - s.f[0];
    if (diameter < tol && spread < tol) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(s.x[0].size());
    for (int i = 0; i < n; ++i) centroid += s.x[i];
    centroid /= n;

    Eigen::VectorXd xr = centroid + (centroid - s.x[n]);
    double fr = safe_eval(f, xr);
    if (fr < s.f[0]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - s.x[n]);
      double fe = safe_eval(f, xe);
      if (fe < fr) {
        s.x[n] = xe;
        s.f[n] = fe;
      } else {
        s.x[n] = xr;
        s.f[n] = fr;
      }
      continue;
    }
    if (fr < s.f[n - 1]) {
      s.x[n] = xr;
      s.f[n] = fr;
      continue;
    }
    bool outside = fr < s.f[n];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                 : Eigen::VectorXd(centroid + 0.5 * (s.x[n] - centroid));
    double fc = safe_eval(f, xc);
    if (fc < (outside ? fr : s.f[n])) {
      s.x[n] = xc;
      s.f[n] = fc;
      continue;
    }
    for (int i = 1; i <= n; ++i) {
      s.x[i] = s.x[0] + 0.5 * (s.x[i] - s.x[0]);
      s.f[i] = safe_eval(f, s.x[i]);
    }
  }
  int best = static_cast<int>(std::min_element(s.f.begin(), s.f.end()) - s.f.begin());
  res.argmin = s.x[best];
  res.value = s.f[best];
  res.iterations = it;
  res.max_iter_hit = it >= max_iter;
  return res;
}

Simplex make_simplex(const Objective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& steps) {
  Simplex s;
  s.x.push_back(x0);
  s.f.push_back(safe_eval(f, x0));
  for (int i = 0; i < x0.size(); ++i) {
    Eigen::VectorXd xi = x0;
    xi(i) += steps(i);
    s.x.push_back(xi);
    s.f.push_back(safe_eval(f, xi));
  }
  return s;
}

}  // namespace

NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opts) {
  if (x0.size() < 1) throw Error(ErrorKind::Domain, "Nelder-Mead needs at least one dimension");
  if (!std::isfinite(f(x0))) throw Error(ErrorKind::Domain, "objective is not finite at the starting point");
  const int d = static_cast<int>(x0.size());
  Eigen::VectorXd steps = Eigen::VectorXd::Constant(d, opts.step);
  NelderMeadResult best = run_simplex(f, make_simplex(f, x0, steps), opts.max_iter, opts.tol);
  int total_iter = best.iterations;
  bool hit = best.max_iter_hit;

  Rng rng(opts.seed);
  for (int r = 0; r < opts.restarts; ++r) {
    Eigen::VectorXd jitter(d);
    for (int i = 0; i < d; ++i) {
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      jitter(i) = sign * opts.step * (0.5 + rng.uniform());
    }
    NelderMeadResult cand = run_simplex(f, make_simplex(f, best.argmin, jitter), opts.max_iter, opts.tol);
    total_iter += cand.iterations;
    hit = hit || cand.max_iter_hit;
    if (cand.value < best.value) best = cand;
  }
  best.iterations = total_iter;
  best.max_iter_hit = hit;
  return best;
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double Rng::uniform() {
  // 53 random bits mapped to (0, 1), never returning exactly 0.
  std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

Eigen::VectorXd Rng::normal_vector(int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal();
  return v;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::Domain, "empty range");
  // Rejection to remove modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

Rng SeedPlan::stream(std::uint64_t index) const {
  return Rng(splitmix64(master_seed ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

SeedPlan SeedPlan::child(std::uint64_t tag) const {
  return SeedPlan{splitmix64(splitmix64(master_seed) + 0xd1b54a32d192ed03ULL * (tag + 1))};
}

Eigen::VectorXd sample_trunc_w2(const Eigen::VectorXd& mu2, const TruncRegion& region, Rng& rng) {
  region.validate();
  const double delta = 0.5 * mu2.squaredNorm();
  const int l = static_cast<int>(mu2.size());
  double hi = std::isinf(region.upper) ? 1.0 : noncentral_chisq_cdf(region.upper, l, delta);
  double mass = hi - noncentral_chisq_cdf(region.lower, l, delta);
  if (!(mass >= 1e-6)) {
    std::ostringstream os;
    os << "rejection acceptance probability " << mass << " < 1e-6";
    throw Error(ErrorKind::Feasibility, os.str());
  }
  for (;;) {
    Eigen::VectorXd w = mu2 + rng.normal_vector(l);
    if (region.contains(w.squaredNorm())) return w;
  }
}

}  // namespace tapool
