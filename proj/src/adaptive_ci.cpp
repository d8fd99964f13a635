#include "tapool/adaptive_ci.hpp"

#include "tapool/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace tapool {

std::string to_string(CiMethod m) {
  switch (m) {
    case CiMethod::Wald: return "wald";
    case CiMethod::WaldEff: return "wald-eff";
    case CiMethod::Baci: return "baci";
    case CiMethod::BaciF: return "baci-f";
    case CiMethod::Paci: return "paci";
  }
  return "unknown";
}

CiMethod parse_ci_method(const std::string& s) {
  for (CiMethod m : {CiMethod::Wald, CiMethod::WaldEff, CiMethod::Baci, CiMethod::BaciF, CiMethod::Paci}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::Usage, "unknown interval method '" + s + "'");
}

void BaciConfig::validate(int l) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Domain, "alpha must lie in (0, 1)");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error(ErrorKind::Domain, "epsilon must lie in (0, 0.5)");
  if (kappa_grid.empty()) throw Error(ErrorKind::Domain, "kappa grid is empty");
  for (double k : kappa_grid) {
    if (!(k > 0.0)) throw Error(ErrorKind::Domain, "kappa grid values must be positive");
  }
  if (!(grid_step > 0.0) || !(grid_halfwidth >= 0.0)) throw Error(ErrorKind::Domain, "invalid mu2 grid");
  if (a.size() != 0 && a.size() != l) throw Error(ErrorKind::DimensionMismatch, "contrast has the wrong dimension");
  if (alpha1 >= alpha) throw Error(ErrorKind::Domain, "alpha1 must be smaller than alpha");
  if (l > 3) throw Error(ErrorKind::Unsupported, "adaptive intervals support l <= 3");
}

Eigen::VectorXd BaciConfig::contrast(int l) const {
  if (a.size() == l) return a;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(l);
  e(0) = 1.0;
  return e;
}

NonregularZone nonregular_zone(double c_gamma, double epsilon, int l) {
  if (!(c_gamma > 0.0)) throw Error(ErrorKind::Domain, "c_gamma must be positive");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorKind::Domain, "epsilon must lie in (0, 1)");
  // F_l(c; m/2) is decreasing in m; find the largest m with F >= epsilon.
  auto F = [&](double m) { return noncentral_chisq_cdf(c_gamma, l, 0.5 * m); };
  NonregularZone z;
  if (F(0.0) < epsilon) {
    z.empty = true;
    return z;
  }
  double lo = 0.0, hi = 1.0;
  while (F(hi) >= epsilon) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw Error(ErrorKind::Convergence, "nonregular zone bracket exceeded 1e12");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, hi); ++it) {
    double mid = 0.5 * (lo + hi);
    (F(mid) >= epsilon ? lo : hi) = mid;
  }
  z.threshold = lo;
  z.empty = lo == 0.0;
  return z;
}

double vn_loglog(int n) {
  if (n < 16) throw Error(ErrorKind::Domain, "log log n needs n >= 16");
  return std::log(std::log(static_cast<double>(n)));
}

double quantile7(std::vector<double> v, double p) {
  if (v.empty()) throw Error(ErrorKind::Precondition, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  double h = (static_cast<double>(v.size()) - 1.0) * p;
  auto lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

double fixed_vn(const BaciConfig& cfg, int n) { return cfg.v_n > 0.0 ? cfg.v_n : vn_loglog(n); }

Interval wald_like(double center, double var, int n, const BaciConfig& cfg, CiMethod method) {
  double z = normal_quantile(1.0 - cfg.alpha / 2.0);
  double half = z * std::sqrt(std::max(0.0, var) / n);
  Interval iv;
  iv.lower = center - half;
  iv.upper = center + half;
  iv.level = 1.0 - cfg.alpha;
  iv.method = method;
  return iv;
}

// Grid of mu2 values used for the sup/inf: a coordinate grid for l = 1, a ray through mu2_hat otherwise.
std::vector<Eigen::VectorXd> mu2_grid(const Eigen::VectorXd& mu2_hat, const BaciConfig& cfg) {
  const int l = static_cast<int>(mu2_hat.size());
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(l);
  if (l == 1) {
    dir(0) = 1.0;
  } else if (mu2_hat.norm() > 0.0) {
    dir = mu2_hat / mu2_hat.norm();
  } else {
    dir(0) = 1.0;
  }
  const int steps = static_cast<int>(std::floor(cfg.grid_halfwidth / cfg.grid_step + 1e-9));
  std::vector<Eigen::VectorXd> grid;
  for (int k = -steps; k <= steps; ++k) grid.push_back(mu2_hat + (k * cfg.grid_step) * dir);
  return grid;
}

Eigen::VectorXd indicator_part(const Eigen::VectorXd& w, double c) {
  return w.squaredNorm() >= c ? w : Eigen::VectorXd::Zero(w.size());
}

}  // namespace

Interval wald_interval(const TapEstimate& tap, const BaciConfig& cfg) {
  const int l = tap.varcomps.dim();
  Eigen::VectorXd a = cfg.contrast(l);
  Interval iv = wald_like(a.dot(tap.points.mu_A), a.dot(tap.varcomps.V_A * a), tap.varcomps.n, cfg, CiMethod::Wald);
  iv.pooled = tap.pooled;
  return iv;
}

Interval wald_eff_interval(const TapEstimate& tap, const BaciConfig& cfg) {
  const int l = tap.varcomps.dim();
  Eigen::VectorXd a = cfg.contrast(l);
  Eigen::VectorXd mu_eff = combine(tap.points, lambda_eff(tap.varcomps));
  Interval iv = wald_like(a.dot(mu_eff), a.dot(tap.varcomps.V_eff * a), tap.varcomps.n, cfg, CiMethod::WaldEff);
  iv.pooled = true;
  return iv;
}

BaciDraws baci_draws(const std::vector<Eigen::VectorXd>& G_A, const std::vector<Eigen::VectorXd>& G_B,
                     const VarComps& vc, const TuningParams& tuning, const Eigen::VectorXd& mu2_hat,
                     const Eigen::VectorXd& a, double T, double v_n, const BaciConfig& cfg) {
  const int Bn = static_cast<int>(G_A.size());
  const int l = vc.dim();
  if (Bn == 0 || static_cast<int>(G_B.size()) != Bn) throw Error(ErrorKind::Precondition, "no bootstrap contrasts");
  if (l > 3) throw Error(ErrorKind::Unsupported, "adaptive intervals support l <= 3");
  const double c = tuning.c_gamma;
  PoolWeights w = pool_weights(tuning.lambda, vc.jac_A, vc.jac_B);
  Eigen::FullPivLU<Eigen::MatrixXd> mlu(vc.M);
  if (!mlu.isInvertible()) throw Error(ErrorKind::Singularity, "M is singular");
  Eigen::RowVectorXd q = a.transpose() * w.omega_B * vc.M;
  Eigen::RowVectorXd rA = a.transpose() * w.omega_A, rB = a.transpose() * w.omega_B;

  std::vector<Eigen::VectorXd> W2(Bn);
  Eigen::VectorXd W2_bar = Eigen::VectorXd::Zero(l), W2_c = Eigen::VectorXd::Zero(l);
  for (int b = 0; b < Bn; ++b) {
    W2[b] = mlu.solve(G_A[b] - G_B[b]);
    W2_bar += W2[b];
    W2_c += indicator_part(W2[b], c);
  }
  W2_bar /= Bn;
  W2_c /= Bn;

  const bool regular = T >= v_n;
  std::vector<Eigen::VectorXd> grid;
  std::vector<double> grid_offset;
  if (!regular) {
    grid = mu2_grid(mu2_hat, cfg);
    for (const auto& m : grid) grid_offset.push_back(m.squaredNorm() > c ? q.dot(m) : 0.0);
  }
  BaciDraws out;
  out.U.resize(Bn);
  out.L.resize(Bn);
  for (int b = 0; b < Bn; ++b) {
    double base = rA.dot(G_A[b]) + rB.dot(G_B[b]) + q.dot(W2_c);
    if (regular) {
      out.U[b] = out.L[b] = base + q.dot(indicator_part(W2[b], c) - W2_c);
      continue;
    }
    Eigen::VectorXd wb = W2[b] - W2_bar;
    double hmax = -std::numeric_limits<double>::infinity(), hmin = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double h = q.dot(indicator_part(grid[g] + wb, c)) - grid_offset[g];
      hmax = std::max(hmax, h);
      hmin = std::min(hmin, h);
    }
    out.U[b] = base + hmax;
    out.L[b] = base + hmin;
  }
  return out;
}

Interval interval_from_draws(double point, const BaciDraws& draws, int n, double alpha) {
  const double rn = std::sqrt(static_cast<double>(n));
  double u = quantile7(draws.U, 1.0 - alpha / 2.0);
  double lq = quantile7(draws.L, alpha / 2.0);
  Interval iv;
  iv.lower = point - u / rn;
  iv.upper = point - lq / rn;
  if (iv.lower > iv.upper) std::swap(iv.lower, iv.upper);
  iv.level = 1.0 - alpha;
  return iv;
}

void baci_contrasts(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg,
                    std::vector<Eigen::VectorXd>* G_A, std::vector<Eigen::VectorXd>* G_B, int* dropped) {
  if (cfg.B < 200) throw Error(ErrorKind::Precondition, "BACI requires B >= 200");
  const BootstrapReplicates* reps = &tap.replicates;
  BootstrapReplicates fresh;
  if (tap.replicates.requested != cfg.B || tap.replicates.size() == 0) {
    BootstrapOptions o;
    o.K = cfg.B;
    o.refit = cfg.refit;
    o.threads = cfg.threads;
    fresh = bootstrap_replicates(data, tap.estimand, tap.points.tau, SeedPlan{cfg.seed}.child(2), o);
    reps = &fresh;
  }
  const double rn = std::sqrt(static_cast<double>(data.n()));
  G_A->clear();
  G_B->clear();
  for (int b = 0; b < reps->size(); ++b) {
    G_A->push_back(rn * (reps->mu_A[b] - tap.points.mu_A));
    G_B->push_back(rn * (reps->mu_B[b] - tap.points.mu_A));
  }
  *dropped = reps->dropped;
}

VnSelection select_vn_double_bootstrap(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg) {
  const int l = tap.varcomps.dim();
  cfg.validate(l);
  if (cfg.B2 < 50) throw Error(ErrorKind::Precondition, "double bootstrap requires B2 >= 50");
  const int inner = cfg.B_inner > 0 ? cfg.B_inner : cfg.B;
  if (static_cast<double>(cfg.B2) * inner > cfg.budget) {
    throw Error(ErrorKind::Budget, "double bootstrap needs " + std::to_string(cfg.B2) + " x " + std::to_string(inner) +
                                       " replicates, above the configured cap");
  }
  const Eigen::VectorXd a = cfg.contrast(l);
  const double truth = a.dot(tap.points.mu_A);
  const int n = data.n();
  const double rn = std::sqrt(static_cast<double>(n));
  const double loglog = vn_loglog(n);
  const int nk = static_cast<int>(cfg.kappa_grid.size());
  const VarComps& vc = tap.varcomps;
  const SeedPlan outer_seeds = SeedPlan{cfg.seed}.child(3);
  const SeedPlan inner_seeds = SeedPlan{cfg.seed}.child(4);

  std::vector<std::vector<char>> covered(cfg.B2, std::vector<char>(nk, 0));
  std::vector<char> ok(cfg.B2, 0);
  parallel_for(cfg.B2, cfg.threads, [&](int o) {
    try {
      Rng rng = outer_seeds.stream(static_cast<std::uint64_t>(o));
      CombinedData d1 = resample(data, rng);
      NuisanceFit tau1 = cfg.refit ? fit_nuisance(d1, tap.estimand, tap.points.tau.strategy) : tap.points.tau;
      if (!tau1.converged) return;
      PointEstimates pe1 = estimate_points(d1, tap.estimand, tau1);
      Eigen::VectorXd eta1 = eta_hat(pe1, d1.n_B());
      double T1 = test_statistic(eta1, vc.Sigma_T);
      Eigen::VectorXd mu2_1 = mu2_from_eta(eta1, vc);
      Eigen::MatrixXd Lam = tap.tuning.lambda * Eigen::MatrixXd::Identity(l, l);
      double pt1 = a.dot(T1 < tap.tuning.c_gamma ? combine(pe1, Lam) : pe1.mu_A);
      BootstrapOptions bo;
      bo.K = inner;
      bo.refit = cfg.refit;
      bo.threads = 1;
      BootstrapReplicates reps = bootstrap_replicates(d1, tap.estimand, tau1, inner_seeds.child(o), bo);
      std::vector<Eigen::VectorXd> GA, GB;
      for (int b = 0; b < reps.size(); ++b) {
        GA.push_back(rn * (reps.mu_A[b] - pe1.mu_A));
        GB.push_back(rn * (reps.mu_B[b] - pe1.mu_A));
      }
      for (int k = 0; k < nk; ++k) {
        BaciDraws dr = baci_draws(GA, GB, vc, tap.tuning, mu2_1, a, T1, cfg.kappa_grid[k] * loglog, cfg);
        covered[o][k] = interval_from_draws(pt1, dr, n, cfg.alpha).covers(truth);
      }
      ok[o] = 1;
    } catch (const Error&) {
      ok[o] = 0;
    }
  });

  VnSelection sel;
  sel.coverage.assign(nk, 0);
  for (int o = 0; o < cfg.B2; ++o) {
    if (!ok[o]) continue;
    ++sel.outer_used;
    for (int k = 0; k < nk; ++k) sel.coverage[k] += covered[o][k];
  }
  if (cfg.B2 - sel.outer_used > 0.02 * cfg.B2) {
    throw Error(ErrorKind::Replicates, "too many failed outer resamples in the double bootstrap");
  }
  std::vector<int> order(nk);
  for (int k = 0; k < nk; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return cfg.kappa_grid[x] < cfg.kappa_grid[y]; });
  for (int i = 1; i < nk; ++i) {
    if (sel.coverage[order[i]] < sel.coverage[order[i - 1]]) ++sel.monotone_violations;
  }
  sel.fallback = true;
  sel.kappa = cfg.kappa_grid[order.back()];
  for (int k : order) {
    if (static_cast<double>(sel.coverage[k]) / cfg.B2 > 1.0 - cfg.alpha) {
      sel.kappa = cfg.kappa_grid[k];
      sel.fallback = false;
      break;
    }
  }
  sel.v_n = sel.kappa * loglog;
  return sel;
}

Interval baci(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg) {
  const int l = tap.varcomps.dim();
  cfg.validate(l);
  const Eigen::VectorXd a = cfg.contrast(l);
  std::vector<Eigen::VectorXd> GA, GB;
  int dropped = 0;
  baci_contrasts(data, tap, cfg, &GA, &GB, &dropped);
  double v_n;
  double kappa = std::numeric_limits<double>::quiet_NaN();
  bool fallback = false;
  if (cfg.vn_mode == VnMode::DoubleBootstrap) {
    VnSelection sel = select_vn_double_bootstrap(data, tap, cfg);
    v_n = sel.v_n;
    kappa = sel.kappa;
    fallback = sel.fallback;
  } else {
    v_n = fixed_vn(cfg, data.n());
  }
  BaciDraws dr = baci_draws(GA, GB, tap.varcomps, tap.tuning, tap.mu2_hat, a, tap.T, v_n, cfg);
  Interval iv = interval_from_draws(a.dot(tap.point), dr, data.n(), cfg.alpha);
  iv.method = cfg.vn_mode == VnMode::DoubleBootstrap ? CiMethod::Baci : CiMethod::BaciF;
  iv.v_n = v_n;
  iv.kappa = kappa;
  iv.kappa_fallback = fallback;
  iv.pooled = tap.pooled;
  iv.nonregular = tap.T < v_n;
  iv.dropped = dropped;
  return iv;
}

Interval paci(const TapEstimate& tap, const BaciConfig& cfg) {
  const VarComps& vc = tap.varcomps;
  const int l = vc.dim();
  cfg.validate(l);
  if (cfg.paci_draws < 100) throw Error(ErrorKind::Precondition, "PACI requires at least 100 draws");
  const Eigen::VectorXd a = cfg.contrast(l);
  const double alpha1 = cfg.alpha1 > 0.0 ? cfg.alpha1 : cfg.alpha / 2.0;
  const double alpha2 = cfg.alpha - alpha1;
  const double v_n = fixed_vn(cfg, vc.n);
  const bool regular = tap.T >= v_n;

  std::vector<Eigen::VectorXd> grid;
  if (regular) {
    grid.push_back(tap.mu2_hat);
  } else {
    const double z = normal_quantile(1.0 - alpha2 / 2.0);
    const int pts = l == 1 ? 41 : (l == 2 ? 21 : 11);
    std::vector<double> offs(pts);
    for (int i = 0; i < pts; ++i) offs[i] = -z + 2.0 * z * i / (pts - 1);
    int total = 1;
    for (int j = 0; j < l; ++j) total *= pts;
    for (int idx = 0; idx < total; ++idx) {
      Eigen::VectorXd m = tap.mu2_hat;
      int r = idx;
      for (int j = 0; j < l; ++j) {
        m(j) += offs[r % pts];
        r /= pts;
      }
      grid.push_back(m);
    }
  }

  PoolWeights w = pool_weights(tap.tuning.lambda, vc.jac_A, vc.jac_B);
  const double c = tap.tuning.c_gamma;
  Eigen::RowVectorXd q = a.transpose() * w.omega_B * vc.M;
  Eigen::RowVectorXd rc = a.transpose() * (vc.L_A - w.omega_B * vc.M);
  Eigen::RowVectorXd re = a.transpose() * psd_sqrt(vc.V_eff);

  Rng rng = SeedPlan{cfg.seed}.child(5).stream(0);
  const int nd = cfg.paci_draws;
  std::vector<double> base(nd);
  std::vector<Eigen::VectorXd> ws(nd);
  for (int k = 0; k < nd; ++k) {
    Eigen::VectorXd zeta = rng.normal_vector(l);
    ws[k] = rng.normal_vector(l);
    base[k] = re.dot(zeta) + rc.dot(ws[k]);
  }
  const double pt = a.dot(tap.point);
  const double rn = std::sqrt(static_cast<double>(vc.n));
  Interval iv;
  iv.lower = std::numeric_limits<double>::infinity();
  iv.upper = -std::numeric_limits<double>::infinity();
  std::vector<double> E(nd);
  for (const auto& m : grid) {
    double qm = q.dot(m);
    for (int k = 0; k < nd; ++k) E[k] = base[k] + q.dot(indicator_part(m + ws[k], c)) - qm;
    iv.lower = std::min(iv.lower, pt - quantile7(E, 1.0 - alpha1 / 2.0) / rn);
    iv.upper = std::max(iv.upper, pt - quantile7(E, alpha1 / 2.0) / rn);
  }
  iv.level = 1.0 - cfg.alpha;
  iv.method = CiMethod::Paci;
  iv.v_n = v_n;
  iv.pooled = tap.pooled;
  iv.nonregular = !regular;
  return iv;
}

}  // namespace tapool
