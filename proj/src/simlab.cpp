#include "tapool/simlab.hpp"

#include "tapool/parallel.hpp"

#include <cmath>

namespace tapool {

SimConfig SimConfig::desk() { return SimConfig{}; }

SimConfig SimConfig::paper() {
  SimConfig c;
  c.N = 100000;
  c.R = 2000;
  c.K = 2000;
  return c;
}

void SimConfig::validate() const {
  if (R <= 0) throw Error(ErrorKind::Precondition, "empty study: the number of replicates must be positive");
  if (N < 1000) throw Error(ErrorKind::Precondition, "population size must be at least 1000");
  if (target_nA <= 0 || target_nB <= 0) throw Error(ErrorKind::Precondition, "sample size targets must be positive");
  if (N < target_nA + target_nB) throw Error(ErrorKind::Precondition, "N must be at least target_nA + target_nB");
  if (K < 50) throw Error(ErrorKind::Precondition, "bootstrap size K must be at least 50");
  if (threads < 1) throw Error(ErrorKind::Precondition, "threads must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Domain, "alpha must lie in (0, 1)");
  if (double_bootstrap_reps < 0 || double_bootstrap_reps > R) {
    throw Error(ErrorKind::Precondition, "double_bootstrap_reps must lie in [0, R]");
  }
}

FinitePopulation generate_population(int N, std::uint64_t seed) {
  if (N < 1000) throw Error(ErrorKind::Precondition, "population size must be at least 1000");
  Rng rng = SeedPlan{seed}.stream(0);
  Eigen::MatrixXd X(N, 3);
  Eigen::VectorXd y(N), u(N);
  for (int i = 0; i < N; ++i) {
    double x1 = rng.normal();
    double x2 = 1.0 + rng.normal();
    double ui = rng.normal();
    double e = rng.normal();
    X(i, 0) = 1.0;
    X(i, 1) = x1;
    X(i, 2) = x2;
    u(i) = ui;
    y(i) = 1.0 + x1 + x2 + ui + ui * ui + e;
  }
  return FinitePopulation(std::move(X), std::move(y), std::move(u));
}

double calibrate_intercept(const Eigen::VectorXd& linear_part, double target) {
  const double N = static_cast<double>(linear_part.size());
  if (!(target > 0.0 && target < N)) throw Error(ErrorKind::Feasibility, "sample size target is infeasible");
  auto expected = [&](double nu) {
    double s = 0.0;
    for (int i = 0; i < linear_part.size(); ++i) s += expit(nu + linear_part(i));
    return s;
  };
  double lo = -60.0, hi = 60.0;
  if (expected(lo) > target || expected(hi) < target) {
    throw Error(ErrorKind::Feasibility, "sample size target cannot be met by any intercept");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    double mid = 0.5 * (lo + hi);
    (expected(mid) < target ? lo : hi) = mid;
  }
  double nu = 0.5 * (lo + hi);
  if (std::abs(expected(nu) - target) > 0.01 * target) {
    throw Error(ErrorKind::Feasibility, "intercept calibration missed the target by more than 1%");
  }
  return nu;
}

namespace {

Eigen::VectorXd linear_A(const FinitePopulation& pop) {
  return 0.2 * pop.X().col(1) + 0.1 * pop.X().col(2);
}

Eigen::VectorXd linear_B(const FinitePopulation& pop, const SimConfig& cfg) {
  const double shift = 0.5 * cfg.b / std::sqrt(static_cast<double>(cfg.target_nB));
  return 0.1 * pop.X().col(1) + 0.2 * pop.X().col(2) + shift * pop.latent_u();
}

Eigen::VectorXd expit_all(const Eigen::VectorXd& t) {
  Eigen::VectorXd out(t.size());
  for (int i = 0; i < t.size(); ++i) out(i) = expit(t(i));
  return out;
}

}  // namespace

Intercepts calibrate_intercepts(const FinitePopulation& pop, const SimConfig& cfg) {
  Intercepts nu;
  nu.nu_A = calibrate_intercept(linear_A(pop), cfg.target_nA);
  nu.nu_B = calibrate_intercept(linear_B(pop, cfg), cfg.target_nB);
  return nu;
}

Eigen::VectorXd inclusion_A(const FinitePopulation& pop, double nu_A) {
  return expit_all(linear_A(pop).array() + nu_A);
}

Eigen::VectorXd inclusion_B(const FinitePopulation& pop, double nu_B, const SimConfig& cfg) {
  return expit_all(linear_B(pop, cfg).array() + nu_B);
}

CombinedData draw_samples(const FinitePopulation& pop, const SimConfig& cfg, std::uint64_t seed, Intercepts* used) {
  Intercepts nu = calibrate_intercepts(pop, cfg);
  if (used) *used = nu;
  Eigen::VectorXd piA = inclusion_A(pop, nu.nu_A);
  Eigen::VectorXd piB = inclusion_B(pop, nu.nu_B, cfg);
  Rng rng_A = SeedPlan{seed}.stream(0);
  Rng rng_B = SeedPlan{seed}.stream(1);
  std::vector<int> ia, ib;
  for (int i = 0; i < pop.size(); ++i) {
    if (rng_A.bernoulli(piA(i))) ia.push_back(i);
    if (rng_B.bernoulli(piB(i))) ib.push_back(i);
  }
  ProbabilitySample A;
  A.X.resize(static_cast<int>(ia.size()), 3);
  A.y.resize(static_cast<int>(ia.size()));
  A.d.resize(static_cast<int>(ia.size()));
  for (std::size_t k = 0; k < ia.size(); ++k) {
    A.X.row(k) = pop.X().row(ia[k]);
    A.y(k) = pop.y()(ia[k]);
    A.d(k) = 1.0 / piA(ia[k]);
  }
  NonProbabilitySample B;
  B.X.resize(static_cast<int>(ib.size()), 3);
  B.y.resize(static_cast<int>(ib.size()));
  for (std::size_t k = 0; k < ib.size(); ++k) {
    B.X.row(k) = pop.X().row(ib[k]);
    B.y(k) = pop.y()(ib[k]);
  }
  return CombinedData::make(std::move(A), std::move(B));
}

// ---------------------------------------------------------------------------

namespace {

const char* strategy_suffix(NuisanceStrategy s) {
  switch (s) {
    case NuisanceStrategy::PseudoMlOlsAB: return "";
    case NuisanceStrategy::PseudoMlOlsB: return ":B";
    case NuisanceStrategy::KhJoint: return ":KH";
  }
  return "";
}

}  // namespace

ReplicateRecord run_replicate(const SimConfig& cfg, int index) {
  ReplicateRecord rec;
  rec.index = index;
  const SeedPlan plan = SeedPlan{cfg.seed}.child(static_cast<std::uint64_t>(index));
  try {
    FinitePopulation pop = generate_population(cfg.N, plan.child(1).master_seed);
    CombinedData data = draw_samples(pop, cfg, plan.child(2).master_seed);
    const Estimand est = Estimand::mean();
    rec.truth = pop.mu_g(est)(0);
    rec.n_A = data.n_A();
    rec.n_B = data.n_B();

    TapOptions opts;
    opts.strategy = NuisanceStrategy::PseudoMlOlsAB;
    opts.variance = cfg.variance;
    opts.boot.K = cfg.K;
    opts.boot.threads = 1;
    opts.seed = plan.child(3).master_seed;
    opts.tune = cfg.tune;
    TapEstimate tap = estimate_tap(data, est, opts);

    rec.T = tap.T;
    rec.pooled = tap.pooled;
    rec.lambda = tap.tuning.lambda;
    rec.c_gamma = tap.tuning.c_gamma;
    rec.estimates["mu_A"] = tap.points.mu_A(0);
    rec.estimates["mu_B_naive"] = data.nonprob.y.mean();
    rec.estimates["mu_bc"] = tap.points.mu_B(0);
    rec.estimates["mu_eff"] = combine(tap.points, lambda_eff(tap.varcomps))(0);
    rec.estimates["mu_tap"] = tap.point(0);

    if (cfg.all_estimators) {
      for (NuisanceStrategy s : {NuisanceStrategy::PseudoMlOlsB, NuisanceStrategy::KhJoint}) {
        TapOptions o = opts;
        o.strategy = s;
        if (s == NuisanceStrategy::KhJoint) o.variance = VarianceMethod::Bootstrap;
        TapEstimate t = estimate_tap(data, est, o);
        std::string sfx = strategy_suffix(s);
        rec.estimates["mu_bc" + sfx] = t.points.mu_B(0);
        rec.estimates["mu_eff" + sfx] = combine(t.points, lambda_eff(t.varcomps))(0);
        rec.estimates["mu_tap" + sfx] = t.point(0);
      }
    }

    BaciConfig bc;
    bc.alpha = cfg.alpha;
    bc.B = cfg.K;
    bc.paci_draws = cfg.paci_draws;
    bc.seed = plan.child(4).master_seed;
    bc.threads = 1;
    for (CiMethod m : cfg.cis) {
      switch (m) {
        case CiMethod::Wald: rec.intervals["wald"] = wald_interval(tap, bc); break;
        case CiMethod::WaldEff: rec.intervals["wald-eff"] = wald_eff_interval(tap, bc); break;
        case CiMethod::BaciF: rec.intervals["baci-f"] = baci(data, tap, bc); break;
        case CiMethod::Paci: rec.intervals["paci"] = paci(tap, bc); break;
        case CiMethod::Baci: break;
      }
    }
    if (index < cfg.double_bootstrap_reps) {
      BaciConfig db = bc;
      db.vn_mode = VnMode::DoubleBootstrap;
      db.B2 = cfg.B2;
      db.B_inner = cfg.B_inner;
      rec.intervals["baci"] = baci(data, tap, db);
    }
  } catch (const Error& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

const EstimatorSummary& StudySummary::estimator(const std::string& name) const {
  for (const auto& e : estimators) {
    if (e.name == name) return e;
  }
  throw Error(ErrorKind::Usage, "no estimator named '" + name + "' in the summary");
}

const CiSummary& StudySummary::interval(const std::string& name) const {
  for (const auto& c : intervals) {
    if (c.name == name) return c;
  }
  throw Error(ErrorKind::Usage, "no interval named '" + name + "' in the summary");
}

StudySummary summarize(const SimConfig& cfg, std::vector<ReplicateRecord> records) {
  StudySummary s;
  s.config = cfg;
  s.records = std::move(records);
  std::map<std::string, std::vector<double>> err;
  std::map<std::string, std::pair<int, std::pair<double, double>>> ci;  // count, (covered, width)
  int ok = 0, pooled = 0;
  double lam = 0.0, cg = 0.0;
  for (const auto& r : s.records) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    ++ok;
    pooled += r.pooled;
    lam += r.lambda;
    cg += r.c_gamma;
    for (const auto& [name, v] : r.estimates) err[name].push_back(v - r.truth);
    for (const auto& [name, iv] : r.intervals) {
      auto& acc = ci[name];
      acc.first += 1;
      acc.second.first += iv.covers(r.truth) ? 1.0 : 0.0;
      acc.second.second += iv.width();
    }
  }
  if (s.failures > 0.02 * static_cast<double>(s.records.size())) {
    throw Error(ErrorKind::Replicates, std::to_string(s.failures) + " of " + std::to_string(s.records.size()) +
                                           " replicates failed (limit 2%)");
  }
  if (ok > 0) {
    s.pooling_rate = static_cast<double>(pooled) / ok;
    s.mean_lambda = lam / ok;
    s.mean_c_gamma = cg / ok;
  }
  for (const auto& [name, e] : err) {
    EstimatorSummary es;
    es.name = name;
    es.count = static_cast<int>(e.size());
    double sum = 0.0, sq = 0.0;
    for (double v : e) {
      sum += v;
      sq += v * v;
    }
    es.bias = sum / es.count;
    double var = 0.0;
    for (double v : e) var += (v - es.bias) * (v - es.bias);
    es.var = var / es.count;
    es.mse = sq / es.count;
    es.bias_se = es.count > 1 ? std::sqrt(var / (es.count - 1) / es.count) : 0.0;
    s.estimators.push_back(es);
  }
  for (const auto& [name, acc] : ci) {
    CiSummary cs;
    cs.name = name;
    cs.count = acc.first;
    cs.coverage = acc.second.first / acc.first;
    cs.width = acc.second.second / acc.first;
    s.intervals.push_back(cs);
  }
  return s;
}

StudySummary run_study(const SimConfig& cfg) {
  cfg.validate();
  std::vector<ReplicateRecord> records(cfg.R);
  parallel_for(cfg.R, cfg.threads, [&](int r) { records[r] = run_replicate(cfg, r); });
  return summarize(cfg, std::move(records));
}

// ---------------------------------------------------------------------------

ToyGrid ToyGrid::defaults() {
  ToyGrid g;
  for (int i = 0; i <= 20; ++i) {
    g.lambdas.push_back(0.5 * i);
    g.c_gammas.push_back(2.5 * i);
  }
  return g;
}

void ToyGrid::validate() const {
  if (lambdas.empty() || c_gammas.empty() || etas.empty()) throw Error(ErrorKind::Usage, "toy grid axes must be nonempty");
  for (double v : lambdas) {
    if (!(v >= 0.0)) throw Error(ErrorKind::Usage, "lambda grid values must be >= 0");
  }
  for (double v : c_gammas) {
    if (!(v >= 0.0)) throw Error(ErrorKind::Usage, "c_gamma grid values must be >= 0");
  }
  if (!(f_B > 0.0 && f_B <= 1.0)) throw Error(ErrorKind::Usage, "f_B must lie in (0, 1]");
}

std::vector<ToyRow> toy_surface(const ToyGrid& grid) {
  grid.validate();
  VarComps vc = VarComps::scalar(grid.V_A, grid.V_B, grid.Gamma, grid.f_B);
  std::vector<ToyRow> rows;
  Eigen::VectorXd eta(1);
  for (double e : grid.etas) {
    eta(0) = e;
    for (double lam : grid.lambdas) {
      for (double c : grid.c_gammas) {
        MseResult m = mse_surface(lam, c, eta, vc);
        rows.push_back({lam, c, e, m.bias(0), m.mse(0, 0)});
      }
    }
  }
  return rows;
}

}  // namespace tapool
