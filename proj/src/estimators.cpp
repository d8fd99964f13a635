#include "tapool/estimators.hpp"

#include "tapool/parallel.hpp"

#include <cmath>
#include <sstream>

namespace tapool {

namespace {

bool is_regression(const Estimand& est) { return est.kind == EstimandKind::RegressionCoef; }

void require_converged(const NuisanceFit& tau) {
  if (!tau.converged) throw Error(ErrorKind::Convergence, "nuisance fit did not converge");
}

double checked_pi(const PropensityModel& pi, const Eigen::VectorXd& x) {
  double p = pi(x);
  if (p < 1e-8) {
    std::ostringstream os;
    os << "propensity " << p << " < 1e-8";
    throw Error(ErrorKind::PropensityUnderflow, os.str());
  }
  return p;
}

Eigen::VectorXd inverse_propensities(const CombinedData& data, const NuisanceFit& tau) {
  PropensityModel pi = tau.propensity();
  Eigen::VectorXd inv(data.n_B());
  for (int i = 0; i < data.n_B(); ++i) inv(i) = 1.0 / checked_pi(pi, data.nonprob.X.row(i).transpose());
  return inv;
}

Eigen::VectorXd checked_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  Eigen::VectorXd x = ldlt.solve(b);
  if (ldlt.info() != Eigen::Success || !x.allFinite()) {
    throw Error(ErrorKind::Divergence, std::string(what) + ": weighted normal equations are singular");
  }
  return x;
}

Eigen::MatrixXd weighted_gram_A(const CombinedData& data) {
  return data.prob.X.transpose() * data.prob.d.asDiagonal() * data.prob.X;
}

Eigen::MatrixXd weighted_gram_B(const CombinedData& data, const Eigen::VectorXd& inv_pi) {
  return data.nonprob.X.transpose() * inv_pi.asDiagonal() * data.nonprob.X;
}

}  // namespace

Eigen::VectorXd estimate_mu_A(const CombinedData& data, const Estimand& est) {
  const auto& A = data.prob;
  if (is_regression(est)) {
    return checked_solve(weighted_gram_A(data), A.X.transpose() * A.d.cwiseProduct(A.y), "design-weighted fit");
  }
  double num = 0.0;
  for (int i = 0; i < A.size(); ++i) num += A.d(i) * est.transform(A.y(i));
  Eigen::VectorXd out(1);
  out(0) = num / A.d.sum();
  return out;
}

Eigen::VectorXd estimate_mu_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau) {
  require_converged(tau);
  const auto& A = data.prob;
  const auto& B = data.nonprob;
  Eigen::VectorXd inv_pi = inverse_propensities(data, tau);
  if (is_regression(est)) {
    Eigen::MatrixXd G = weighted_gram_A(data) + weighted_gram_B(data, inv_pi);
    Eigen::VectorXd rhs = A.X.transpose() * A.d.cwiseProduct(A.y) + B.X.transpose() * inv_pi.cwiseProduct(B.y);
    return checked_solve(G, rhs, "doubly robust fit");
  }
  OutcomeModel m = tau.outcome();
  double num = 0.0;
  for (int i = 0; i < B.size(); ++i) {
    Eigen::VectorXd x = B.X.row(i).transpose();
    num += (est.transform(B.y(i)) - m(x)) * inv_pi(i);
  }
  for (int i = 0; i < A.size(); ++i) num += A.d(i) * m(A.X.row(i).transpose());
  Eigen::VectorXd out(1);
  out(0) = num / data.N_hat();
  if (!std::isfinite(out(0))) throw Error(ErrorKind::Divergence, "doubly robust mean is not finite");
  return out;
}

Eigen::MatrixXd jacobian_A(const CombinedData& data, const Estimand& est) {
  if (!is_regression(est)) return Eigen::MatrixXd::Constant(1, 1, -1.0);
  return -weighted_gram_A(data) / data.N_hat();
}

Eigen::MatrixXd jacobian_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau) {
  if (!is_regression(est)) return Eigen::MatrixXd::Constant(1, 1, -1.0);
  Eigen::VectorXd inv_pi = inverse_propensities(data, tau);
  return -(weighted_gram_A(data) + weighted_gram_B(data, inv_pi)) / data.N_hat();
}

Eigen::VectorXd mean_phi_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                           const Eigen::VectorXd& mu) {
  PhiB phi(est, tau.propensity(), tau.outcome());
  const auto& A = data.prob;
  const auto& B = data.nonprob;
  const int l = est.dim(data.p());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(l);
  if (is_regression(est)) {
    for (int i = 0; i < A.size(); ++i) s += phi.value(A.X.row(i).transpose(), A.y(i), true, A.d(i), false, mu);
    for (int i = 0; i < B.size(); ++i) s += phi.value(B.X.row(i).transpose(), B.y(i), false, 0.0, true, mu);
    return s / data.N_hat();
  }
  // The population sum of -mu is represented by -N_hat * mu.
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < A.size(); ++i) s += phi.value(A.X.row(i).transpose(), A.y(i), true, A.d(i), false, zero);
  for (int i = 0; i < B.size(); ++i) s += phi.value(B.X.row(i).transpose(), B.y(i), false, 0.0, true, zero);
  return s / data.N_hat() - mu;
}

PointEstimates estimate_points(const CombinedData& data, const Estimand& est, const NuisanceFit& tau) {
  PointEstimates pe;
  pe.tau = tau;
  pe.mu_A = estimate_mu_A(data, est);
  pe.mu_B = estimate_mu_B(data, est, tau);
  pe.jac_A = jacobian_A(data, est);
  pe.jac_B = jacobian_B(data, est, tau);
  return pe;
}

PointEstimates estimate_points(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy) {
  NuisanceFit tau = fit_nuisance(data, est, strategy);
  require_converged(tau);
  return estimate_points(data, est, tau);
}

// ---------------------------------------------------------------------------

PoolWeights pool_weights(const Eigen::MatrixXd& Lambda, const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B) {
  const int l = static_cast<int>(jac_A.rows());
  if (Lambda.rows() != l || Lambda.cols() != l || jac_B.rows() != l) {
    throw Error(ErrorKind::DimensionMismatch, "pooling weight inputs have inconsistent dimensions");
  }
  PoolWeights w;
  if (l == 1) {
    double denom = jac_A(0, 0) + Lambda(0, 0) * jac_B(0, 0);
    if (denom == 0.0 || !std::isfinite(denom)) throw Error(ErrorKind::Singularity, "jac_A + Lambda jac_B is singular");
    w.omega_A = Eigen::MatrixXd::Constant(1, 1, jac_A(0, 0) / denom);
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac_A + Lambda * jac_B);
    if (!lu.isInvertible()) throw Error(ErrorKind::Singularity, "jac_A + Lambda jac_B is singular");
    w.omega_A = lu.solve(jac_A);
  }
  w.omega_B = Eigen::MatrixXd::Identity(l, l) - w.omega_A;
  return w;
}

PoolWeights pool_weights(double lambda, const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B) {
  const int l = static_cast<int>(jac_A.rows());
  return pool_weights(Eigen::MatrixXd(lambda * Eigen::MatrixXd::Identity(l, l)), jac_A, jac_B);
}

Eigen::VectorXd estimate_pooled(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                                const Eigen::MatrixXd& Lambda) {
  if (Lambda.isZero(0.0)) return estimate_mu_A(data, est);
  if (is_regression(est)) {
    require_converged(tau);
    const auto& A = data.prob;
    const auto& B = data.nonprob;
    Eigen::VectorXd inv_pi = inverse_propensities(data, tau);
    Eigen::MatrixXd GA = weighted_gram_A(data);
    Eigen::MatrixXd GB = GA + weighted_gram_B(data, inv_pi);
    Eigen::VectorXd rA = A.X.transpose() * A.d.cwiseProduct(A.y);
    Eigen::VectorXd rB = rA + B.X.transpose() * inv_pi.cwiseProduct(B.y);
    Eigen::MatrixXd G = GA + Lambda * GB;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
    if (!lu.isInvertible()) throw Error(ErrorKind::Divergence, "pooled estimating equations are singular");
    return lu.solve(rA + Lambda * rB);
  }
  Eigen::VectorXd mu_A = estimate_mu_A(data, est);
  Eigen::VectorXd mu_B = estimate_mu_B(data, est, tau);
  PoolWeights w = pool_weights(Lambda, jacobian_A(data, est), jacobian_B(data, est, tau));
  return w.omega_A * mu_A + w.omega_B * mu_B;
}

Eigen::VectorXd estimate_pooled(const CombinedData& data, const Estimand& est, const NuisanceFit& tau, double lambda) {
  const int l = est.dim(data.p());
  return estimate_pooled(data, est, tau, Eigen::MatrixXd(lambda * Eigen::MatrixXd::Identity(l, l)));
}

Eigen::VectorXd combine(const PointEstimates& pe, const Eigen::MatrixXd& Lambda) {
  if (Lambda.isZero(0.0)) return pe.mu_A;
  PoolWeights w = pool_weights(Lambda, pe.jac_A, pe.jac_B);
  return w.omega_A * pe.mu_A + w.omega_B * pe.mu_B;
}

// ---------------------------------------------------------------------------

VarComps VarComps::build(const Eigen::MatrixXd& V_A_in, const Eigen::MatrixXd& V_B_in, const Eigen::MatrixXd& Gamma_in,
                         const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B, double f_B, int n) {
  const int l = static_cast<int>(V_A_in.rows());
  if (l < 1 || V_A_in.cols() != l || V_B_in.rows() != l || V_B_in.cols() != l || Gamma_in.rows() != l ||
      Gamma_in.cols() != l || jac_A.rows() != l || jac_B.rows() != l) {
    throw Error(ErrorKind::DimensionMismatch, "variance components have inconsistent dimensions");
  }
  if (!(f_B > 0.0 && f_B < 1.0 + 1e-12)) throw Error(ErrorKind::Domain, "f_B must lie in (0, 1]");
  VarComps vc;
  vc.jac_A = jac_A;
  vc.jac_B = jac_B;
  vc.f_B = f_B;
  vc.n = n;

  Eigen::MatrixXd K(2 * l, 2 * l);
  K << V_A_in, Gamma_in, Gamma_in.transpose(), V_B_in;
  bool changed = false;
  Eigen::MatrixXd Kp = psd_project(K, &changed);
  vc.projected = changed;
  vc.V_A = Kp.topLeftCorner(l, l);
  vc.V_B = Kp.bottomRightCorner(l, l);
  vc.Gamma = changed ? Eigen::MatrixXd(Kp.topRightCorner(l, l)) : Gamma_in;

  vc.S = vc.V_A + vc.V_B - vc.Gamma - vc.Gamma.transpose();
  vc.S = 0.5 * (vc.S + vc.S.transpose()).eval();
  double scale = std::max(vc.V_A.cwiseAbs().maxCoeff(), vc.V_B.cwiseAbs().maxCoeff());
  if (!(min_eigenvalue(vc.S) > 1e-12 * std::max(scale, 1e-300))) {
    throw Error(ErrorKind::Diagnostics,
                "Cauchy-Schwarz guard: V_A + V_B - Gamma - Gamma' is not positive definite after clamping");
  }
  Eigen::LDLT<Eigen::MatrixXd> S_ldlt(vc.S);
  Eigen::MatrixXd DA = vc.V_A - vc.Gamma;              // V_A - Gamma
  Eigen::MatrixXd DB = vc.V_B - vc.Gamma.transpose();  // V_B - Gamma'

  vc.Sigma_T = f_B * jac_B * vc.S * jac_B.transpose();
  vc.Sigma_T = 0.5 * (vc.Sigma_T + vc.Sigma_T.transpose()).eval();

  vc.V_Aeff = DA * S_ldlt.solve(DA.transpose());
  vc.V_Aeff = 0.5 * (vc.V_Aeff + vc.V_Aeff.transpose()).eval();
  vc.V_eff = vc.V_A - vc.V_Aeff;
  vc.V_Beff = vc.V_B - vc.V_eff;

  Eigen::FullPivLU<Eigen::MatrixXd> jb(jac_B);
  if (!jb.isInvertible()) throw Error(ErrorKind::Singularity, "E{dPhi_B/dmu} is singular");
  Eigen::MatrixXd jb_inv = jb.inverse();
  vc.M = -(1.0 / std::sqrt(f_B)) * jb_inv * psd_sqrt(vc.Sigma_T);
  Eigen::MatrixXd SinvM = S_ldlt.solve(vc.M);
  vc.L_A = DA * SinvM;
  vc.L_B = DB * SinvM;

  Eigen::FullPivLU<Eigen::MatrixXd> dblu(DB);
  if (dblu.isInvertible()) vc.Lambda_eff = jac_A * DA * dblu.inverse() * jb_inv;

  Eigen::FullPivLU<Eigen::MatrixXd> dalu(-DA);
  if (dalu.isInvertible()) {
    Eigen::MatrixXd R = -DB.transpose() * dalu.inverse();  // (Gamma' - V_B)(Gamma - V_A)^-1
    vc.Sigma_S = f_B * (R * vc.V_A * R.transpose() + vc.V_B + R * vc.Gamma + vc.Gamma.transpose() * R.transpose());
    vc.Sigma_S = 0.5 * (vc.Sigma_S + vc.Sigma_S.transpose()).eval();
  }
  return vc;
}

VarComps VarComps::scalar(double V_A, double V_B, double Gamma, double f_B, int n) {
  auto s = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
  return build(s(V_A), s(V_B), s(Gamma), s(-1.0), s(-1.0), f_B, n);
}

double VarComps::lambda_eff_scalar() const {
  if (Lambda_eff.size() == 0) return 0.0;
  double v = Lambda_eff.trace() / Lambda_eff.rows();
  return std::isfinite(v) ? std::max(0.0, v) : 0.0;
}

Eigen::MatrixXd lambda_eff(const VarComps& vc) {
  if (vc.Lambda_eff.size() == 0) throw Error(ErrorKind::Singularity, "V_B - Gamma' is singular");
  return vc.Lambda_eff;
}

Eigen::MatrixXd pooled_variance(const VarComps& vc, const PoolWeights& w) {
  Eigen::MatrixXd V = w.omega_A * vc.V_A * w.omega_A.transpose() + w.omega_B * vc.V_B * w.omega_B.transpose() +
                      w.omega_A * vc.Gamma * w.omega_B.transpose() +
                      w.omega_B * vc.Gamma.transpose() * w.omega_A.transpose();
  return 0.5 * (V + V.transpose());
}

// ---------------------------------------------------------------------------

CombinedData resample(const CombinedData& data, Rng& rng) {
  CombinedData out;
  const int nA = data.n_A(), nB = data.n_B(), p = data.p();
  out.prob.X.resize(nA, p);
  out.prob.y.resize(nA);
  out.prob.d.resize(nA);
  for (int i = 0; i < nA; ++i) {
    auto j = static_cast<int>(rng.below(nA));
    out.prob.X.row(i) = data.prob.X.row(j);
    out.prob.y(i) = data.prob.y(j);
    out.prob.d(i) = data.prob.d(j);
  }
  out.nonprob.X.resize(nB, p);
  out.nonprob.y.resize(nB);
  for (int i = 0; i < nB; ++i) {
    auto j = static_cast<int>(rng.below(nB));
    out.nonprob.X.row(i) = data.nonprob.X.row(j);
    out.nonprob.y(i) = data.nonprob.y(j);
  }
  return out;
}

BootstrapReplicates bootstrap_replicates(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                                         const SeedPlan& seeds, const BootstrapOptions& opts) {
  if (opts.K < 2) throw Error(ErrorKind::Precondition, "bootstrap needs at least 2 replicates");
  std::vector<Eigen::VectorXd> a(opts.K), b(opts.K);
  std::vector<char> ok(opts.K, 0);
  parallel_for(opts.K, opts.threads, [&](int r) {
    Rng rng = seeds.stream(static_cast<std::uint64_t>(r));
    CombinedData boot = resample(data, rng);
    try {
      NuisanceFit t = opts.refit ? fit_nuisance(boot, est, tau.strategy) : tau;
      a[r] = estimate_mu_A(boot, est);
      b[r] = estimate_mu_B(boot, est, t);
      ok[r] = a[r].allFinite() && b[r].allFinite();
    } catch (const Error&) {
      ok[r] = 0;
    }
  });
  BootstrapReplicates reps;
  reps.requested = opts.K;
  for (int r = 0; r < opts.K; ++r) {
    if (ok[r]) {
      reps.mu_A.push_back(std::move(a[r]));
      reps.mu_B.push_back(std::move(b[r]));
    } else {
      ++reps.dropped;
    }
  }
  if (reps.dropped > opts.max_drop_fraction * opts.K) {
    throw Error(ErrorKind::Replicates, std::to_string(reps.dropped) + " of " + std::to_string(opts.K) +
                                           " bootstrap replicates failed (limit 2%)");
  }
  return reps;
}

VarComps varcomps_from_replicates(const BootstrapReplicates& reps, const PointEstimates& pe, const CombinedData& data) {
  const int K = reps.size();
  if (reps.requested < 50) throw Error(ErrorKind::Precondition, "variance bootstrap requires K >= 50");
  if (K < 2) throw Error(ErrorKind::Replicates, "too few successful bootstrap replicates");
  const int l = static_cast<int>(reps.mu_A[0].size());
  Eigen::VectorXd ma = Eigen::VectorXd::Zero(l), mb = Eigen::VectorXd::Zero(l);
  for (int r = 0; r < K; ++r) {
    ma += reps.mu_A[r];
    mb += reps.mu_B[r];
  }
  ma /= K;
  mb /= K;
  Eigen::MatrixXd VA = Eigen::MatrixXd::Zero(l, l), VB = VA, G = VA;
  for (int r = 0; r < K; ++r) {
    Eigen::VectorXd da = reps.mu_A[r] - ma, db = reps.mu_B[r] - mb;
    VA += da * da.transpose();
    VB += db * db.transpose();
    G += da * db.transpose();
  }
  const double s = static_cast<double>(data.n()) / (K - 1);
  VarComps vc = VarComps::build(s * VA, s * VB, s * G, pe.jac_A, pe.jac_B, data.f_B(), data.n());
  vc.replicates_used = K;
  vc.replicates_dropped = reps.dropped;
  return vc;
}

VarComps variance_bootstrap(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy, int K,
                            std::uint64_t seed, const BootstrapOptions& opts) {
  if (K < 50) throw Error(ErrorKind::Precondition, "variance bootstrap requires K >= 50");
  PointEstimates pe = estimate_points(data, est, strategy);
  BootstrapOptions o = opts;
  o.K = K;
  BootstrapReplicates reps = bootstrap_replicates(data, est, pe.tau, SeedPlan{seed}, o);
  return varcomps_from_replicates(reps, pe, data);
}

VarComps variance_plugin(const CombinedData& data, const Estimand& est, const PointEstimates& pe) {
  if (est.kind != EstimandKind::Mean) {
    throw Error(ErrorKind::Unsupported, "plug-in variance is implemented for the mean only; use the bootstrap");
  }
  if (pe.tau.strategy == NuisanceStrategy::KhJoint) {
    throw Error(ErrorKind::Unsupported, "plug-in variance is implemented for pseudo-likelihood nuisances; use the bootstrap");
  }
  const auto& A = data.prob;
  const auto& B = data.nonprob;
  const double Nh = data.N_hat();
  const double n = data.n();
  const double muA = pe.mu_A(0);
  PropensityModel pi = pe.tau.propensity();
  OutcomeModel m = pe.tau.outcome();
  const int p = data.p();

  Eigen::VectorXd piB(B.size()), mB(B.size());
  for (int i = 0; i < B.size(); ++i) {
    Eigen::VectorXd x = B.X.row(i).transpose();
    piB(i) = checked_pi(pi, x);
    mB(i) = m(x);
  }
  Eigen::VectorXd piA(A.size()), mA(A.size());
  for (int i = 0; i < A.size(); ++i) {
    Eigen::VectorXd x = A.X.row(i).transpose();
    piA(i) = pi(x);
    mA(i) = m(x);
  }

  double h = 0.0;
  for (int i = 0; i < B.size(); ++i) h += (B.y(i) - mB(i)) / piB(i);
  h /= Nh;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < A.size(); ++i) {
    Eigen::VectorXd x = A.X.row(i).transpose();
    H += A.d(i) * piA(i) * (1.0 - piA(i)) * x * x.transpose();
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < B.size(); ++i) {
    g += (1.0 - piB(i)) / piB(i) * (B.y(i) - mB(i) - h) * B.X.row(i).transpose();
  }
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  if (H.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    b = ldlt.solve(g);
    if (!b.allFinite()) throw Error(ErrorKind::Singularity, "plug-in variance: propensity information matrix is singular");
  }

  double vB_np = 0.0;
  for (int i = 0; i < B.size(); ++i) {
    double delta = (B.y(i) - mB(i) - h) / piB(i) - b.dot(B.X.row(i).transpose());
    vB_np += (1.0 - piB(i)) * delta * delta;
  }
  double m_bar = A.d.dot(mA) / Nh;
  Eigen::VectorXd dt(A.size()), ea(A.size());
  for (int i = 0; i < A.size(); ++i) {
    double t = piA(i) * b.dot(A.X.row(i).transpose()) + mA(i) - m_bar;
    dt(i) = A.d(i) * t;
    ea(i) = A.d(i) * (A.y(i) - muA);
  }
  dt.array() -= dt.mean();
  const double c = n / (Nh * Nh);
  double VA = c * ea.squaredNorm();
  double VB = c * (vB_np + dt.squaredNorm());
  double G = c * ea.dot(dt);
  auto s = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
  return VarComps::build(s(VA), s(VB), s(G), pe.jac_A, pe.jac_B, data.f_B(), data.n());
}

}  // namespace tapool
