#include "tapool/tap.hpp"

#include <cmath>
#include <limits>

namespace tapool {

Eigen::VectorXd eta_hat(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                        const Eigen::VectorXd& mu_A) {
  return std::sqrt(static_cast<double>(data.n_B())) * mean_phi_B(data, est, tau, mu_A);
}

Eigen::VectorXd eta_hat(const PointEstimates& pe, int n_B) {
  return std::sqrt(static_cast<double>(n_B)) * pe.jac_B * (pe.mu_A - pe.mu_B);
}

double test_statistic(const Eigen::VectorXd& eta, const Eigen::MatrixXd& Sigma_T) {
  if (Sigma_T.rows() != eta.size() || Sigma_T.cols() != eta.size()) {
    throw Error(ErrorKind::DimensionMismatch, "eta and Sigma_T have inconsistent dimensions");
  }
  if (!(min_eigenvalue(Sigma_T) > 0.0)) throw Error(ErrorKind::Singularity, "Sigma_T is not positive definite");
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma_T);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::Singularity, "Sigma_T is not positive definite");
  return std::max(0.0, eta.dot(llt.solve(eta)));
}

double test_statistic(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                      const Eigen::VectorXd& mu_A, const Eigen::MatrixXd& Sigma_T) {
  return test_statistic(eta_hat(data, est, tau, mu_A), Sigma_T);
}

Eigen::VectorXd mu2_from_eta(const Eigen::VectorXd& eta, const VarComps& vc) {
  if (eta.size() != vc.dim()) throw Error(ErrorKind::DimensionMismatch, "eta has the wrong dimension");
  return -pd_inv_sqrt(vc.Sigma_T) * eta;
}

LocalMeans local_means(const Eigen::VectorXd& eta, const VarComps& vc, double c_gamma) {
  LocalMeans lm;
  lm.mu2 = mu2_from_eta(eta, vc);
  lm.mu1 = pd_inv_sqrt(vc.V_eff) * vc.L_A * lm.mu2;
  lm.xi = noncentral_chisq_cdf(std::max(0.0, c_gamma), vc.dim(), 0.5 * lm.mu2.squaredNorm());
  return lm;
}

namespace {

void check_tuning(double lambda, double c_gamma) {
  if (!(lambda >= 0.0) || !(c_gamma >= 0.0)) {
    throw Error(ErrorKind::Domain, "tuning parameters must be nonnegative");
  }
}

}  // namespace

MseResult mse_surface(double lambda, double c_gamma, const Eigen::VectorXd& eta, const VarComps& vc) {
  check_tuning(lambda, c_gamma);
  const int l = vc.dim();
  MseResult r;
  if (c_gamma == 0.0) {
    // Never pools: the estimator is mu_A.
    r.bias = Eigen::VectorXd::Zero(l);
    r.mse = vc.V_A;
    r.xi = 0.0;
    r.bias_le = r.bias_gt = r.bias;
    r.mse_le = r.mse_gt = r.mse;
    return r;
  }
  PoolWeights w = pool_weights(lambda, vc.jac_A, vc.jac_B);
  Eigen::VectorXd mu2 = mu2_from_eta(eta, vc);
  Eigen::VectorXd p = -vc.L_A * mu2;
  Eigen::MatrixXd C = vc.L_A - w.omega_B * vc.M;

  PartialMoments le = partial_moments(mu2, TruncRegion{0.0, c_gamma});
  PartialMoments gt = partial_moments(mu2, TruncRegion{c_gamma, std::numeric_limits<double>::infinity()});

  Eigen::VectorXd b_le = p * le.mass + C * le.first;
  Eigen::VectorXd b_gt = p * gt.mass + vc.L_A * gt.first;
  Eigen::VectorXd cm_le = C * le.first, lm_gt = vc.L_A * gt.first;
  Eigen::MatrixXd e_le = le.mass * p * p.transpose() + C * le.second * C.transpose() + p * cm_le.transpose() +
                         cm_le * p.transpose();
  Eigen::MatrixXd e_gt = gt.mass * p * p.transpose() + vc.L_A * gt.second * vc.L_A.transpose() +
                         p * lm_gt.transpose() + lm_gt * p.transpose();

  r.bias = b_le + b_gt;
  r.mse = vc.V_eff + e_le + e_gt;
  r.mse = 0.5 * (r.mse + r.mse.transpose()).eval();
  r.xi = le.mass;
  auto branch = [&](double mass, const Eigen::VectorXd& b, const Eigen::MatrixXd& e, Eigen::VectorXd& bo,
                    Eigen::MatrixXd& mo) {
    if (mass < 1e-12) {
      bo = Eigen::VectorXd::Zero(l);
      mo = Eigen::MatrixXd::Zero(l, l);
    } else {
      bo = b / mass;
      mo = vc.V_eff + e / mass;
    }
  };
  branch(le.mass, b_le, e_le, r.bias_le, r.mse_le);
  branch(gt.mass, b_gt, e_gt, r.bias_gt, r.mse_gt);
  return r;
}

ScalarMse mse_surface_scalar(double lambda, double c_gamma, double eta, const VarComps& vc) {
  check_tuning(lambda, c_gamma);
  if (vc.dim() != 1) throw Error(ErrorKind::DimensionMismatch, "scalar MSE form requires l = 1");
  ScalarMse r;
  const double VA = vc.V_A(0, 0), VB = vc.V_B(0, 0), G0 = vc.Gamma(0, 0);
  if (c_gamma == 0.0) {
    r.mse = VA;
    return r;
  }
  if (VB - G0 == 0.0) throw Error(ErrorKind::Singularity, "V_B - Gamma is zero");
  PoolWeights w = pool_weights(lambda, vc.jac_A, vc.jac_B);
  const double wA = w.omega_A(0, 0), wB = w.omega_B(0, 0);
  const double s_e = std::sqrt(std::max(0.0, vc.V_eff(0, 0)));
  const double s_A = vc.L_A(0, 0), s_B = vc.L_B(0, 0);
  Eigen::VectorXd e1 = Eigen::VectorXd::Constant(1, eta);
  const double mu2 = mu2_from_eta(e1, vc)(0);
  const double mu1 = s_e > 0.0 ? s_A * mu2 / s_e : 0.0;
  const double delta = 0.5 * mu2 * mu2;
  const double F3 = noncentral_chisq_cdf(c_gamma, 3, delta);
  const double F5 = noncentral_chisq_cdf(c_gamma, 5, delta);
  const double G = F3 + mu2 * mu2 * F5;
  const double Lambda_r = (VA - G0) / (VB - G0);

  auto& d = r.d;
  d[0] = -wB / std::sqrt(vc.f_B) / vc.jac_B(0, 0) * F3;
  d[1] = 1.0 + mu1 * mu1;
  d[2] = wB * (wB - 2.0 * wA * Lambda_r) * G;
  d[3] = (1.0 - F3 + mu2 * mu2 * (1.0 - F5)) + wA * wA * G;
  d[4] = 2.0 * wB * mu1 * mu2 * F3;
  d[5] = -2.0 * mu1 * mu2 * (1.0 - F3 + wA * F3);
  r.bias = eta * d[0];
  r.mse = vc.V_eff(0, 0) * d[1] + vc.V_Beff(0, 0) * d[2] + vc.V_Aeff(0, 0) * d[3] + s_e * (s_B * d[4] + s_A * d[5]);
  r.xi = noncentral_chisq_cdf(c_gamma, 1, delta);
  return r;
}

TuningParams tune(const Eigen::VectorXd& eta, const VarComps& vc, const TuneOptions& opts) {
  if (!(opts.lambda_max > 0.0) || !(opts.c_max > 0.0)) throw Error(ErrorKind::Domain, "tuning box must be positive");
  const double zl_max = std::log1p(opts.lambda_max), zc_max = std::log1p(opts.c_max);
  auto clamp = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd c(2);
    c(0) = std::clamp(z(0), 0.0, zl_max);
    c(1) = std::clamp(z(1), 0.0, zc_max);
    return c;
  };
  auto objective = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd zc = clamp(z);
    double v = mse_surface(std::expm1(zc(0)), std::expm1(zc(1)), eta, vc).mse.trace();
    return v + (z - zc).squaredNorm();
  };

  const int l = vc.dim();
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::Vector2d(0.0, 0.0));
  starts.push_back(Eigen::Vector2d(std::log1p(std::min(vc.lambda_eff_scalar(), opts.lambda_max)),
                                   std::log1p(std::min(chisq_quantile(0.95, l), opts.c_max))));
  // Coarse scan of the box; its best cell seeds a third run so that flat regions
  // around lambda = 0 or c = 0 do not trap the search.
  if (opts.scan_points >= 2) {
    const int g = opts.scan_points;
    Eigen::VectorXd zb(2), z(2);
    double fb = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        z << zl_max * i / (g - 1), zc_max * j / (g - 1);
        double f = objective(z);
        if (f < fb) {
          fb = f;
          zb = z;
        }
      }
    }
    starts.push_back(zb);
  }
  NelderMeadResult best;
  bool have = false, warning = false;
  for (const auto& s : starts) {
    NelderMeadResult r = nelder_mead(objective, s, opts.nm);
    warning = warning || r.max_iter_hit;
    if (!have || r.value < best.value - 1e-12 * (1.0 + std::abs(best.value))) {
      best = r;
      have = true;
    }
  }
  Eigen::VectorXd z = clamp(best.argmin);
  TuningParams t;
  t.lambda = std::expm1(z(0));
  t.c_gamma = std::expm1(z(1));
  t.mse = mse_surface(t.lambda, t.c_gamma, eta, vc).mse.trace();
  t.warning = warning;
  t.lambda_unbounded = t.lambda >= (1.0 - 1e-3) * opts.lambda_max;
  t.c_unbounded = t.c_gamma >= (1.0 - 1e-3) * opts.c_max;
  return t;
}

TapEstimate finish_tap(const CombinedData& data, const Estimand& est, PointEstimates pe, VarComps vc,
                       const TapOptions& opts) {
  TapEstimate out;
  out.estimand = est;
  try {
    out.eta_hat = eta_hat(data, est, pe.tau, pe.mu_A);
    out.T = test_statistic(out.eta_hat, vc.Sigma_T);
    out.mu2_hat = mu2_from_eta(out.eta_hat, vc);
  } catch (const Error& e) {
    rethrow_in_stage("pretest", e);
  }
  try {
    out.tuning = opts.fixed_tuning ? *opts.fixed_tuning : tune(out.eta_hat, vc, opts.tune);
    check_tuning(out.tuning.lambda, out.tuning.c_gamma);
  } catch (const Error& e) {
    rethrow_in_stage("tuning", e);
  }
  try {
    out.pooled = out.T < out.tuning.c_gamma;
    out.point = out.pooled ? estimate_pooled(data, est, pe.tau, out.tuning.lambda) : pe.mu_A;
  } catch (const Error& e) {
    rethrow_in_stage("pooling", e);
  }
  out.points = std::move(pe);
  out.varcomps = std::move(vc);
  return out;
}

TapEstimate estimate_tap(const CombinedData& data, const Estimand& est, const TapOptions& opts) {
  NuisanceFit tau;
  try {
    data.validate();
    tau = fit_nuisance(data, est, opts.strategy);
    if (!tau.converged) throw Error(ErrorKind::Convergence, "nuisance solver did not reach the residual tolerance");
  } catch (const Error& e) {
    rethrow_in_stage("nuisance", e);
  }
  PointEstimates pe;
  try {
    pe = estimate_points(data, est, tau);
  } catch (const Error& e) {
    rethrow_in_stage("point-estimates", e);
  }
  VarComps vc;
  BootstrapReplicates reps;
  try {
    if (opts.variance == VarianceMethod::Plugin) {
      vc = variance_plugin(data, est, pe);
    } else {
      if (opts.boot.K < 50) throw Error(ErrorKind::Precondition, "variance bootstrap requires K >= 50");
      reps = bootstrap_replicates(data, est, tau, SeedPlan{opts.seed}.child(1), opts.boot);
      vc = varcomps_from_replicates(reps, pe, data);
    }
  } catch (const Error& e) {
    rethrow_in_stage("variance", e);
  }
  TapEstimate out = finish_tap(data, est, std::move(pe), std::move(vc), opts);
  out.replicates = std::move(reps);
  return out;
}

}  // namespace tapool
