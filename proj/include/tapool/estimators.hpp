#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "tapool/datamodel.hpp"
#include "tapool/numkernel.hpp"
#include "tapool/nuisance.hpp"

namespace tapool {

struct PointEstimates {
  Eigen::VectorXd mu_A;
  Eigen::VectorXd mu_B;
  NuisanceFit tau;
  Eigen::MatrixXd jac_A;  // N_hat^-1 sum dPhi_A/dmu
  Eigen::MatrixXd jac_B;  // N_hat^-1 sum dPhi_B/dmu
};

Eigen::VectorXd estimate_mu_A(const CombinedData& data, const Estimand& est);
Eigen::VectorXd estimate_mu_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau);
Eigen::MatrixXd jacobian_A(const CombinedData& data, const Estimand& est);
Eigen::MatrixXd jacobian_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau);
PointEstimates estimate_points(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy);
// Point estimates with the nuisance parameters held fixed.
PointEstimates estimate_points(const CombinedData& data, const Estimand& est, const NuisanceFit& tau);

// N_hat^-1 sum Phi_B over both samples at mu.
Eigen::VectorXd mean_phi_B(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                           const Eigen::VectorXd& mu);

struct PoolWeights {
  Eigen::MatrixXd omega_A;
  Eigen::MatrixXd omega_B;
};

PoolWeights pool_weights(const Eigen::MatrixXd& Lambda, const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B);
PoolWeights pool_weights(double lambda, const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B);

Eigen::VectorXd estimate_pooled(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                                const Eigen::MatrixXd& Lambda);
Eigen::VectorXd estimate_pooled(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                                double lambda);
// Pooled estimate from already computed point estimates (omega-weighted average).
Eigen::VectorXd combine(const PointEstimates& pe, const Eigen::MatrixXd& Lambda);

// ---------------------------------------------------------------------------

// Variance components, n-scaled. Derived members follow the limiting
// representation Z1 = P + L_A W2, Z1 - Z2 = M W2 with W2 ~ N(mu2, I).
struct VarComps {
  Eigen::MatrixXd V_A, V_B, Gamma, jac_A, jac_B;
  double f_B = 0.5;
  int n = 0;

  Eigen::MatrixXd S;           // V_A + V_B - Gamma - Gamma'
  Eigen::MatrixXd Sigma_T;     // f_B J_B S J_B'
  Eigen::MatrixXd Sigma_S;     // empty when V_A - Gamma is singular
  Eigen::MatrixXd V_eff;       // Schur form V_A - (V_A - Gamma) S^-1 (V_A - Gamma)'
  Eigen::MatrixXd V_Aeff;      // V_A - V_eff
  Eigen::MatrixXd V_Beff;      // V_B - V_eff
  Eigen::MatrixXd Lambda_eff;  // empty when V_B - Gamma' is singular
  Eigen::MatrixXd M;           // -f_B^-1/2 J_B^-1 Sigma_T^1/2
  Eigen::MatrixXd L_A;         // (V_A - Gamma) S^-1 M
  Eigen::MatrixXd L_B;         // (V_B - Gamma') S^-1 M
  bool projected = false;      // block matrix was clamped to PSD
  int replicates_used = 0;
  int replicates_dropped = 0;

  int dim() const { return static_cast<int>(V_A.rows()); }
  // Clamps, checks the Cauchy-Schwarz guard, and fills the derived members.
  static VarComps build(const Eigen::MatrixXd& V_A, const Eigen::MatrixXd& V_B, const Eigen::MatrixXd& Gamma,
                        const Eigen::MatrixXd& jac_A, const Eigen::MatrixXd& jac_B, double f_B, int n);
  // Scalar mean case (jac_A = jac_B = -1).
  static VarComps scalar(double V_A, double V_B, double Gamma, double f_B = 1.0, int n = 1);
  // Scalar summary of Lambda_eff used as a tuning start (trace / l, clamped at 0).
  double lambda_eff_scalar() const;
};

Eigen::MatrixXd lambda_eff(const VarComps& vc);
// Asymptotic variance of the pooled estimator with weights (omega_A, omega_B).
Eigen::MatrixXd pooled_variance(const VarComps& vc, const PoolWeights& w);

struct BootstrapOptions {
  int K = 500;
  bool refit = true;  // re-fit nuisances inside each replicate
  int threads = 1;
  double max_drop_fraction = 0.02;
};

struct BootstrapReplicates {
  std::vector<Eigen::VectorXd> mu_A;
  std::vector<Eigen::VectorXd> mu_B;
  int requested = 0;
  int dropped = 0;

  int size() const { return static_cast<int>(mu_A.size()); }
};

// Resamples n_A rows of A and n_B rows of B with replacement per replicate.
CombinedData resample(const CombinedData& data, Rng& rng);

BootstrapReplicates bootstrap_replicates(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                                         const SeedPlan& seeds, const BootstrapOptions& opts);
// n * sample (co)variances of the replicates with divisor K - 1.
VarComps varcomps_from_replicates(const BootstrapReplicates& reps, const PointEstimates& pe, const CombinedData& data);
VarComps variance_bootstrap(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy, int K,
                            std::uint64_t seed, const BootstrapOptions& opts = {});
// Influence-function plug-in variance for the mean with pseudo-likelihood propensity.
VarComps variance_plugin(const CombinedData& data, const Estimand& est, const PointEstimates& pe);

}  // namespace tapool
