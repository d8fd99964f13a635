#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>

#include "tapool/datamodel.hpp"
#include "tapool/estimators.hpp"
#include "tapool/numkernel.hpp"
#include "tapool/nuisance.hpp"

namespace tapool {

// n_B^1/2 N_hat^-1 sum Phi_B at mu_A.
Eigen::VectorXd eta_hat(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                        const Eigen::VectorXd& mu_A);
// Same quantity from point estimates, using linearity of Phi_B in mu: n_B^1/2 J_B (mu_A - mu_B).
Eigen::VectorXd eta_hat(const PointEstimates& pe, int n_B);

// T = eta' Sigma_T^-1 eta.
double test_statistic(const Eigen::VectorXd& eta, const Eigen::MatrixXd& Sigma_T);
double test_statistic(const CombinedData& data, const Estimand& est, const NuisanceFit& tau,
                      const Eigen::VectorXd& mu_A, const Eigen::MatrixXd& Sigma_T);

struct LocalMeans {
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu2;
  double xi = 0.0;  // F_l(c_gamma; mu2'mu2 / 2)
};

Eigen::VectorXd mu2_from_eta(const Eigen::VectorXd& eta, const VarComps& vc);
LocalMeans local_means(const Eigen::VectorXd& eta, const VarComps& vc, double c_gamma);

// Limiting bias and MSE of n^1/2 (mu_tap - mu_g) with the mixture decomposition
// mse = xi mse_le + (1 - xi) mse_gt over the events T <= c and T > c.
struct MseResult {
  Eigen::VectorXd bias;
  Eigen::MatrixXd mse;
  double xi = 0.0;
  Eigen::VectorXd bias_le, bias_gt;
  Eigen::MatrixXd mse_le, mse_gt;
};

MseResult mse_surface(double lambda, double c_gamma, const Eigen::VectorXd& eta, const VarComps& vc);

// Scalar closed form with coefficients d0..d5.
struct ScalarMse {
  double bias = 0.0;
  double mse = 0.0;
  double xi = 0.0;
  std::array<double, 6> d{};
};

ScalarMse mse_surface_scalar(double lambda, double c_gamma, double eta, const VarComps& vc);

struct TuneOptions {
  double lambda_max = 50.0;
  double c_max = 50.0;
  int scan_points = 0;  // per axis of an optional coarse start scan; < 2 disables it
  NelderMeadOptions nm{};
};

struct TuningParams {
  double lambda = 0.0;
  double c_gamma = 0.0;
  double mse = 0.0;  // trace of the limiting MSE at the optimum
  bool warning = false;
  bool lambda_unbounded = false;
  bool c_unbounded = false;
};

TuningParams tune(const Eigen::VectorXd& eta_hat, const VarComps& vc, const TuneOptions& opts = {});

enum class VarianceMethod { Bootstrap, Plugin };

struct TapOptions {
  NuisanceStrategy strategy = NuisanceStrategy::PseudoMlOlsAB;
  VarianceMethod variance = VarianceMethod::Bootstrap;
  BootstrapOptions boot{};
  std::uint64_t seed = 1;
  TuneOptions tune{};
  std::optional<TuningParams> fixed_tuning;
};

struct TapEstimate {
  Estimand estimand;
  Eigen::VectorXd point;
  double T = 0.0;
  bool pooled = false;
  TuningParams tuning;
  Eigen::VectorXd eta_hat;
  Eigen::VectorXd mu2_hat;
  PointEstimates points;
  VarComps varcomps;
  BootstrapReplicates replicates;  // empty for the plug-in variance
};

// Pretest, tuning and pooling given fitted points and variance components.
TapEstimate finish_tap(const CombinedData& data, const Estimand& est, PointEstimates pe, VarComps vc,
                       const TapOptions& opts);
TapEstimate estimate_tap(const CombinedData& data, const Estimand& est, const TapOptions& opts = {});

}  // namespace tapool
