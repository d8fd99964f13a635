#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>

#include "tapool/datamodel.hpp"

namespace tapool {

enum class NuisanceStrategy { PseudoMlOlsB, PseudoMlOlsAB, KhJoint };

std::string to_string(NuisanceStrategy s);
NuisanceStrategy parse_strategy(const std::string& s);

enum class OutcomeScope { BOnly, AAndB };

struct NuisanceFit {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;  // empty for the regression estimand
  NuisanceStrategy strategy = NuisanceStrategy::PseudoMlOlsAB;
  OutcomeLink link = OutcomeLink::Identity;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // max |estimating-equation residual| at the returned parameters

  PropensityModel propensity() const { return {alpha}; }
  OutcomeModel outcome() const { return {beta, link}; }
};

struct SolveInfo {
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Residual tolerance used by every nuisance solver: max |score| < 1e-10 * n.
double nuisance_tolerance(const CombinedData& data);

// Pseudo-likelihood score sum_B x - sum_A d pi_B(x; alpha) x.
Eigen::VectorXd pseudo_ml_score(const CombinedData& data, const Eigen::VectorXd& alpha);
Eigen::VectorXd fit_propensity_pseudo_ml(const CombinedData& data, SolveInfo* info = nullptr);

// Linear least squares (identity link) or logistic score (binary outcomes) on the chosen scope.
Eigen::VectorXd outcome_score(const CombinedData& data, OutcomeScope scope, const Estimand& est,
                              const Eigen::VectorXd& beta);
Eigen::VectorXd fit_outcome_ols(const CombinedData& data, OutcomeScope scope, const Estimand& est = Estimand::mean(),
                                SolveInfo* info = nullptr);

// Stacked residual (calibration block, weighted outcome block).
Eigen::VectorXd kh_residual(const CombinedData& data, const Estimand& est, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& beta);
std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_kh_joint(const CombinedData& data,
                                                         const Estimand& est = Estimand::mean(),
                                                         SolveInfo* info = nullptr);

NuisanceFit fit_nuisance(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy);

}  // namespace tapool
