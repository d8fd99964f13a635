#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tapool/datamodel.hpp"
#include "tapool/estimators.hpp"
#include "tapool/tap.hpp"

namespace tapool {

enum class VnMode { FixedLogLog, DoubleBootstrap };
enum class CiMethod { Wald, WaldEff, Baci, BaciF, Paci };

std::string to_string(CiMethod m);
CiMethod parse_ci_method(const std::string& s);

struct BaciConfig {
  double alpha = 0.05;
  double epsilon = 0.05;
  VnMode vn_mode = VnMode::FixedLogLog;
  std::vector<double> kappa_grid{2, 4, 10, 20, 30};
  int B = 2000;
  int B2 = 100;
  int B_inner = 0;  // inner size of the double bootstrap; 0 means B
  double grid_halfwidth = 6.0;
  double grid_step = 0.25;
  Eigen::VectorXd a;        // contrast; empty means the first unit vector
  double v_n = 0.0;         // fixed threshold override when > 0, otherwise log log n
  double alpha1 = -1.0;     // PACI split alpha = alpha1 + alpha2; negative means alpha / 2
  int paci_draws = 2000;
  int threads = 1;
  bool refit = true;
  std::uint64_t seed = 7;
  double budget = 1e6;      // cap on outer x inner double-bootstrap replicates

  void validate(int l) const;
  Eigen::VectorXd contrast(int l) const;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  CiMethod method = CiMethod::Wald;
  double v_n = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  bool kappa_fallback = false;
  bool pooled = false;
  bool nonregular = false;  // T < v_n: the sup/inf (or union) branch was used
  int dropped = 0;

  double width() const { return upper - lower; }
  bool covers(double v) const { return lower <= v && v <= upper; }
};

struct NonregularZone {
  double threshold = 0.0;  // b*: the zone is mu2'mu2 in [0, b*]
  bool empty = false;
};

// Largest m with P(chi2_l(m/2) >= c) <= 1 - epsilon, by bisection.
NonregularZone nonregular_zone(double c_gamma, double epsilon, int l = 1);

double vn_loglog(int n);

// Type-7 sample quantile.
double quantile7(std::vector<double> v, double p);

Interval wald_interval(const TapEstimate& tap, const BaciConfig& cfg);
Interval wald_eff_interval(const TapEstimate& tap, const BaciConfig& cfg);

// Bootstrap bounds U^(b), L^(b) from the replicate contrasts
// G_A = n^1/2 (mu_A^(b) - mu_A), G_B = n^1/2 (mu_B^(b) - mu_A).
struct BaciDraws {
  std::vector<double> U;
  std::vector<double> L;
};

BaciDraws baci_draws(const std::vector<Eigen::VectorXd>& G_A, const std::vector<Eigen::VectorXd>& G_B,
                     const VarComps& vc, const TuningParams& tuning, const Eigen::VectorXd& mu2_hat,
                     const Eigen::VectorXd& a, double T, double v_n, const BaciConfig& cfg);
Interval interval_from_draws(double point, const BaciDraws& draws, int n, double alpha);

// Bootstrap contrasts for BACI; reuses the replicates stored in `tap` when they match B.
void baci_contrasts(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg,
                    std::vector<Eigen::VectorXd>* G_A, std::vector<Eigen::VectorXd>* G_B, int* dropped);

struct VnSelection {
  double v_n = 0.0;
  double kappa = 0.0;
  bool fallback = false;
  std::vector<int> coverage;  // per kappa, over the outer resamples
  int outer_used = 0;
  int monotone_violations = 0;
};

VnSelection select_vn_double_bootstrap(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg);

// BACI-F for the fixed mode, BACI with double-bootstrap v_n otherwise.
Interval baci(const CombinedData& data, const TapEstimate& tap, const BaciConfig& cfg);
Interval paci(const TapEstimate& tap, const BaciConfig& cfg);

}  // namespace tapool
