#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tapool/adaptive_ci.hpp"
#include "tapool/datamodel.hpp"
#include "tapool/tap.hpp"

namespace tapool {

enum class Scale { Desk, Paper };

struct SimConfig {
  int N = 20000;
  int target_nA = 600;
  int target_nB = 5000;
  double b = 0.0;
  int R = 500;
  std::uint64_t seed = 2024;
  int K = 500;  // bootstrap size for the variance components and BACI
  VarianceMethod variance = VarianceMethod::Bootstrap;
  bool all_estimators = false;  // adds the ":B" and ":KH" nuisance variants
  std::vector<CiMethod> cis{CiMethod::Wald, CiMethod::WaldEff, CiMethod::BaciF, CiMethod::Paci};
  int double_bootstrap_reps = 0;  // replicates on which BACI with double-bootstrap v_n also runs
  int B2 = 50;
  int B_inner = 100;
  int paci_draws = 2000;
  double alpha = 0.05;
  TuneOptions tune{};
  int threads = 1;

  static SimConfig desk();
  static SimConfig paper();
  void validate() const;
};

// Population with X = (1, X1, X2), Y = 1 + X1 + X2 + u + u^2 + e.
FinitePopulation generate_population(int N, std::uint64_t seed);

struct Intercepts {
  double nu_A = 0.0;
  double nu_B = 0.0;
};

// Bisection on the expected sample sizes over the realized population.
double calibrate_intercept(const Eigen::VectorXd& linear_part, double target);
Intercepts calibrate_intercepts(const FinitePopulation& pop, const SimConfig& cfg);
Eigen::VectorXd inclusion_A(const FinitePopulation& pop, double nu_A);
Eigen::VectorXd inclusion_B(const FinitePopulation& pop, double nu_B, const SimConfig& cfg);
CombinedData draw_samples(const FinitePopulation& pop, const SimConfig& cfg, std::uint64_t seed,
                          Intercepts* used = nullptr);

struct ReplicateRecord {
  int index = 0;
  bool failed = false;
  std::string error;
  double truth = 0.0;
  int n_A = 0;
  int n_B = 0;
  double T = 0.0;
  bool pooled = false;
  double lambda = 0.0;
  double c_gamma = 0.0;
  std::map<std::string, double> estimates;
  std::map<std::string, Interval> intervals;
};

struct EstimatorSummary {
  std::string name;
  int count = 0;
  double bias = 0.0;
  double var = 0.0;  // divisor = count
  double mse = 0.0;
  double bias_se = 0.0;  // Monte Carlo standard error of the bias
};

struct CiSummary {
  std::string name;
  int count = 0;
  double coverage = 0.0;
  double width = 0.0;
};

struct StudySummary {
  SimConfig config;
  std::vector<ReplicateRecord> records;
  std::vector<EstimatorSummary> estimators;
  std::vector<CiSummary> intervals;
  int failures = 0;
  double pooling_rate = 0.0;
  double mean_lambda = 0.0;
  double mean_c_gamma = 0.0;

  const EstimatorSummary& estimator(const std::string& name) const;
  const CiSummary& interval(const std::string& name) const;
};

ReplicateRecord run_replicate(const SimConfig& cfg, int index);
StudySummary summarize(const SimConfig& cfg, std::vector<ReplicateRecord> records);
StudySummary run_study(const SimConfig& cfg);

struct ToyGrid {
  double V_A = 2.0;
  double V_B = 1.0;
  double Gamma = 0.5;
  double f_B = 1.0;
  std::vector<double> lambdas;
  std::vector<double> c_gammas;
  std::vector<double> etas{0.0, 0.5, 1.5};

  static ToyGrid defaults();  // lambda 0..10 and c 0..50, 21 points each
  void validate() const;
};

struct ToyRow {
  double lambda, c_gamma, eta, bias, mse;
};

std::vector<ToyRow> toy_surface(const ToyGrid& grid);

}  // namespace tapool
