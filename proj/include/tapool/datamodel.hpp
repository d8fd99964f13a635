#pragma once

#include <Eigen/Dense>

#include <cmath>

#include <string>
#include <vector>

#include "tapool/error.hpp"

namespace tapool {

// Covariate matrices always carry a leading intercept column.
struct ProbabilitySample {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd d;  // design weights 1/pi_A

  int size() const { return static_cast<int>(y.size()); }
};

struct NonProbabilitySample {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;

  int size() const { return static_cast<int>(y.size()); }
};

struct CombinedData {
  ProbabilitySample prob;
  NonProbabilitySample nonprob;

  // Validates the invariants and returns the combined data.
  static CombinedData make(ProbabilitySample prob, NonProbabilitySample nonprob);
  void validate() const;

  int n_A() const { return prob.size(); }
  int n_B() const { return nonprob.size(); }
  int n() const { return n_A() + n_B(); }
  double f_B() const { return static_cast<double>(n_B()) / n(); }
  int p() const { return static_cast<int>(prob.X.cols()); }
  // Hajek population-size estimate sum_A d.
  double N_hat() const { return prob.d.sum(); }
};

enum class EstimandKind { Mean, ProportionBelow, RegressionCoef };

struct Estimand {
  EstimandKind kind = EstimandKind::Mean;
  double cutoff = 0.0;

  static Estimand mean() { return {EstimandKind::Mean, 0.0}; }
  static Estimand proportion_below(double c) { return {EstimandKind::ProportionBelow, c}; }
  static Estimand regression() { return {EstimandKind::RegressionCoef, 0.0}; }

  int dim(int p) const { return kind == EstimandKind::RegressionCoef ? p : 1; }
  // Outcome entering the estimating function: y, or 1(y < c).
  double transform(double y) const {
    return kind == EstimandKind::ProportionBelow ? (y < cutoff ? 1.0 : 0.0) : y;
  }
  bool binary_outcome() const { return kind == EstimandKind::ProportionBelow; }
  std::string name() const;
  static Estimand parse(const std::string& kind, double cutoff);
};

// ---------------------------------------------------------------------------
// Working models.

inline double expit(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

struct PropensityModel {
  Eigen::VectorXd alpha;

  double operator()(const Eigen::VectorXd& x) const { return expit(x.dot(alpha)); }
};

enum class OutcomeLink { Identity, Logit };

struct OutcomeModel {
  Eigen::VectorXd beta;
  OutcomeLink link = OutcomeLink::Identity;

  double operator()(const Eigen::VectorXd& x) const {
    double t = x.dot(beta);
    return link == OutcomeLink::Identity ? t : expit(t);
  }
  // d m / d beta.
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    if (link == OutcomeLink::Identity) return x;
    double m = (*this)(x);
    return m * (1.0 - m) * x;
  }
};

// ---------------------------------------------------------------------------
// Estimating functions. Both are linear in mu.

class PhiA {
 public:
  explicit PhiA(Estimand est) : est_(est) {}

  Eigen::VectorXd value(const Eigen::VectorXd& x, double y, double d, const Eigen::VectorXd& mu) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, double y, double d, const Eigen::VectorXd& mu) const;

 private:
  Estimand est_;
};

PhiA phi_A(const Estimand& est);

// Doubly robust function for one population unit with inclusion indicators
// in_A (weight d) and in_B. For the regression estimand the outcome model is unused.
class PhiB {
 public:
  PhiB(Estimand est, PropensityModel pi, OutcomeModel m) : est_(est), pi_(std::move(pi)), m_(std::move(m)) {}

  Eigen::VectorXd value(const Eigen::VectorXd& x, double y, bool in_A, double d, bool in_B,
                        const Eigen::VectorXd& mu) const;
  Eigen::MatrixXd jacobian_mu(const Eigen::VectorXd& x, double y, bool in_A, double d, bool in_B,
                              const Eigen::VectorXd& mu) const;
  // Columns ordered (alpha, beta).
  Eigen::MatrixXd jacobian_tau(const Eigen::VectorXd& x, double y, bool in_A, double d, bool in_B,
                               const Eigen::VectorXd& mu) const;

  const PropensityModel& propensity() const { return pi_; }
  const OutcomeModel& outcome() const { return m_; }

 private:
  double checked_pi(const Eigen::VectorXd& x) const;

  Estimand est_;
  PropensityModel pi_;
  OutcomeModel m_;
};

PhiB phi_B(const Estimand& est, const PropensityModel& pi, const OutcomeModel& m);

// ---------------------------------------------------------------------------
// Finite population used by the simulation lab.

struct ObservedPopulation {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

class FinitePopulation {
 public:
  FinitePopulation(Eigen::MatrixXd X, Eigen::VectorXd y, Eigen::VectorXd u);

  int size() const { return static_cast<int>(y_.size()); }
  const Eigen::MatrixXd& X() const { return X_; }
  const Eigen::VectorXd& y() const { return y_; }
  // Latent selection variable; only the sampling mechanism may read it.
  const Eigen::VectorXd& latent_u() const { return u_; }
  ObservedPopulation observed() const { return {X_, y_}; }
  // Exact solution of N^-1 sum S(V; mu) = 0 over the rows.
  Eigen::VectorXd mu_g(const Estimand& est) const;

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  Eigen::VectorXd u_;
};

// ---------------------------------------------------------------------------
// CSV ingestion.

struct Schema {
  std::vector<std::string> covariates;
  std::string outcome = "y";
  std::string weight = "d";
  char delimiter = ',';
};

CombinedData load_samples(const std::string& prob_path, const std::string& nonprob_path, const Schema& schema);
// Parses a CSV text body; `origin` names the source in error messages.
ProbabilitySample parse_prob_csv(const std::string& text, const std::string& origin, const Schema& schema);
NonProbabilitySample parse_nonprob_csv(const std::string& text, const std::string& origin, const Schema& schema);

}  // namespace tapool
