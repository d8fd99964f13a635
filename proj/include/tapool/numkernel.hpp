#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>

#include "tapool/error.hpp"

namespace tapool {

// ---------------------------------------------------------------------------
// Chi-square family. `delta` is always the half-squared-norm convention:
// a N(mu, I_df) vector has squared norm with CDF noncentral_chisq_cdf(x, df, mu'mu/2).

double chisq_cdf(double x, int df);
double chisq_quantile(double p, int df);
double noncentral_chisq_cdf(double x, int df, double delta);

double normal_cdf(double z);
double normal_quantile(double p);

// Region a <= w'w <= b for W ~ N(mu2, I).
struct TruncRegion {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();

  void validate() const;
  bool contains(double sq_norm) const { return sq_norm >= lower && sq_norm <= upper; }
};

// E(W 1{W in R}), E(W W' 1{W in R}) and P(W in R).
struct PartialMoments {
  Eigen::VectorXd first;
  Eigen::MatrixXd second;
  double mass = 0.0;
};

// Conditional moments E(W | W in R), E(W W' | W in R) and the mass P(W in R).
struct TruncMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd second_moment;
  double mass = 0.0;
};

PartialMoments partial_moments(const Eigen::VectorXd& mu2, const TruncRegion& region);
TruncMoments trunc_moments(const Eigen::VectorXd& mu2, const TruncRegion& region);

// ---------------------------------------------------------------------------
// Symmetric matrix utilities. Eigenvalues below -1e-10 * ||M|| are an error,
// smaller negative ones are clamped to zero.

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);
// Inverse square root of a positive-definite matrix; Singularity error otherwise.
Eigen::MatrixXd pd_inv_sqrt(const Eigen::MatrixXd& m);
// Nearest PSD matrix by eigenvalue clamping; `changed` reports whether clamping happened.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, bool* changed = nullptr);
double min_eigenvalue(const Eigen::MatrixXd& m);

// ---------------------------------------------------------------------------
// Nelder-Mead simplex.

struct NelderMeadOptions {
  int max_iter = 2000;
  double tol = 1e-8;
  int restarts = 5;
  double step = 0.1;
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

struct NelderMeadResult {
  Eigen::VectorXd argmin;
  double value = 0.0;
  int iterations = 0;
  bool max_iter_hit = false;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

// One run from x0 followed by `restarts` runs from jittered simplices around the
// incumbent; the best point is kept.
NelderMeadResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                             const NelderMeadOptions& opts = {});

// ---------------------------------------------------------------------------
// Random streams.

std::uint64_t splitmix64(std::uint64_t x);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on the open interval (0, 1) with 53 random bits.
  double uniform();
  double normal();
  Eigen::VectorXd normal_vector(int dim);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Counter-based derivation of independent streams from one master seed.
struct SeedPlan {
  std::uint64_t master_seed = 1;

  Rng stream(std::uint64_t index) const;
  SeedPlan child(std::uint64_t tag) const;
};

// Rejection sampler for W ~ N(mu2, I) conditioned on the region.
Eigen::VectorXd sample_trunc_w2(const Eigen::VectorXd& mu2, const TruncRegion& region, Rng& rng);

}  // namespace tapool
