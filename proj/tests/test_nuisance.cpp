#include "doctest.h"
#include "fixtures.hpp"
#include "tapool/nuisance.hpp"

#include <cmath>
#include <numeric>

using namespace tapool;

namespace {

struct MeanSd {
  Eigen::VectorXd mean, se;
};

MeanSd summarize(const std::vector<Eigen::VectorXd>& xs) {
  const int R = static_cast<int>(xs.size());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(xs[0].size());
  for (const auto& x : xs) m += x;
  m /= R;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m.size());
  for (const auto& x : xs) v += (x - m).cwiseAbs2();
  v /= (R - 1);
  return {m, (v / R).cwiseSqrt()};
}

// Population with two covariates, A drawn with a constant rate and B drawn
// independently of everything with rate `rate_B`.
CombinedData independent_samples(std::uint64_t seed, int N, double rate_A, double rate_B) {
  Rng rng(seed);
  std::vector<Eigen::RowVectorXd> xa, xb;
  std::vector<double> ya, yb;
  for (int i = 0; i < N; ++i) {
    Eigen::RowVectorXd x(3);
    x << 1.0, rng.normal(), rng.normal();
    double y = x(1) + rng.normal();
    if (rng.bernoulli(rate_A)) {
      xa.push_back(x);
      ya.push_back(y);
    }
    if (rng.bernoulli(rate_B)) {
      xb.push_back(x);
      yb.push_back(y);
    }
  }
  ProbabilitySample A;
  A.X.resize(static_cast<int>(xa.size()), 3);
  A.y.resize(static_cast<int>(xa.size()));
  A.d = Eigen::VectorXd::Constant(static_cast<int>(xa.size()), 1.0 / rate_A);
  for (std::size_t i = 0; i < xa.size(); ++i) {
    A.X.row(i) = xa[i];
    A.y(i) = ya[i];
  }
  NonProbabilitySample B;
  B.X.resize(static_cast<int>(xb.size()), 3);
  B.y.resize(static_cast<int>(xb.size()));
  for (std::size_t i = 0; i < xb.size(); ++i) {
    B.X.row(i) = xb[i];
    B.y(i) = yb[i];
  }
  return CombinedData::make(A, B);
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (auto s : {NuisanceStrategy::PseudoMlOlsB, NuisanceStrategy::PseudoMlOlsAB, NuisanceStrategy::KhJoint}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_strategy("gmm"), Error);
}

TEST_CASE("propensity slopes vanish under independent selection") {
  std::vector<Eigen::VectorXd> fits;
  for (int r = 0; r < 30; ++r) fits.push_back(fit_propensity_pseudo_ml(independent_samples(100 + r, 20000, 0.1, 0.25)));
  auto s = summarize(fits);
  CHECK(std::abs(s.mean(1)) <= 3.0 * s.se(1));
  CHECK(std::abs(s.mean(2)) <= 3.0 * s.se(2));
  CHECK(std::abs(s.mean(0) - std::log(0.25 / 0.75)) <= 3.0 * s.se(0) + 0.01);
}

TEST_CASE("pseudo-likelihood recovers the simulation propensity") {
  SimConfig cfg = SimConfig::desk();
  std::vector<Eigen::VectorXd> err;
  for (int r = 0; r < 60; ++r) {
    auto pop = generate_population(cfg.N, 500 + r);
    Intercepts nu;
    auto data = draw_samples(pop, cfg, 900 + r, &nu);
    Eigen::VectorXd truth(3);
    truth << nu.nu_B, 0.1, 0.2;
    err.push_back(fit_propensity_pseudo_ml(data) - truth);
  }
  auto s = summarize(err);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s.mean(j)) <= 3.0 * s.se(j));
}

TEST_CASE("pseudo-likelihood score structure and residual") {
  auto data = fixture::desk_samples(0.0, 7);
  SolveInfo info;
  Eigen::VectorXd alpha = fit_propensity_pseudo_ml(data, &info);
  CHECK(info.converged);
  Eigen::VectorXd sB = data.nonprob.X.colwise().sum().transpose();
  Eigen::VectorXd sA = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < data.n_A(); ++i) {
    sA += data.prob.d(i) * expit(data.prob.X.row(i).dot(alpha)) * data.prob.X.row(i).transpose();
  }
  CHECK((sB - sA).norm() < 1e-8 * data.n());
  CHECK(pseudo_ml_score(data, alpha).norm() < 1e-8 * data.n());
}

TEST_CASE("propensity fit is invariant to row order") {
  auto data = fixture::desk_samples(0.0, 8);
  CombinedData rev = data;
  rev.prob.X = data.prob.X.colwise().reverse();
  rev.prob.y = data.prob.y.reverse();
  rev.prob.d = data.prob.d.reverse();
  rev.nonprob.X = data.nonprob.X.colwise().reverse();
  rev.nonprob.y = data.nonprob.y.reverse();
  Eigen::VectorXd a = fit_propensity_pseudo_ml(data), b = fit_propensity_pseudo_ml(rev);
  CHECK((a - b).norm() <= 1e-10);
}

TEST_CASE("intercept-only propensity has a closed form") {
  auto data = fixture::desk_samples(0.0, 9);
  data.prob.X = data.prob.X.leftCols(1).eval();
  data.nonprob.X = data.nonprob.X.leftCols(1).eval();
  Eigen::VectorXd alpha = fit_propensity_pseudo_ml(data);
  double r = data.n_B() / data.prob.d.sum();
  CHECK(alpha(0) == doctest::Approx(std::log(r / (1.0 - r))).epsilon(1e-10));
}

TEST_CASE("empty non-probability sample is a precondition violation") {
  auto data = fixture::desk_samples(0.0, 10);
  data.nonprob.X.resize(0, 3);
  data.nonprob.y.resize(0);
  try {
    fit_propensity_pseudo_ml(data);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Precondition);
  }
}

TEST_CASE("least squares outcome fits") {
  auto data = fixture::desk_samples(0.0, 11);
  Eigen::Vector3d beta0(0.5, -1.0, 2.0);
  CombinedData lin = data;
  lin.prob.y = lin.prob.X * beta0;
  lin.nonprob.y = lin.nonprob.X * beta0;
  CHECK((fit_outcome_ols(lin, OutcomeScope::BOnly) - beta0).norm() <= 1e-10);
  CHECK((fit_outcome_ols(lin, OutcomeScope::AAndB) - beta0).norm() <= 1e-10);

  Eigen::VectorXd bB = fit_outcome_ols(data, OutcomeScope::BOnly);
  Eigen::VectorXd bAB = fit_outcome_ols(data, OutcomeScope::AAndB);
  CHECK((bB - bAB).norm() > 1e-6);
  CHECK(outcome_score(data, OutcomeScope::BOnly, Estimand::mean(), bB).norm() <= 1e-10 * data.n());
  CHECK(outcome_score(data, OutcomeScope::AAndB, Estimand::mean(), bAB).norm() <= 1e-10 * data.n());
}

TEST_CASE("outcome regression coefficients under comparable selection") {
  SimConfig cfg = SimConfig::desk();
  std::vector<Eigen::VectorXd> err;
  for (int r = 0; r < 40; ++r) {
    auto data = fixture::desk_samples(0.0, 2000 + 7 * r);
    err.push_back(fit_outcome_ols(data, OutcomeScope::BOnly) - Eigen::Vector3d(2.0, 1.0, 1.0));
  }
  auto s = summarize(err);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s.mean(j)) <= 3.0 * s.se(j));
}

TEST_CASE("logistic outcome model for a binary estimand") {
  auto data = fixture::desk_samples(0.0, 12);
  auto fit = fit_nuisance(data, Estimand::proportion_below(4.0), NuisanceStrategy::PseudoMlOlsAB);
  CHECK(fit.link == OutcomeLink::Logit);
  CHECK(fit.converged);
  CHECK(outcome_score(data, OutcomeScope::AAndB, Estimand::proportion_below(4.0), fit.beta).norm() <=
        1e-8 * data.n());
}

TEST_CASE("joint calibration estimator differs from pseudo-likelihood") {
  auto data = fixture::desk_samples(0.0, 13);
  Eigen::VectorXd alpha_ml = fit_propensity_pseudo_ml(data);
  Eigen::VectorXd beta_ab = fit_outcome_ols(data, OutcomeScope::AAndB);
  CHECK(kh_residual(data, Estimand::mean(), alpha_ml, beta_ab).norm() > 1e-6);
  SolveInfo info;
  auto [alpha, beta] = fit_kh_joint(data, Estimand::mean(), &info);
  CHECK(info.converged);
  CHECK(kh_residual(data, Estimand::mean(), alpha, beta).norm() <= 1e-8 * data.n());
}

TEST_CASE("fit_nuisance dispatches every strategy with small residuals") {
  auto data = fixture::desk_samples(0.0, 14);
  for (auto s : {NuisanceStrategy::PseudoMlOlsB, NuisanceStrategy::PseudoMlOlsAB, NuisanceStrategy::KhJoint}) {
    auto fit = fit_nuisance(data, Estimand::mean(), s);
    CHECK(fit.strategy == s);
    CHECK(fit.converged);
    CHECK(fit.residual < 1e-8 * data.n());
    CHECK(fit.alpha.size() == 3);
    CHECK(fit.beta.size() == 3);
  }
  auto reg = fit_nuisance(data, Estimand::regression(), NuisanceStrategy::PseudoMlOlsAB);
  CHECK(reg.beta.size() == 0);
}

TEST_CASE("collinear covariates are rejected") {
  auto data = fixture::desk_samples(0.0, 15);
  data.prob.X.col(2) = 2.0 * data.prob.X.col(1);
  data.nonprob.X.col(2) = 2.0 * data.nonprob.X.col(1);
  CHECK_THROWS_AS(fit_propensity_pseudo_ml(data), Error);
}
