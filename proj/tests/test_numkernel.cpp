#include "doctest.h"
#include "oracles.hpp"
#include "tapool/numkernel.hpp"

#include <cmath>
#include <vector>

using namespace tapool;

TEST_CASE("chisq_cdf basic values") {
  CHECK(chisq_cdf(0.0, 1) == 0.0);
  CHECK(chisq_cdf(3.84, 1) == doctest::Approx(0.95).epsilon(5e-4));
  CHECK(std::abs(chisq_cdf(5.0, 3) - oracle::chisq_cdf_quadrature(5.0, 3)) <= 1e-10);
  for (int df = 1; df <= 6; ++df) {
    for (double x : {0.1, 1.0, 2.5, 7.0, 15.0}) {
      CHECK(std::abs(chisq_cdf(x, df) - oracle::chisq_cdf_quadrature(x, df)) <= 1e-9);
    }
  }
}

TEST_CASE("chisq_quantile inverts the cdf") {
  CHECK(chisq_quantile(0.95, 1) == doctest::Approx(3.84).epsilon(0.01 / 3.84));
  CHECK(chisq_quantile(0.5, 2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(std::abs(chisq_cdf(chisq_quantile(0.99, 5), 5) - 0.99) <= 1e-9);
  for (int df = 1; df <= 4; ++df) {
    for (double p : {0.01, 0.25, 0.5, 0.9, 0.999}) CHECK(std::abs(chisq_cdf(chisq_quantile(p, df), df) - p) <= 1e-9);
  }
}

TEST_CASE("noncentral chi-square matches the central case and the normal reduction") {
  for (int df = 1; df <= 5; ++df) {
    for (double x : {0.0, 0.5, 3.84, 9.0}) CHECK(noncentral_chisq_cdf(x, df, 0.0) == doctest::Approx(chisq_cdf(x, df)));
  }
  CHECK(std::abs(noncentral_chisq_cdf(3.84, 1, 0.125) - oracle::ncx2_cdf_l1(3.84, 0.5)) <= 1e-10);
  for (double delta : {0.0, 0.125, 1.125, 5.0, 20.0}) {
    for (double x : {0.3, 1.0, 3.84, 12.0, 40.0}) {
      CHECK(std::abs(noncentral_chisq_cdf(x, 1, delta) - oracle::ncx2_cdf_l1(x, std::sqrt(2.0 * delta))) <= 1e-10);
    }
  }
}

TEST_CASE("noncentral chi-square against a Monte Carlo oracle") {
  auto mc = oracle::ncx2_cdf_mc(10.0, 2, 5.0, 400000, 11);
  CHECK(std::abs(noncentral_chisq_cdf(10.0, 2, 5.0) - mc.value) <= 3.0 * mc.se);
}

TEST_CASE("noncentral chi-square is nonincreasing in the noncentrality") {
  for (int df = 1; df <= 3; ++df) {
    for (double x : {0.5, 3.84, 10.0}) {
      double prev = 1.0;
      for (double delta = 0.0; delta <= 30.0; delta += 0.25) {
        double v = noncentral_chisq_cdf(x, df, delta);
        CHECK(v <= prev + 1e-14);
        prev = v;
      }
    }
  }
}

TEST_CASE("normal cdf and quantile") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
  for (double p : {1e-6, 0.1, 0.5, 0.8, 0.999}) CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
}

TEST_CASE("truncated moments without truncation") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
  auto m = trunc_moments(mu, TruncRegion{});
  CHECK(m.mass == doctest::Approx(1.0));
  CHECK(m.mean.norm() <= 1e-12);
  CHECK((m.second_moment - Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-12);
}

TEST_CASE("truncated moments at zero mean below the 95% point") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
  auto m = trunc_moments(mu, TruncRegion{0.0, 3.84});
  CHECK(std::abs(m.mean(0)) <= 1e-12);
  CHECK(m.second_moment(0, 0) == doctest::Approx(chisq_cdf(3.84, 3) / chisq_cdf(3.84, 1)).epsilon(1e-10));
  CHECK(m.second_moment(0, 0) == doctest::Approx(0.759).epsilon(1e-3));
}

TEST_CASE("truncated moments against rejection sampling") {
  for (double mu2 : {0.0, 0.5, 1.5}) {
    for (auto region : {TruncRegion{0.0, 3.84}, TruncRegion{3.84, INFINITY}}) {
      Eigen::VectorXd mu(1);
      mu << mu2;
      auto m = trunc_moments(mu, region);
      auto mc = oracle::trunc_moments_mc(mu2, region.lower, region.upper, 400000, 17);
      CHECK(std::abs(m.mass - mc.mass.value) <= 3.0 * mc.mass.se + 1e-12);
      CHECK(std::abs(m.mean(0) - mc.mean.value) <= 3.0 * mc.mean.se + 1e-12);
      CHECK(std::abs(m.second_moment(0, 0) - mc.second.value) <= 3.0 * mc.second.se + 1e-12);
    }
  }
}

TEST_CASE("complementary regions: masses add to one and means average to mu2") {
  for (double c : {0.5, 3.84, 10.0}) {
    for (int l = 1; l <= 3; ++l) {
      Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(l, 0.3, 1.7);
      auto lo = trunc_moments(mu, TruncRegion{0.0, c});
      auto hi = trunc_moments(mu, TruncRegion{c, INFINITY});
      CHECK(std::abs(lo.mass + hi.mass - 1.0) <= 1e-12);
      CHECK((lo.mass * lo.mean + hi.mass * hi.mean - mu).norm() <= 1e-10);
      Eigen::MatrixXd second = lo.mass * lo.second_moment + hi.mass * hi.second_moment;
      CHECK((second - (Eigen::MatrixXd::Identity(l, l) + mu * mu.transpose())).norm() <= 1e-10);
    }
  }
}

TEST_CASE("truncation region validation") {
  CHECK_THROWS_AS((TruncRegion{3.0, 1.0}).validate(), Error);
  CHECK_THROWS_AS((TruncRegion{-1.0, 1.0}).validate(), Error);
}

TEST_CASE("psd_sqrt") {
  CHECK((psd_sqrt(Eigen::MatrixXd::Identity(3, 3)) - Eigen::MatrixXd::Identity(3, 3)).norm() <= 1e-14);
  Eigen::MatrixXd d = Eigen::Vector2d(4.0, 9.0).asDiagonal();
  Eigen::MatrixXd r = psd_sqrt(d);
  CHECK(r(0, 0) == doctest::Approx(2.0));
  CHECK(r(1, 1) == doctest::Approx(3.0));
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = rng.normal();
    Eigen::MatrixXd m = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::MatrixXd s = psd_sqrt(m);
    CHECK((s * s - m).norm() <= 1e-10 * m.norm());
    CHECK((s - s.transpose()).norm() <= 1e-12);
    Eigen::MatrixXd ss = psd_sqrt(s * s);
    CHECK((ss - s).norm() <= 1e-9 * s.norm());
    Eigen::MatrixXd is = pd_inv_sqrt(m);
    CHECK((is * m * is - Eigen::MatrixXd::Identity(4, 4)).norm() <= 1e-9);
  }
}

TEST_CASE("psd operations reject clearly indefinite input and clamp tiny negatives") {
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(psd_sqrt(bad), Error);
  Eigen::MatrixXd tiny(2, 2);
  tiny << 1.0, 0.0, 0.0, -1e-13;
  bool changed = false;
  Eigen::MatrixXd p = psd_project(tiny, &changed);
  CHECK(changed);
  CHECK(min_eigenvalue(p) >= 0.0);
  CHECK_THROWS_AS(pd_inv_sqrt(Eigen::MatrixXd::Zero(2, 2)), Error);
}

TEST_CASE("Nelder-Mead on standard problems") {
  auto quad = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  auto r = nelder_mead(quad, Eigen::Vector2d(1.0, 1.0));
  CHECK(r.argmin.norm() <= 1e-6);
  auto rosen = [](const Eigen::VectorXd& x) {
    return 100.0 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1.0 - x(0), 2);
  };
  auto rr = nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0));
  CHECK(std::abs(rr.argmin(0) - 1.0) <= 1e-4);
  CHECK(std::abs(rr.argmin(1) - 1.0) <= 1e-4);
  CHECK_FALSE(rr.max_iter_hit);
}

TEST_CASE("random streams are reproducible and distinct") {
  SeedPlan plan{42};
  Rng a = plan.stream(3), b = plan.stream(3), c = plan.stream(4);
  std::vector<double> xa, xb, xc;
  for (int i = 0; i < 10; ++i) {
    xa.push_back(a.normal());
    xb.push_back(b.normal());
    xc.push_back(c.normal());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(plan.child(1).master_seed != plan.child(2).master_seed);
  CHECK(plan.child(1).master_seed == SeedPlan{42}.child(1).master_seed);
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    CHECK((v > 0.0 && v < 1.0));
    CHECK(u.below(7) < 7u);
  }
}

TEST_CASE("truncated sampler respects the region") {
  Rng rng(9);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < 2000; ++i) {
    auto w = sample_trunc_w2(zero, TruncRegion{3.84, INFINITY}, rng);
    CHECK(std::abs(w(0)) >= 1.9596);
  }
  Eigen::VectorXd mu = Eigen::VectorXd::Constant(2, 0.7);
  for (int i = 0; i < 2000; ++i) {
    auto w = sample_trunc_w2(mu, TruncRegion{1.0, 4.0}, rng);
    CHECK((w.squaredNorm() >= 1.0 && w.squaredNorm() <= 4.0));
  }
  Eigen::VectorXd m15(1);
  m15 << 1.5;
  const TruncRegion region{3.84, INFINITY};
  const int draws = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    double w = sample_trunc_w2(m15, region, rng)(0);
    s += w;
    s2 += w * w;
  }
  double mean = s / draws, se = std::sqrt((s2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - trunc_moments(m15, region).mean(0)) <= 3.0 * se);
}

TEST_CASE("truncated sampler reports infeasible regions") {
  Rng rng(3);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(sample_trunc_w2(zero, TruncRegion{200.0, 201.0}, rng), Error);
}
