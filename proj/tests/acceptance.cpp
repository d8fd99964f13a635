// Acceptance checks. Usage: tapool_acceptance [criterion ...] (default: all).
// Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tapool/adaptive_ci.hpp"
#include "tapool/numkernel.hpp"
#include "tapool/report.hpp"
#include "tapool/simlab.hpp"
#include "tapool/tap.hpp"

using namespace tapool;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kReductionTol = 1e-10;
constexpr long kNcx2Draws = 10'000'000;
constexpr long kTruncDraws = 1'000'000;
constexpr double kSeMultiplier = 3.0;
constexpr double kFormTol = 1e-10;
constexpr double kEfficientMse = 0.875;
constexpr double kLambdaEffRelTol = 0.10;
constexpr int kNullReplicates = 2000;
constexpr double kKsLevel = 0.01;
constexpr int kTableReplicates = 500;
constexpr int kTableK = 500;
constexpr double kRatioNullLo = 0.55, kRatioNullHi = 0.95;
constexpr double kBcBiasMin = 0.5;
constexpr double kRatioStrongLo = 0.9, kRatioStrongHi = 1.1;
constexpr double kPoolStrongMax = 0.05;
constexpr int kCiReplicates = 300;
constexpr int kCiB = 500;
constexpr double kCoverageLo = 0.90, kCoverageHi = 0.98;
constexpr double kWidthRelTol = 0.05;
constexpr int kDoubleBootstrapReps = 20;
constexpr int kDoubleBootstrapB2 = 50;
constexpr double kInvariantTol = 1e-10;

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

Eigen::VectorXd v1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void criterion1(Check& c) {
  double worst = 0.0;
  for (double x : {0.01, 0.5, 1.0, 3.84, 7.0, 15.0, 40.0}) {
    for (double mu : {0.0, 0.3, 1.0, 2.5, 5.0}) {
      worst = std::max(worst, std::abs(noncentral_chisq_cdf(x, 1, 0.5 * mu * mu) - oracle::ncx2_cdf_l1(x, mu)));
    }
  }
  c.require(worst <= kReductionTol, "normal reduction");
  c.detail << " reduction max err " << fmt(worst) << ";";

  double worst_z = 0.0;
  std::uint64_t seed = 100;
  for (int df = 1; df <= 5; ++df) {
    for (double delta : {0.0, 0.125, 1.125, 5.0}) {
      double x = df + 2.0 * delta;
      auto mc = oracle::ncx2_cdf_mc(x, df, delta, kNcx2Draws, ++seed);
      double z = std::abs(noncentral_chisq_cdf(x, df, delta) - mc.value) / mc.se;
      worst_z = std::max(worst_z, z);
      if (z > kSeMultiplier) c.require(false, "ncx2 df=" + std::to_string(df) + " delta=" + fmt(delta));
    }
  }
  c.detail << " ncx2 MC max |z| " << fmt(worst_z) << ";";

  double worst_t = 0.0;
  for (double mu2 : {0.0, 0.5, 1.5}) {
    for (auto region : {TruncRegion{0.0, 3.84}, TruncRegion{3.84, INFINITY}}) {
      auto m = trunc_moments(v1(mu2), region);
      auto mc = oracle::trunc_moments_mc(mu2, region.lower, region.upper, kTruncDraws, ++seed);
      for (auto [exact, est] : {std::pair{m.mass, mc.mass}, std::pair{m.mean(0), mc.mean},
                                std::pair{m.second_moment(0, 0), mc.second}}) {
        // A zero standard error happens only when both sides are exactly zero (mean at mu2 = 0).
        double z = est.se > 0.0 ? std::abs(exact - est.value) / est.se : (std::abs(exact - est.value) <= 1e-12 ? 0.0 : 1e9);
        worst_t = std::max(worst_t, z);
        if (z > kSeMultiplier) c.require(false, "trunc moments mu2=" + fmt(mu2) + " lower=" + fmt(region.lower));
      }
    }
  }
  c.detail << " trunc moments MC max |z| " << fmt(worst_t);
}

void criterion2(Check& c) {
  auto vc = VarComps::scalar(2.0, 1.0, 0.5);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 20; ++j) {
      for (double eta : {0.0, 0.5, 1.5}) {
        double lam = 10.0 * i / 19.0, cg = 50.0 * j / 19.0;
        auto g = mse_surface(lam, cg, v1(eta), vc);
        auto s = mse_surface_scalar(lam, cg, eta, vc);
        worst = std::max({worst, std::abs(g.mse(0, 0) - s.mse), std::abs(g.bias(0) - s.bias)});
      }
    }
  }
  c.require(worst <= kFormTol, "scalar vs general form");
  double lim = mse_surface(vc.Lambda_eff(0, 0), 1e8, v1(0.0), vc).mse(0, 0);
  c.require(std::abs(lim - kEfficientMse) <= 1e-9, "limit at efficient weight");
  bool exact2 = true;
  for (double lam : {0.0, 0.5, 3.0, 10.0}) {
    for (double eta : {0.0, 0.5, 1.5}) exact2 = exact2 && mse_surface(lam, 0.0, v1(eta), vc).mse(0, 0) == 2.0;
  }
  c.require(exact2, "never-pool MSE equals V_A exactly");
  c.detail << " max |scalar - general| " << fmt(worst) << "; mse(Lambda_eff, c->inf, 0) = " << fmt(lim)
           << "; mse(., 0, .) == 2 " << (exact2 ? "exact" : "NOT exact");
}

void criterion3(Check& c) {
  auto vc = VarComps::scalar(2.0, 1.0, 0.5);
  TuneOptions o;
  o.lambda_max = 10.0;
  o.c_max = 50.0;
  const double cell_l = 10.0 / 199.0, cell_c = 50.0 / 199.0;
  for (double eta : {0.0, 0.5, 1.5}) {
    auto t = tune(v1(eta), vc, o);
    auto g = oracle::grid_argmin([&](double l, double cg) { return mse_surface(l, cg, v1(eta), vc).mse(0, 0); }, 0.0,
                                 10.0, 0.0, 50.0, 200, 200);
    bool near = std::abs(t.lambda - g.x) <= cell_l && std::abs(t.c_gamma - g.y) <= cell_c;
    c.require(near && t.mse <= g.value + 1e-9, "grid agreement at eta=" + fmt(eta));
    c.detail << " eta=" << fmt(eta) << ": NM (" << fmt(t.lambda) << ", " << fmt(t.c_gamma) << ") grid (" << fmt(g.x)
             << ", " << fmt(g.y) << ");";
    if (eta == 0.0) {
      c.require(std::abs(t.lambda - 3.0) <= kLambdaEffRelTol * 3.0, "Lambda* near Lambda_eff");
    }
  }
}

void criterion4(Check& c) {
  SimConfig cfg = SimConfig::desk();
  cfg.b = 0.0;
  cfg.R = kNullReplicates;
  cfg.variance = VarianceMethod::Plugin;
  cfg.cis.clear();
  auto s = run_study(cfg);
  std::vector<double> T;
  for (const auto& r : s.records) {
    if (!r.failed) T.push_back(r.T);
  }
  double stat = 0.0;
  double p = oracle::ks_pvalue(T, [](double x) { return oracle::chisq_cdf_quadrature(x, 1); }, &stat);
  c.require(static_cast<int>(T.size()) >= kNullReplicates * 98 / 100, "too many failed replicates");
  c.require(p > kKsLevel, "KS test");
  c.detail << " replicates " << T.size() << "; KS D = " << fmt(stat) << ", p = " << fmt(p);
}

std::vector<StudySummary> table1_studies() {
  std::vector<StudySummary> out;
  for (double b : {0.0, 10.0, 100.0}) {
    SimConfig cfg = SimConfig::desk();
    cfg.b = b;
    cfg.R = kTableReplicates;
    cfg.K = kTableK;
    cfg.cis.clear();
    out.push_back(run_study(cfg));
  }
  return out;
}

void criterion5(Check& c) {
  auto studies = table1_studies();
  std::vector<double> pool;
  for (const auto& s : studies) {
    const auto& a = s.estimator("mu_A");
    const auto& t = s.estimator("mu_tap");
    double ratio = t.mse / a.mse;
    pool.push_back(s.pooling_rate);
    c.require(std::abs(a.bias) <= kSeMultiplier * a.bias_se, "mu_A bias at b=" + fmt(s.config.b));
    c.detail << " b=" << fmt(s.config.b) << ": bias(mu_A) " << fmt(a.bias) << " (se " << fmt(a.bias_se)
             << "), MSE ratio " << fmt(ratio) << ", bias(mu_bc) " << fmt(s.estimator("mu_bc").bias) << ", pool "
             << fmt(s.pooling_rate) << ";";
    if (s.config.b == 0.0) c.require(ratio >= kRatioNullLo && ratio <= kRatioNullHi, "MSE ratio at b=0");
    if (s.config.b == 100.0) {
      c.require(s.estimator("mu_bc").bias > kBcBiasMin, "mu_bc bias at b=100");
      c.require(ratio >= kRatioStrongLo && ratio <= kRatioStrongHi, "MSE ratio at b=100");
      c.require(s.pooling_rate < kPoolStrongMax, "pooling at b=100");
    }
  }
  c.require(pool[0] > pool[1] && pool[1] > pool[2], "pooling decreasing in b");
}

void criterion6(Check& c) {
  for (double b : {0.0, 100.0}) {
    SimConfig cfg = SimConfig::desk();
    cfg.b = b;
    cfg.R = kCiReplicates;
    cfg.K = kCiB;
    cfg.cis = {CiMethod::Wald, CiMethod::BaciF, CiMethod::Paci};
    cfg.double_bootstrap_reps = kDoubleBootstrapReps;
    cfg.B2 = kDoubleBootstrapB2;
    auto s = run_study(cfg);
    const auto& bf = s.interval("baci-f");
    const auto& pa = s.interval("paci");
    const auto& wa = s.interval("wald");
    const auto& db = s.interval("baci");
    c.require(bf.coverage >= kCoverageLo && bf.coverage <= kCoverageHi, "BACI coverage at b=" + fmt(b));
    c.require(pa.coverage >= bf.coverage, "PACI coverage >= BACI at b=" + fmt(b));
    if (b == 100.0) c.require(std::abs(bf.width / wa.width - 1.0) <= kWidthRelTol, "BACI width vs Wald at b=100");
    bool finite = db.count == kDoubleBootstrapReps && std::isfinite(db.width) && db.width > 0.0;
    c.require(finite, "double-bootstrap smoke at b=" + fmt(b));
    c.detail << " b=" << fmt(b) << ": BACI cov " << fmt(bf.coverage) << " width " << fmt(bf.width) << ", PACI cov "
             << fmt(pa.coverage) << ", Wald cov " << fmt(wa.coverage) << " width " << fmt(wa.width)
             << ", double-bootstrap BACI (" << db.count << " reps) cov " << fmt(db.coverage) << ";";
  }
}

void criterion7(Check& c) {
  Rng rng(77);
  double w_err = 0.0;
  for (int l = 1; l <= 3; ++l) {
    for (int r = 0; r < 50; ++r) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Random(l, l);
      Eigen::MatrixXd Lam = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(l, l);
      Eigen::MatrixXd jA = -Eigen::MatrixXd::Identity(l, l) + 0.2 * Eigen::MatrixXd::Random(l, l);
      Eigen::MatrixXd jB = -Eigen::MatrixXd::Identity(l, l) + 0.2 * Eigen::MatrixXd::Random(l, l);
      auto w = pool_weights(Lam, jA, jB);
      w_err = std::max(w_err, (w.omega_A + w.omega_B - Eigen::MatrixXd::Identity(l, l)).cwiseAbs().maxCoeff());
    }
  }
  c.require(w_err <= kInvariantTol, "omega_A + omega_B = I");

  double veff_err = 0.0, sigma_err = 0.0;
  for (int r = 0; r < 500; ++r) {
    double va = 0.5 + 3.0 * rng.uniform(), vb = 0.5 + 3.0 * rng.uniform();
    double g = (rng.uniform() - 0.5) * std::sqrt(va * vb);
    double fB = 0.1 + 0.8 * rng.uniform();
    auto vc = VarComps::scalar(va, vb, g, fB, 100);
    double S = va + vb - 2.0 * g;
    veff_err = std::max(veff_err, std::abs((va * vb - g * g) / S - (va - (va - g) * (va - g) / S)));
    veff_err = std::max(veff_err, std::abs(vc.V_eff(0, 0) - (va * vb - g * g) / S));
    sigma_err = std::max(sigma_err, std::abs(vc.Sigma_T(0, 0) - fB * S));
  }
  c.require(veff_err <= kInvariantTol, "V_eff two forms");
  c.require(sigma_err <= kInvariantTol, "Sigma_T scalar reduction");

  bool pooled_exact = true;
  double min_contrast = 1e300;
  for (double b : {0.0, 10.0, 100.0}) {
    for (int r = 0; r < 4; ++r) {
      auto data = fixture::desk_samples(b, 7000 + 13 * r + static_cast<std::uint64_t>(b));
      TapOptions o;
      o.boot.K = 200;
      o.seed = 31 + r;
      auto tap = estimate_tap(data, Estimand::mean(), o);
      auto tau = tap.points.tau;
      pooled_exact = pooled_exact && estimate_pooled(data, Estimand::mean(), tau, 0.0)(0) == tap.points.mu_A(0);
      const auto& vc = tap.varcomps;
      min_contrast = std::min(min_contrast, vc.V_A(0, 0) + vc.V_B(0, 0) - 2.0 * vc.Gamma(0, 0));
    }
  }
  c.require(pooled_exact, "pooled(Lambda=0) == mu_A");
  c.require(min_contrast >= 0.0, "Cauchy-Schwarz guard on bootstrap outputs");

  SimConfig cfg = SimConfig::desk();
  cfg.R = 40;
  cfg.b = 10.0;
  cfg.variance = VarianceMethod::Plugin;
  cfg.cis.clear();
  auto s = run_study(cfg);
  double mse_err = 0.0;
  for (const auto& e : s.estimators) mse_err = std::max(mse_err, std::abs(e.mse - (e.var + e.bias * e.bias)));
  c.require(mse_err <= kInvariantTol, "MSE = var + bias^2");
  c.detail << " weights " << fmt(w_err) << "; V_eff " << fmt(veff_err) << "; Sigma_T " << fmt(sigma_err)
           << "; pooled(0) " << (pooled_exact ? "exact" : "differs") << "; min V_A+V_B-2G " << fmt(min_contrast)
           << "; MSE identity " << fmt(mse_err);
}

int run_cli(const std::string& args, const fs::path& log) {
  std::string cmd = std::string(TAPOOL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Compares every regular file of two output directories byte for byte.
bool same_tree(const fs::path& a, const fs::path& b, std::string* diff) {
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    fs::path other = b / e.path().filename();
    if (!fs::exists(other) || fixture::read_text(e.path()) != fixture::read_text(other)) {
      *diff = e.path().filename().string();
      return false;
    }
  }
  if (files == 0) *diff = "no output";
  return files > 0;
}

void criterion8(Check& c) {
  auto dir = fixture::scratch_dir("acceptance8");
  auto data = fixture::desk_samples(0.0, 8080);
  fixture::write_samples(data, dir / "prob.csv", dir / "nonprob.csv");
  const std::string data_args = "--prob " + (dir / "prob.csv").string() + " --nonprob " +
                                (dir / "nonprob.csv").string() + " --covariates x1,x2 --outcome y --weight d";
  struct Cmd {
    std::string name, args;
  };
  std::vector<Cmd> cmds = {
      {"estimate", "estimate " + data_args + " --K 200 --B 200 --methods wald,wald-eff,baci-f,paci --seed 5"},
      {"ci", "ci --estimate " + (dir / "estimate_1a" / "estimate.json").string() + " " + data_args +
                 " --B 200 --methods baci-f,paci --seed 5"},
      {"simulate", "simulate --scenario 10 --replicates 6 --K 200 --cis wald,baci-f,paci --seed 6"},
      {"toy-surface", "toy-surface --lambdas 0:10:21 --c-gammas 0:50:21 --seed 7"},
  };
  for (const auto& cmd : cmds) {
    std::vector<std::pair<std::string, int>> runs = {{"1a", 1}, {"1b", 1}, {"2", 2}, {"4", 4}};
    std::vector<fs::path> outs;
    bool ran = true;
    for (const auto& [tag, threads] : runs) {
      fs::path out = dir / (cmd.name + "_" + tag);
      int code = run_cli(cmd.args + " --threads " + std::to_string(threads) + " --out " + out.string(),
                         dir / (cmd.name + "_" + tag + ".log"));
      ran = ran && code == 0;
      outs.push_back(out);
    }
    c.require(ran, cmd.name + " exit status");
    bool same = ran;
    std::string diff;
    for (std::size_t i = 1; same && i < outs.size(); ++i) same = same_tree(outs[0], outs[i], &diff);
    c.require(same, cmd.name + " output identical" + (diff.empty() ? "" : " (" + diff + ")"));
    c.detail << " " << cmd.name << " " << (same ? "identical" : "DIFFERS") << " over threads 1,1,2,4;";
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"special-function oracles", criterion1},
      {"MSE-form equivalence and limits", criterion2},
      {"tuning vs grid oracle", criterion3},
      {"null distribution of T", criterion4},
      {"point-estimation table at desk scale", criterion5},
      {"interval table at desk scale", criterion6},
      {"algebraic invariants", criterion7},
      {"determinism across thread counts", criterion8},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty()) {
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) which.push_back(i);
  }
  bool all_ok = true;
  for (int k : which) {
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::printf("criterion %d: FAIL (no such criterion)\n", k);
      all_ok = false;
      continue;
    }
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[k - 1].second(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail << " [error: " << e.what() << "]";
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s%s [%.1f s]\n", k, criteria[k - 1].first.c_str(), c.ok ? "PASS" : "FAIL",
                c.detail.str().c_str(), secs);
    std::fflush(stdout);
    all_ok = all_ok && c.ok;
  }
  return all_ok ? 0 : 1;
}
