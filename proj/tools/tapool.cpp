#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tapool/adaptive_ci.hpp"
#include "tapool/config.hpp"
#include "tapool/report.hpp"
#include "tapool/simlab.hpp"
#include "tapool/tap.hpp"

using namespace tapool;

namespace {

constexpr int kExitStage = 1;
constexpr int kExitUsage = 2;

// Problems with the command line or configuration values.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Collects flags that override config-file keys; flags win over file values.
class CommandSetup {
 public:
  explicit CommandSetup(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "Config file with [section] key = value entries");
    option("--seed", "run", "seed", "Master seed");
    option("--threads", "run", "threads", "Worker threads (outputs do not depend on it)");
    option("--out", "run", "out", "Output directory for machine-readable files");
  }

  void option(const std::string& name, const std::string& section, const std::string& key, const std::string& help) {
    values_.emplace_back();
    CLI::Option* opt = app_->add_option(name, values_.back(), help);
    entries_.push_back({opt, section, key, &values_.back()});
  }

  CLI::App* app() const { return app_; }

  RunConfig build() const {
    ConfigFile file;
    if (!config_path_.empty()) file = ConfigFile::load(config_path_);
    for (const auto& e : entries_) {
      if (e.opt->count() > 0) file.sections[e.section][e.key] = *e.value;
    }
    RunConfig rc;
    try {
      rc.apply(file);
      rc.finalize();
    } catch (const Error& err) {
      throw UsageError(err.what());
    }
    return rc;
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::string section;
    std::string key;
    const std::string* value;
  };

  CLI::App* app_;
  std::string config_path_;
  std::deque<std::string> values_;
  std::vector<Entry> entries_;
};

void add_data_options(CommandSetup& s) {
  s.option("--prob", "data", "prob", "Probability-sample CSV (columns: covariates, outcome, design weight)");
  s.option("--nonprob", "data", "nonprob", "Non-probability-sample CSV (columns: covariates, outcome)");
  s.option("--covariates", "data", "covariates", "Comma-separated covariate column names");
  s.option("--outcome", "data", "outcome", "Outcome column name");
  s.option("--weight", "data", "weight", "Design-weight column name");
}

void add_ci_options(CommandSetup& s) {
  s.option("--methods", "ci", "methods", "Comma-separated interval methods: wald, wald-eff, baci, baci-f, paci");
  s.option("--alpha", "ci", "alpha", "One minus the nominal coverage");
  s.option("--B", "ci", "B", "Bootstrap draws for the bound-based interval");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

CombinedData load_data(const RunConfig& rc) {
  if (rc.prob_path.empty() || rc.nonprob_path.empty()) {
    throw UsageError("both --prob and --nonprob (or [data] prob/nonprob) are required");
  }
  try {
    return load_samples(rc.prob_path, rc.nonprob_path, rc.schema);
  } catch (const Error& e) {
    rethrow_in_stage("load", e);
  }
}

std::vector<Interval> compute_intervals(const CombinedData& data, const TapEstimate& tap, const RunConfig& rc) {
  std::vector<Interval> out;
  try {
    for (CiMethod m : rc.ci_methods) {
      BaciConfig cfg = rc.ci;
      switch (m) {
        case CiMethod::Wald: out.push_back(wald_interval(tap, cfg)); break;
        case CiMethod::WaldEff: out.push_back(wald_eff_interval(tap, cfg)); break;
        case CiMethod::Baci:
          cfg.vn_mode = VnMode::DoubleBootstrap;
          out.push_back(baci(data, tap, cfg));
          break;
        case CiMethod::BaciF:
          cfg.vn_mode = VnMode::FixedLogLog;
          out.push_back(baci(data, tap, cfg));
          break;
        case CiMethod::Paci: out.push_back(paci(tap, cfg)); break;
      }
    }
  } catch (const Error& e) {
    rethrow_in_stage("intervals", e);
  }
  return out;
}

Json intervals_json(const std::vector<Interval>& ivs) {
  Json a = Json::array();
  for (const auto& iv : ivs) a.push_back(to_json(iv));
  return a;
}

int cmd_estimate(const CommandSetup& s) {
  RunConfig rc = s.build();
  CombinedData data = load_data(rc);
  TapEstimate tap = estimate_tap(data, rc.estimand, rc.tap);
  std::vector<Interval> ivs = compute_intervals(data, tap, rc);
  const std::string text = estimate_text(tap, ivs);
  std::cout << text;
  if (!rc.out.empty()) {
    Json j;
    j["seed"] = rc.seed;
    j["estimate"] = to_json(tap);
    j["intervals"] = intervals_json(ivs);
    auto dir = prepare_out_dir(rc.out);
    write_file(dir / "estimate.json", j.dump(2) + "\n");
    write_file(dir / "estimate.txt", text);
  }
  return 0;
}

int cmd_ci(const CommandSetup& s, const std::string& estimate_path) {
  RunConfig rc = s.build();
  TapEstimate tap;
  try {
    Json j = Json::parse(read_file(estimate_path));
    tap = tap_from_json(j.contains("estimate") ? j.at("estimate") : j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, "'" + estimate_path + "': " + e.what());
  } catch (const Error& e) {
    rethrow_in_stage("load", e);
  }
  CombinedData data = load_data(rc);
  std::vector<Interval> ivs = compute_intervals(data, tap, rc);
  const std::string text = estimate_text(tap, ivs);
  std::cout << text;
  if (!rc.out.empty()) {
    Json j;
    j["seed"] = rc.seed;
    j["intervals"] = intervals_json(ivs);
    auto dir = prepare_out_dir(rc.out);
    write_file(dir / "intervals.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_simulate(const CommandSetup& s) {
  RunConfig rc = s.build();
  try {
    rc.sim.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  StudySummary summary;
  try {
    summary = run_study(rc.sim);
  } catch (const Error& e) {
    rethrow_in_stage("simulation", e);
  }
  std::cout << summary_table(summary);
  if (!rc.out.empty()) {
    auto dir = prepare_out_dir(rc.out);
    write_file(dir / "summary.csv", summary_csv(summary));
    write_file(dir / "summary.json", to_json(summary, true).dump(2) + "\n");
  }
  return 0;
}

int cmd_toy_surface(const CommandSetup& s) {
  RunConfig rc = s.build();
  try {
    rc.toy.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  std::vector<ToyRow> rows;
  try {
    rows = toy_surface(rc.toy);
  } catch (const Error& e) {
    rethrow_in_stage("toy-surface", e);
  }
  const std::string csv = toy_csv(rows);
  if (rc.out.empty()) {
    std::cout << csv;
  } else {
    auto dir = prepare_out_dir(rc.out);
    write_file(dir / "toy_surface.csv", csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-and-pool estimation for combining probability and non-probability samples"};
  app.require_subcommand(1);

  CommandSetup estimate(app.add_subcommand("estimate", "Estimate the target with test-and-pool and report intervals"));
  add_data_options(estimate);
  estimate.option("--estimand", "estimand", "kind", "mean, proportion-below or regression");
  estimate.option("--cutoff", "estimand", "cutoff", "Cutoff for proportion-below");
  estimate.option("--strategy", "nuisance", "strategy", "Nuisance strategy");
  estimate.option("--variance", "variance", "method", "bootstrap or plugin");
  estimate.option("--K", "variance", "K", "Bootstrap replicates for the variance components");
  estimate.option("--lambda", "tuning", "lambda", "Fixed pooling weight (requires --c-gamma)");
  estimate.option("--c-gamma", "tuning", "c_gamma", "Fixed test threshold (requires --lambda)");
  add_ci_options(estimate);

  CommandSetup ci(app.add_subcommand("ci", "Recompute intervals for a saved estimate"));
  std::string estimate_path;
  ci.app()->add_option("--estimate", estimate_path, "estimate.json written by the estimate command")->required();
  add_data_options(ci);
  add_ci_options(ci);

  CommandSetup simulate(app.add_subcommand("simulate", "Run the Monte Carlo study"));
  simulate.option("--scenario", "simulation", "scenario", "Violation size b");
  simulate.option("--replicates", "simulation", "replicates", "Number of Monte Carlo replicates");
  simulate.option("--scale", "simulation", "scale", "desk or paper");
  simulate.option("--N", "simulation", "N", "Population size");
  simulate.option("--K", "simulation", "K", "Bootstrap replicates per Monte Carlo replicate");
  simulate.option("--variance", "simulation", "variance", "bootstrap or plugin");
  simulate.option("--estimators", "simulation", "estimators", "primary or all");
  simulate.option("--cis", "simulation", "cis", "Comma-separated interval methods");
  simulate.option("--double-bootstrap-reps", "simulation", "double_bootstrap_reps",
                  "Replicates that also run the double-bootstrap threshold selection");

  CommandSetup toy(app.add_subcommand("toy-surface", "Emit the analytic MSE surface of the scalar toy model as CSV"));
  toy.option("--V-A", "toy", "V_A", "Variance of the probability-sample estimator");
  toy.option("--V-B", "toy", "V_B", "Variance of the non-probability estimator");
  toy.option("--gamma", "toy", "Gamma", "Covariance");
  toy.option("--f-B", "toy", "f_B", "Sample fraction of the non-probability sample");
  toy.option("--lambdas", "toy", "lambdas", "Lambda grid: list or start:stop:count");
  toy.option("--c-gammas", "toy", "c_gammas", "Threshold grid: list or start:stop:count");
  toy.option("--etas", "toy", "etas", "Local-alternative values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (estimate.app()->parsed()) return cmd_estimate(estimate);
    if (ci.app()->parsed()) return cmd_ci(ci, estimate_path);
    if (simulate.app()->parsed()) return cmd_simulate(simulate);
    if (toy.app()->parsed()) return cmd_toy_surface(toy);
  } catch (const UsageError& e) {
    std::cerr << "tapool: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "tapool: " << e.what() << "\n";
    return e.kind() == ErrorKind::Usage ? kExitUsage : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "tapool: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitUsage;
}
