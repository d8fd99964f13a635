#include "tapool/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

namespace tapool {

namespace {

std::string trim(const std::string& s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cf;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::Usage, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw Error(ErrorKind::Usage, where + ": empty section name");
      cf.sections[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Usage, where + ": expected 'key = value'");
    if (section.empty()) throw Error(ErrorKind::Usage, where + ": key outside of a section");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::Usage, where + ": empty key");
    auto& sec = cf.sections[section];
    if (sec.count(key)) throw Error(ErrorKind::Usage, where + ": duplicate key '" + key + "' in [" + section + "]");
    sec[key] = value;
  }
  return cf;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

const std::string& ConfigFile::get(const std::string& section, const std::string& key) const {
  return sections.at(section).at(key);
}

double parse_double(const std::string& text, const std::string& what) {
  std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw Error(ErrorKind::Usage, what + ": '" + text + "' is not a number");
  }
  return v;
}

long long parse_int(const std::string& text, const std::string& what) {
  std::string t = trim(text);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw Error(ErrorKind::Usage, what + ": '" + text + "' is not an integer");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  std::string t = trim(text);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  throw Error(ErrorKind::Usage, what + ": '" + text + "' is not a boolean");
}

// Comma-separated values, or "start:stop:count" for an evenly spaced range.
std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<std::string> parts = split(text, ':');
  if (parts.size() == 3 && text.find(',') == std::string::npos) {
    double a = parse_double(parts[0], what), b = parse_double(parts[1], what);
    long long n = parse_int(parts[2], what);
    if (n < 1) throw Error(ErrorKind::Usage, what + ": range count must be >= 1");
    std::vector<double> out;
    for (long long i = 0; i < n; ++i) out.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
    return out;
  }
  std::vector<double> out;
  for (const auto& p : split(text, ',')) out.push_back(parse_double(p, what));
  if (out.empty()) throw Error(ErrorKind::Usage, what + ": empty list");
  return out;
}

Scale parse_scale(const std::string& text) {
  if (text == "desk") return Scale::Desk;
  if (text == "paper") return Scale::Paper;
  throw Error(ErrorKind::Usage, "unknown scale '" + text + "' (desk | paper)");
}

namespace {

VarianceMethod parse_variance(const std::string& s) {
  if (s == "bootstrap") return VarianceMethod::Bootstrap;
  if (s == "plugin") return VarianceMethod::Plugin;
  throw Error(ErrorKind::Usage, "unknown variance method '" + s + "' (bootstrap | plugin)");
}

VnMode parse_vn_mode(const std::string& s) {
  if (s == "fixed-loglog" || s == "fixed") return VnMode::FixedLogLog;
  if (s == "double-bootstrap") return VnMode::DoubleBootstrap;
  throw Error(ErrorKind::Usage, "unknown v_n mode '" + s + "' (fixed-loglog | double-bootstrap)");
}

std::vector<CiMethod> parse_methods(const std::string& s) {
  std::vector<CiMethod> out;
  for (const auto& p : split(s, ',')) out.push_back(parse_ci_method(p));
  return out;
}

int to_int(const std::string& v, const std::string& what) {
  long long x = parse_int(v, what);
  if (x < -2147483647LL || x > 2147483647LL) throw Error(ErrorKind::Usage, what + ": out of range");
  return static_cast<int>(x);
}

}  // namespace

void RunConfig::apply(const ConfigFile& file) {
  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, std::map<std::string, Setter>> table;
  std::optional<double> fixed_lambda, fixed_c;
  double cutoff = estimand.cutoff;
  std::string kind = estimand.name();

  table["data"] = {
      {"prob", [&](const std::string& v) { prob_path = v; }},
      {"nonprob", [&](const std::string& v) { nonprob_path = v; }},
      {"covariates", [&](const std::string& v) { schema.covariates = split(v, ','); }},
      {"outcome", [&](const std::string& v) { schema.outcome = v; }},
      {"weight", [&](const std::string& v) { schema.weight = v; }},
      {"delimiter",
       [&](const std::string& v) {
         if (v.size() != 1) throw Error(ErrorKind::Usage, "data.delimiter must be a single character");
         schema.delimiter = v[0];
       }},
  };
  table["estimand"] = {
      {"kind", [&](const std::string& v) { kind = v; }},
      {"cutoff", [&](const std::string& v) { cutoff = parse_double(v, "estimand.cutoff"); }},
  };
  table["nuisance"] = {
      {"strategy", [&](const std::string& v) { tap.strategy = parse_strategy(v); }},
  };
  table["variance"] = {
      {"method", [&](const std::string& v) { tap.variance = parse_variance(v); }},
      {"K", [&](const std::string& v) { tap.boot.K = to_int(v, "variance.K"); }},
      {"refit", [&](const std::string& v) { tap.boot.refit = parse_bool(v, "variance.refit"); }},
  };
  table["tuning"] = {
      {"lambda_max", [&](const std::string& v) { tap.tune.lambda_max = parse_double(v, "tuning.lambda_max"); }},
      {"c_max", [&](const std::string& v) { tap.tune.c_max = parse_double(v, "tuning.c_max"); }},
      {"scan_points", [&](const std::string& v) { tap.tune.scan_points = to_int(v, "tuning.scan_points"); }},
      {"lambda", [&](const std::string& v) { fixed_lambda = parse_double(v, "tuning.lambda"); }},
      {"c_gamma", [&](const std::string& v) { fixed_c = parse_double(v, "tuning.c_gamma"); }},
  };
  table["ci"] = {
      {"methods", [&](const std::string& v) { ci_methods = parse_methods(v); }},
      {"alpha", [&](const std::string& v) { ci.alpha = parse_double(v, "ci.alpha"); }},
      {"epsilon", [&](const std::string& v) { ci.epsilon = parse_double(v, "ci.epsilon"); }},
      {"vn_mode", [&](const std::string& v) { ci.vn_mode = parse_vn_mode(v); }},
      {"kappa_grid", [&](const std::string& v) { ci.kappa_grid = parse_double_list(v, "ci.kappa_grid"); }},
      {"B", [&](const std::string& v) { ci.B = to_int(v, "ci.B"); }},
      {"B2", [&](const std::string& v) { ci.B2 = to_int(v, "ci.B2"); }},
      {"B_inner", [&](const std::string& v) { ci.B_inner = to_int(v, "ci.B_inner"); }},
      {"paci_draws", [&](const std::string& v) { ci.paci_draws = to_int(v, "ci.paci_draws"); }},
      {"alpha1", [&](const std::string& v) { ci.alpha1 = parse_double(v, "ci.alpha1"); }},
      {"grid_halfwidth", [&](const std::string& v) { ci.grid_halfwidth = parse_double(v, "ci.grid_halfwidth"); }},
      {"grid_step", [&](const std::string& v) { ci.grid_step = parse_double(v, "ci.grid_step"); }},
      {"v_n", [&](const std::string& v) { ci.v_n = parse_double(v, "ci.v_n"); }},
      {"budget", [&](const std::string& v) { ci.budget = parse_double(v, "ci.budget"); }},
      {"contrast",
       [&](const std::string& v) {
         auto xs = parse_double_list(v, "ci.contrast");
         ci.a = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<int>(xs.size()));
       }},
  };
  table["simulation"] = {
      {"scale", [&](const std::string&) {}},  // applied first, below
      {"scenario", [&](const std::string& v) { sim.b = parse_double(v, "simulation.scenario"); }},
      {"replicates", [&](const std::string& v) { sim.R = to_int(v, "simulation.replicates"); }},
      {"N", [&](const std::string& v) { sim.N = to_int(v, "simulation.N"); }},
      {"target_nA", [&](const std::string& v) { sim.target_nA = to_int(v, "simulation.target_nA"); }},
      {"target_nB", [&](const std::string& v) { sim.target_nB = to_int(v, "simulation.target_nB"); }},
      {"K", [&](const std::string& v) { sim.K = to_int(v, "simulation.K"); }},
      {"variance", [&](const std::string& v) { sim.variance = parse_variance(v); }},
      {"estimators",
       [&](const std::string& v) {
         if (v == "primary") sim.all_estimators = false;
         else if (v == "all") sim.all_estimators = true;
         else throw Error(ErrorKind::Usage, "simulation.estimators must be primary or all");
       }},
      {"cis", [&](const std::string& v) { sim.cis = parse_methods(v); }},
      {"double_bootstrap_reps",
       [&](const std::string& v) { sim.double_bootstrap_reps = to_int(v, "simulation.double_bootstrap_reps"); }},
      {"B2", [&](const std::string& v) { sim.B2 = to_int(v, "simulation.B2"); }},
      {"B_inner", [&](const std::string& v) { sim.B_inner = to_int(v, "simulation.B_inner"); }},
      {"paci_draws", [&](const std::string& v) { sim.paci_draws = to_int(v, "simulation.paci_draws"); }},
      {"alpha", [&](const std::string& v) { sim.alpha = parse_double(v, "simulation.alpha"); }},
  };
  table["toy"] = {
      {"V_A", [&](const std::string& v) { toy.V_A = parse_double(v, "toy.V_A"); }},
      {"V_B", [&](const std::string& v) { toy.V_B = parse_double(v, "toy.V_B"); }},
      {"Gamma", [&](const std::string& v) { toy.Gamma = parse_double(v, "toy.Gamma"); }},
      {"f_B", [&](const std::string& v) { toy.f_B = parse_double(v, "toy.f_B"); }},
      {"lambdas", [&](const std::string& v) { toy.lambdas = parse_double_list(v, "toy.lambdas"); }},
      {"c_gammas", [&](const std::string& v) { toy.c_gammas = parse_double_list(v, "toy.c_gammas"); }},
      {"etas", [&](const std::string& v) { toy.etas = parse_double_list(v, "toy.etas"); }},
  };
  table["run"] = {
      {"seed", [&](const std::string& v) { seed = static_cast<std::uint64_t>(parse_int(v, "run.seed")); }},
      {"threads", [&](const std::string& v) { threads = to_int(v, "run.threads"); }},
      {"out", [&](const std::string& v) { out = v; }},
  };

  for (const auto& [section, keys] : file.sections) {
    auto st = table.find(section);
    if (st == table.end()) throw Error(ErrorKind::Usage, "unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      if (!st->second.count(key)) throw Error(ErrorKind::Usage, "unknown config key '" + key + "' in [" + section + "]");
    }
  }
  if (file.has("simulation", "scale")) {
    scale = parse_scale(file.get("simulation", "scale"));
    sim = scale == Scale::Paper ? SimConfig::paper() : SimConfig::desk();
  }
  for (const auto& [section, keys] : file.sections) {
    for (const auto& [key, value] : keys) table[section][key](value);
  }
  estimand = Estimand::parse(kind, cutoff);
  if (fixed_lambda || fixed_c) {
    if (!(fixed_lambda && fixed_c)) throw Error(ErrorKind::Usage, "tuning.lambda and tuning.c_gamma must be given together");
    TuningParams t;
    t.lambda = *fixed_lambda;
    t.c_gamma = *fixed_c;
    tap.fixed_tuning = t;
  }
}

void RunConfig::finalize() {
  if (threads < 1) throw Error(ErrorKind::Usage, "threads must be >= 1");
  tap.seed = seed;
  tap.boot.threads = threads;
  ci.seed = SeedPlan{seed}.child(11).master_seed;
  ci.threads = threads;
  ci.refit = tap.boot.refit;
  sim.seed = seed;
  sim.threads = threads;
}

}  // namespace tapool
