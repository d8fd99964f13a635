#include "tapool/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace tapool {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json mat_json(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

Eigen::VectorXd json_vec(const Json& j) {
  Eigen::VectorXd v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

Eigen::MatrixXd json_mat(const Json& j) {
  const int r = static_cast<int>(j.size());
  const int c = r > 0 ? static_cast<int>(j[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(j[i].size()) != c) throw Error(ErrorKind::Parse, "ragged matrix in report");
    for (int k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

// NaN and infinities are not JSON numbers; they are written as null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double num_or_nan(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

Json to_json(const VarComps& vc) {
  Json j;
  j["V_A"] = mat_json(vc.V_A);
  j["V_B"] = mat_json(vc.V_B);
  j["Gamma"] = mat_json(vc.Gamma);
  j["jac_A"] = mat_json(vc.jac_A);
  j["jac_B"] = mat_json(vc.jac_B);
  j["f_B"] = vc.f_B;
  j["n"] = vc.n;
  j["Sigma_T"] = mat_json(vc.Sigma_T);
  j["V_eff"] = mat_json(vc.V_eff);
  j["Lambda_eff"] = mat_json(vc.Lambda_eff);
  j["projected"] = vc.projected;
  j["replicates_used"] = vc.replicates_used;
  j["replicates_dropped"] = vc.replicates_dropped;
  return j;
}

Json to_json(const TuningParams& t) {
  Json j;
  j["lambda"] = t.lambda;
  j["c_gamma"] = t.c_gamma;
  j["mse"] = t.mse;
  j["warning"] = t.warning;
  j["lambda_unbounded"] = t.lambda_unbounded;
  j["c_unbounded"] = t.c_unbounded;
  return j;
}

Json to_json(const TapEstimate& tap) {
  Json j;
  j["estimand"] = {{"kind", tap.estimand.name()}, {"cutoff", tap.estimand.cutoff}};
  j["point"] = vec_json(tap.point);
  j["T"] = tap.T;
  j["pooled"] = tap.pooled;
  j["tuning"] = to_json(tap.tuning);
  j["eta_hat"] = vec_json(tap.eta_hat);
  j["mu2_hat"] = vec_json(tap.mu2_hat);
  j["mu_A"] = vec_json(tap.points.mu_A);
  j["mu_B"] = vec_json(tap.points.mu_B);
  j["nuisance"] = {{"strategy", to_string(tap.points.tau.strategy)},
                   {"alpha", vec_json(tap.points.tau.alpha)},
                   {"beta", vec_json(tap.points.tau.beta)},
                   {"link", tap.points.tau.link == OutcomeLink::Logit ? "logit" : "identity"},
                   {"converged", tap.points.tau.converged},
                   {"iterations", tap.points.tau.iterations}};
  j["varcomps"] = to_json(tap.varcomps);
  return j;
}

TapEstimate tap_from_json(const Json& j) {
  try {
    TapEstimate t;
    t.estimand = Estimand::parse(j.at("estimand").at("kind").get<std::string>(),
                                 j.at("estimand").at("cutoff").get<double>());
    t.point = json_vec(j.at("point"));
    t.T = j.at("T").get<double>();
    t.pooled = j.at("pooled").get<bool>();
    const Json& tu = j.at("tuning");
    t.tuning.lambda = tu.at("lambda").get<double>();
    t.tuning.c_gamma = tu.at("c_gamma").get<double>();
    t.tuning.mse = tu.at("mse").get<double>();
    t.tuning.warning = tu.at("warning").get<bool>();
    t.tuning.lambda_unbounded = tu.at("lambda_unbounded").get<bool>();
    t.tuning.c_unbounded = tu.at("c_unbounded").get<bool>();
    t.eta_hat = json_vec(j.at("eta_hat"));
    t.mu2_hat = json_vec(j.at("mu2_hat"));
    t.points.mu_A = json_vec(j.at("mu_A"));
    t.points.mu_B = json_vec(j.at("mu_B"));
    const Json& nu = j.at("nuisance");
    t.points.tau.strategy = parse_strategy(nu.at("strategy").get<std::string>());
    t.points.tau.alpha = json_vec(nu.at("alpha"));
    t.points.tau.beta = json_vec(nu.at("beta"));
    t.points.tau.link = nu.at("link").get<std::string>() == "logit" ? OutcomeLink::Logit : OutcomeLink::Identity;
    t.points.tau.converged = nu.at("converged").get<bool>();
    t.points.tau.iterations = nu.at("iterations").get<int>();
    const Json& v = j.at("varcomps");
    t.points.jac_A = json_mat(v.at("jac_A"));
    t.points.jac_B = json_mat(v.at("jac_B"));
    t.varcomps = VarComps::build(json_mat(v.at("V_A")), json_mat(v.at("V_B")), json_mat(v.at("Gamma")), t.points.jac_A,
                                 t.points.jac_B, v.at("f_B").get<double>(), v.at("n").get<int>());
    t.varcomps.replicates_used = v.at("replicates_used").get<int>();
    t.varcomps.replicates_dropped = v.at("replicates_dropped").get<int>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed estimate report: ") + e.what());
  }
}

Json to_json(const Interval& iv) {
  Json j;
  j["method"] = to_string(iv.method);
  j["lower"] = iv.lower;
  j["upper"] = iv.upper;
  j["level"] = iv.level;
  j["v_n"] = num(iv.v_n);
  j["kappa"] = num(iv.kappa);
  j["kappa_fallback"] = iv.kappa_fallback;
  j["pooled"] = iv.pooled;
  j["nonregular"] = iv.nonregular;
  j["dropped"] = iv.dropped;
  return j;
}

Interval interval_from_json(const Json& j) {
  try {
    Interval iv;
    iv.method = parse_ci_method(j.at("method").get<std::string>());
    iv.lower = j.at("lower").get<double>();
    iv.upper = j.at("upper").get<double>();
    iv.level = j.at("level").get<double>();
    iv.v_n = num_or_nan(j.at("v_n"));
    iv.kappa = num_or_nan(j.at("kappa"));
    iv.kappa_fallback = j.at("kappa_fallback").get<bool>();
    iv.pooled = j.at("pooled").get<bool>();
    iv.nonregular = j.at("nonregular").get<bool>();
    iv.dropped = j.at("dropped").get<int>();
    return iv;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed interval report: ") + e.what());
  }
}

Json to_json(const StudySummary& s, bool include_records) {
  Json j;
  const SimConfig& c = s.config;
  j["config"] = {{"N", c.N},         {"target_nA", c.target_nA}, {"target_nB", c.target_nB}, {"scenario", c.b},
                 {"replicates", c.R}, {"seed", c.seed},          {"K", c.K},
                 {"variance", c.variance == VarianceMethod::Plugin ? "plugin" : "bootstrap"}};
  j["failures"] = s.failures;
  j["pooling_rate"] = s.pooling_rate;
  j["mean_lambda"] = s.mean_lambda;
  j["mean_c_gamma"] = s.mean_c_gamma;
  Json est = Json::array();
  for (const auto& e : s.estimators) {
    est.push_back({{"name", e.name}, {"count", e.count}, {"bias", e.bias}, {"var", e.var}, {"mse", e.mse},
                   {"bias_se", e.bias_se}});
  }
  j["estimators"] = est;
  Json ci = Json::array();
  for (const auto& c2 : s.intervals) {
    ci.push_back({{"name", c2.name}, {"count", c2.count}, {"coverage", c2.coverage}, {"width", c2.width}});
  }
  j["intervals"] = ci;
  if (include_records) {
    Json recs = Json::array();
    for (const auto& r : s.records) {
      Json rj;
      rj["index"] = r.index;
      rj["failed"] = r.failed;
      if (r.failed) rj["error"] = r.error;
      rj["truth"] = r.truth;
      rj["n_A"] = r.n_A;
      rj["n_B"] = r.n_B;
      rj["T"] = r.T;
      rj["pooled"] = r.pooled;
      rj["lambda"] = r.lambda;
      rj["c_gamma"] = r.c_gamma;
      Json ej;
      for (const auto& [k, v] : r.estimates) ej[k] = v;
      rj["estimates"] = ej;
      Json ij;
      for (const auto& [k, v] : r.intervals) ij[k] = to_json(v);
      rj["intervals"] = ij;
      recs.push_back(rj);
    }
    j["records"] = recs;
  }
  return j;
}

// ---------------------------------------------------------------------------

const char* const kSummaryCsvHeader = "scenario,kind,name,count,bias,var,mse,coverage,width";

std::string summary_csv(const StudySummary& s) {
  std::ostringstream os;
  os << kSummaryCsvHeader << "\n";
  const std::string b = format_double(s.config.b);
  for (const auto& e : s.estimators) {
    os << b << ",estimator," << e.name << "," << e.count << "," << format_double(e.bias) << ","
       << format_double(e.var) << "," << format_double(e.mse) << ",,\n";
  }
  for (const auto& c : s.intervals) {
    os << b << ",interval," << c.name << "," << c.count << ",,,," << format_double(c.coverage) << ","
       << format_double(c.width) << "\n";
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double csv_num(const std::string& s, int line) {
  if (s.empty()) return 0.0;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::Parse, "line " + std::to_string(line) + ": '" + s + "' is not a number");
  }
  return v;
}

}  // namespace

std::vector<SummaryCsvRow> parse_summary_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSummaryCsvHeader) {
    throw Error(ErrorKind::Parse, "summary CSV header does not match the documented schema");
  }
  std::vector<SummaryCsvRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 9) throw Error(ErrorKind::Parse, "line " + std::to_string(lineno) + ": expected 9 fields");
    SummaryCsvRow r;
    r.scenario = csv_num(f[0], lineno);
    r.kind = f[1];
    if (r.kind != "estimator" && r.kind != "interval") {
      throw Error(ErrorKind::Parse, "line " + std::to_string(lineno) + ": unknown row kind '" + r.kind + "'");
    }
    r.name = f[2];
    r.count = static_cast<int>(csv_num(f[3], lineno));
    r.bias = csv_num(f[4], lineno);
    r.var = csv_num(f[5], lineno);
    r.mse = csv_num(f[6], lineno);
    r.coverage = csv_num(f[7], lineno);
    r.width = csv_num(f[8], lineno);
    rows.push_back(r);
  }
  return rows;
}

std::string summary_table(const StudySummary& s) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "scenario b = %g, replicates = %d (failed %d), N = %d\n", s.config.b, s.config.R,
                s.failures, s.config.N);
  os << buf;
  os << "moments x 10^-3\n";
  std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %10s\n", "estimator", "bias", "var", "mse");
  os << buf;
  for (const auto& e : s.estimators) {
    std::snprintf(buf, sizeof(buf), "%-16s %10.1f %10.1f %10.1f\n", e.name.c_str(), 1e3 * e.bias, 1e3 * e.var,
                  1e3 * e.mse);
    os << buf;
  }
  if (!s.intervals.empty()) {
    std::snprintf(buf, sizeof(buf), "%-16s %10s %10s\n", "interval", "CR (%)", "width");
    os << buf;
    for (const auto& c : s.intervals) {
      std::snprintf(buf, sizeof(buf), "%-16s %10.1f %10.1f\n", c.name.c_str(), 100.0 * c.coverage, 1e3 * c.width);
      os << buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "pr(comb) = %.2f, mean lambda = %.2f, mean c_gamma = %.2f\n", s.pooling_rate,
                s.mean_lambda, s.mean_c_gamma);
  os << buf;
  return os.str();
}

std::string estimate_text(const TapEstimate& tap, const std::vector<Interval>& intervals) {
  std::ostringstream os;
  char buf[256];
  os << "estimand: " << tap.estimand.name() << "\n";
  auto vec = [&](const char* name, const Eigen::VectorXd& v) {
    os << name << ":";
    for (int i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), " %.6g", v(i));
      os << buf;
    }
    os << "\n";
  };
  vec("mu_tap", tap.point);
  vec("mu_A", tap.points.mu_A);
  vec("mu_B", tap.points.mu_B);
  std::snprintf(buf, sizeof(buf), "T = %.6g, pooled = %s, lambda = %.6g, c_gamma = %.6g%s\n", tap.T,
                tap.pooled ? "yes" : "no", tap.tuning.lambda, tap.tuning.c_gamma,
                tap.tuning.warning ? " (optimizer warning)" : "");
  os << buf;
  for (const auto& iv : intervals) {
    std::snprintf(buf, sizeof(buf), "%-9s [%.6g, %.6g] level %.3g", to_string(iv.method).c_str(), iv.lower, iv.upper,
                  iv.level);
    os << buf;
    if (std::isfinite(iv.v_n)) {
      std::snprintf(buf, sizeof(buf), ", v_n = %.4g", iv.v_n);
      os << buf;
    }
    if (std::isfinite(iv.kappa)) {
      std::snprintf(buf, sizeof(buf), ", kappa = %g%s", iv.kappa, iv.kappa_fallback ? " (fallback)" : "");
      os << buf;
    }
    if (iv.dropped > 0) os << ", dropped replicates = " << iv.dropped;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

const char* const kToyCsvHeader = "lambda,c_gamma,eta,bias,mse";

std::string toy_csv(const std::vector<ToyRow>& rows) {
  std::ostringstream os;
  os << kToyCsvHeader << "\n";
  for (const auto& r : rows) {
    os << format_double(r.lambda) << "," << format_double(r.c_gamma) << "," << format_double(r.eta) << ","
       << format_double(r.bias) << "," << format_double(r.mse) << "\n";
  }
  return os.str();
}

std::vector<ToyRow> parse_toy_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kToyCsvHeader) {
    throw Error(ErrorKind::Parse, "toy CSV header does not match the documented schema");
  }
  std::vector<ToyRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 5) throw Error(ErrorKind::Parse, "line " + std::to_string(lineno) + ": expected 5 fields");
    rows.push_back({csv_num(f[0], lineno), csv_num(f[1], lineno), csv_num(f[2], lineno), csv_num(f[3], lineno),
                    csv_num(f[4], lineno)});
  }
  return rows;
}

}  // namespace tapool
