#include "tapool/datamodel.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace tapool {

void CombinedData::validate() const {
  if (prob.size() == 0) throw Error(ErrorKind::Precondition, "probability sample is empty");
  if (nonprob.size() == 0) throw Error(ErrorKind::Precondition, "non-probability sample is empty");
  if (prob.X.rows() != prob.size() || prob.d.size() != prob.size()) {
    throw Error(ErrorKind::DimensionMismatch, "probability sample columns have inconsistent lengths");
  }
  if (nonprob.X.rows() != nonprob.size()) {
    throw Error(ErrorKind::DimensionMismatch, "non-probability sample columns have inconsistent lengths");
  }
  if (prob.X.cols() != nonprob.X.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate dimensions differ: " + std::to_string(prob.X.cols()) +
                                                  " vs " + std::to_string(nonprob.X.cols()));
  }
  for (int i = 0; i < prob.size(); ++i) {
    if (!(prob.d(i) > 0.0) || !std::isfinite(prob.d(i))) {
      throw Error(ErrorKind::Domain, "design weight in row " + std::to_string(i + 1) + " is not positive and finite");
    }
  }
  if (!prob.X.allFinite() || !prob.y.allFinite() || !nonprob.X.allFinite() || !nonprob.y.allFinite()) {
    throw Error(ErrorKind::Domain, "non-finite value in sample data");
  }
}

CombinedData CombinedData::make(ProbabilitySample prob, NonProbabilitySample nonprob) {
  CombinedData out{std::move(prob), std::move(nonprob)};
  out.validate();
  return out;
}

std::string Estimand::name() const {
  switch (kind) {
    case EstimandKind::Mean: return "mean";
    case EstimandKind::ProportionBelow: return "proportion-below";
    case EstimandKind::RegressionCoef: return "regression";
  }
  return "unknown";
}

Estimand Estimand::parse(const std::string& kind, double cutoff) {
  if (kind == "mean") return mean();
  if (kind == "proportion-below") return proportion_below(cutoff);
  if (kind == "regression") return regression();
  throw Error(ErrorKind::Usage, "unknown estimand kind '" + kind + "' (mean | proportion-below | regression)");
}

// ---------------------------------------------------------------------------

Eigen::VectorXd PhiA::value(const Eigen::VectorXd& x, double y, double d, const Eigen::VectorXd& mu) const {
  if (est_.kind == EstimandKind::RegressionCoef) return d * x * (y - x.dot(mu));
  Eigen::VectorXd v(1);
  v(0) = d * (est_.transform(y) - mu(0));
  return v;
}

Eigen::MatrixXd PhiA::jacobian(const Eigen::VectorXd& x, double, double d, const Eigen::VectorXd&) const {
  if (est_.kind == EstimandKind::RegressionCoef) return -d * x * x.transpose();
  return Eigen::MatrixXd::Constant(1, 1, -d);
}

PhiA phi_A(const Estimand& est) { return PhiA(est); }

double PhiB::checked_pi(const Eigen::VectorXd& x) const {
  double p = pi_(x);
  if (p < 1e-8) {
    std::ostringstream os;
    os << "propensity " << p << " < 1e-8";
    throw Error(ErrorKind::PropensityUnderflow, os.str());
  }
  return p;
}

Eigen::VectorXd PhiB::value(const Eigen::VectorXd& x, double y, bool in_A, double d, bool in_B,
                            const Eigen::VectorXd& mu) const {
  const double wA = in_A ? d : 0.0;
  if (est_.kind == EstimandKind::RegressionCoef) {
    double w = wA + (in_B ? 1.0 / checked_pi(x) : 0.0);
    return w * x * (y - x.dot(mu));
  }
  double z = est_.transform(y);
  double m = m_(x);
  double v = wA * m - mu(0);
  if (in_B) v += (z - m) / checked_pi(x);
  Eigen::VectorXd out(1);
  out(0) = v;
  return out;
}

Eigen::MatrixXd PhiB::jacobian_mu(const Eigen::VectorXd& x, double, bool in_A, double d, bool in_B,
                                  const Eigen::VectorXd&) const {
  if (est_.kind == EstimandKind::RegressionCoef) {
    double w = (in_A ? d : 0.0) + (in_B ? 1.0 / checked_pi(x) : 0.0);
    return -w * x * x.transpose();
  }
  return Eigen::MatrixXd::Constant(1, 1, -1.0);
}

Eigen::MatrixXd PhiB::jacobian_tau(const Eigen::VectorXd& x, double y, bool in_A, double d, bool in_B,
                                   const Eigen::VectorXd& mu) const {
  const int pa = static_cast<int>(pi_.alpha.size());
  const int pb = est_.kind == EstimandKind::RegressionCoef ? 0 : static_cast<int>(m_.beta.size());
  const int l = est_.kind == EstimandKind::RegressionCoef ? static_cast<int>(x.size()) : 1;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(l, pa + pb);
  // d(1/pi)/d alpha = -(1 - pi)/pi * x for the logistic model.
  if (est_.kind == EstimandKind::RegressionCoef) {
    if (in_B) {
      double p = checked_pi(x);
      J.leftCols(pa) = -((1.0 - p) / p) * (y - x.dot(mu)) * x * x.transpose();
    }
    return J;
  }
  double z = est_.transform(y);
  double m = m_(x);
  if (in_B) {
    double p = checked_pi(x);
    J.block(0, 0, 1, pa) = (-((1.0 - p) / p) * (z - m) * x).transpose();
  }
  double coef = (in_A ? d : 0.0) - (in_B ? 1.0 / checked_pi(x) : 0.0);
  J.block(0, pa, 1, pb) = (coef * m_.gradient(x)).transpose();
  return J;
}

PhiB phi_B(const Estimand& est, const PropensityModel& pi, const OutcomeModel& m) { return PhiB(est, pi, m); }

// ---------------------------------------------------------------------------

FinitePopulation::FinitePopulation(Eigen::MatrixXd X, Eigen::VectorXd y, Eigen::VectorXd u)
    : X_(std::move(X)), y_(std::move(y)), u_(std::move(u)) {
  if (X_.rows() != y_.size() || u_.size() != y_.size()) {
    throw Error(ErrorKind::DimensionMismatch, "population columns have inconsistent lengths");
  }
}

Eigen::VectorXd FinitePopulation::mu_g(const Estimand& est) const {
  if (est.kind == EstimandKind::RegressionCoef) {
    return (X_.transpose() * X_).ldlt().solve(X_.transpose() * y_);
  }
  Eigen::VectorXd out(1);
  double s = 0.0;
  for (int i = 0; i < size(); ++i) s += est.transform(y_(i));
  out(0) = s / size();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == delim && !quoted) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};

Table read_table(const std::string& text, const std::string& origin, char delim) {
  Table t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line, delim);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw Error(ErrorKind::Parse, origin + ":" + std::to_string(line_no) + ": expected " +
                                        std::to_string(t.header.size()) + " fields, found " +
                                        std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw Error(ErrorKind::Parse, origin + ": missing header row");
  if (t.rows.empty()) throw Error(ErrorKind::Precondition, origin + ": no data rows");
  return t;
}

int column_index(const Table& t, const std::string& name, const std::string& origin, ErrorKind kind) {
  for (size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j] == name) return static_cast<int>(j);
  }
  throw Error(kind, origin + ": column '" + name + "' not found in header");
}

double parse_cell(const Table& t, size_t row, int col, const std::string& origin) {
  const std::string& cell = t.rows[row][col];
  double v = 0.0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::Parse, origin + ":" + std::to_string(t.line_numbers[row]) + ": column '" +
                                      t.header[col] + "' has non-numeric value '" + cell + "'");
  }
  return v;
}

void fill_design(const Table& t, const std::string& origin, const Schema& schema, Eigen::MatrixXd& X,
                 Eigen::VectorXd& y) {
  std::vector<int> cols;
  for (const auto& c : schema.covariates) cols.push_back(column_index(t, c, origin, ErrorKind::DimensionMismatch));
  int ycol = column_index(t, schema.outcome, origin, ErrorKind::Parse);
  const int n = static_cast<int>(t.rows.size());
  X.resize(n, static_cast<int>(cols.size()) + 1);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (size_t j = 0; j < cols.size(); ++j) X(i, static_cast<int>(j) + 1) = parse_cell(t, i, cols[j], origin);
    y(i) = parse_cell(t, i, ycol, origin);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ProbabilitySample parse_prob_csv(const std::string& text, const std::string& origin, const Schema& schema) {
  Table t = read_table(text, origin, schema.delimiter);
  ProbabilitySample s;
  bool has_weight = false;
  for (const auto& h : t.header) has_weight = has_weight || h == schema.weight;
  if (!has_weight) {
    throw Error(ErrorKind::MissingWeight, origin + ": weight column '" + schema.weight + "' not found");
  }
  fill_design(t, origin, schema, s.X, s.y);
  int wcol = column_index(t, schema.weight, origin, ErrorKind::MissingWeight);
  s.d.resize(s.y.size());
  for (int i = 0; i < s.size(); ++i) {
    s.d(i) = parse_cell(t, i, wcol, origin);
    if (!(s.d(i) > 0.0)) {
      throw Error(ErrorKind::Parse, origin + ":" + std::to_string(t.line_numbers[i]) + ": weight must be positive");
    }
  }
  return s;
}

NonProbabilitySample parse_nonprob_csv(const std::string& text, const std::string& origin, const Schema& schema) {
  Table t = read_table(text, origin, schema.delimiter);
  NonProbabilitySample s;
  fill_design(t, origin, schema, s.X, s.y);
  return s;
}

CombinedData load_samples(const std::string& prob_path, const std::string& nonprob_path, const Schema& schema) {
  auto prob = parse_prob_csv(read_file(prob_path), prob_path, schema);
  auto nonprob = parse_nonprob_csv(read_file(nonprob_path), nonprob_path, schema);
  return CombinedData::make(std::move(prob), std::move(nonprob));
}

}  // namespace tapool
