#include "tapool/nuisance.hpp"

#include "tapool/numkernel.hpp"

#include <cmath>
#include <sstream>

namespace tapool {

std::string to_string(NuisanceStrategy s) {
  switch (s) {
    case NuisanceStrategy::PseudoMlOlsB: return "pseudo-ml-ols-b";
    case NuisanceStrategy::PseudoMlOlsAB: return "pseudo-ml-ols-ab";
    case NuisanceStrategy::KhJoint: return "kh";
  }
  return "unknown";
}

NuisanceStrategy parse_strategy(const std::string& s) {
  if (s == "pseudo-ml-ols-b") return NuisanceStrategy::PseudoMlOlsB;
  if (s == "pseudo-ml-ols-ab") return NuisanceStrategy::PseudoMlOlsAB;
  if (s == "kh") return NuisanceStrategy::KhJoint;
  throw Error(ErrorKind::Usage, "unknown nuisance strategy '" + s + "' (pseudo-ml-ols-b | pseudo-ml-ols-ab | kh)");
}

double nuisance_tolerance(const CombinedData& data) { return 1e-10 * data.n(); }

namespace {

constexpr int kMaxNewton = 100;
constexpr double kDivergenceNorm = 1e3;

double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

void check_collinearity(const CombinedData& data) {
  Eigen::MatrixXd G = data.prob.X.transpose() * data.prob.X + data.nonprob.X.transpose() * data.nonprob.X;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  double lo = es.eigenvalues().minCoeff();
  double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::ostringstream os;
    os << "covariate Gram matrix condition number " << (lo > 0 ? hi / lo : INFINITY) << " exceeds 1e12";
    throw Error(ErrorKind::Collinearity, os.str());
  }
}

void check_divergence(const Eigen::VectorXd& alpha, const char* what) {
  if (!alpha.allFinite() || alpha.norm() > kDivergenceNorm) {
    throw Error(ErrorKind::Divergence, std::string(what) + ": coefficient norm exceeded 1e3 (separation)");
  }
}

double pseudo_loglik(const CombinedData& data, const Eigen::VectorXd& sB, const Eigen::VectorXd& alpha) {
  Eigen::VectorXd eta = data.prob.X * alpha;
  double v = alpha.dot(sB);
  for (int i = 0; i < eta.size(); ++i) v -= data.prob.d(i) * log1pexp(eta(i));
  return v;
}

}  // namespace

Eigen::VectorXd pseudo_ml_score(const CombinedData& data, const Eigen::VectorXd& alpha) {
  Eigen::VectorXd eta = data.prob.X * alpha;
  Eigen::VectorXd w(eta.size());
  for (int i = 0; i < eta.size(); ++i) w(i) = data.prob.d(i) * expit(eta(i));
  return data.nonprob.X.colwise().sum().transpose() - data.prob.X.transpose() * w;
}

Eigen::VectorXd fit_propensity_pseudo_ml(const CombinedData& data, SolveInfo* info) {
  if (data.n_B() == 0) throw Error(ErrorKind::Precondition, "non-probability sample is empty");
  if (data.n_A() == 0) throw Error(ErrorKind::Precondition, "probability sample is empty");
  check_collinearity(data);
  const int p = data.p();
  const double tol = nuisance_tolerance(data);
  Eigen::VectorXd sB = data.nonprob.X.colwise().sum().transpose();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
  SolveInfo local;
  double obj = pseudo_loglik(data, sB, alpha);
  for (int it = 0; it <= kMaxNewton; ++it) {
    Eigen::VectorXd g = pseudo_ml_score(data, alpha);
    local.residual = g.cwiseAbs().maxCoeff();
    local.iterations = it;
    if (local.residual < tol) {
      local.converged = true;
      break;
    }
    if (it == kMaxNewton) break;
    Eigen::VectorXd eta = data.prob.X * alpha;
    Eigen::VectorXd w(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      double pi = expit(eta(i));
      w(i) = data.prob.d(i) * pi * (1.0 - pi);
    }
    Eigen::MatrixXd H = data.prob.X.transpose() * w.asDiagonal() * data.prob.X;
    Eigen::VectorXd step = H.ldlt().solve(g);
    if (!step.allFinite()) throw Error(ErrorKind::SingularJacobian, "pseudo-likelihood Hessian is singular");
    double scale = 1.0;
    Eigen::VectorXd next = alpha + step;
    double next_obj = pseudo_loglik(data, sB, next);
    for (int h = 0; h < 40 && !(next_obj >= obj - 1e-12 * std::abs(obj)); ++h) {
      scale *= 0.5;
      next = alpha + scale * step;
      next_obj = pseudo_loglik(data, sB, next);
    }
    alpha = next;
    obj = next_obj;
    check_divergence(alpha, "pseudo-likelihood propensity fit");
  }
  if (info) *info = local;
  return alpha;
}

namespace {

struct ScopeRows {
  Eigen::MatrixXd X;
  Eigen::VectorXd z;
};

ScopeRows scope_rows(const CombinedData& data, OutcomeScope scope, const Estimand& est) {
  const int nB = data.n_B();
  const int nA = scope == OutcomeScope::AAndB ? data.n_A() : 0;
  ScopeRows r;
  r.X.resize(nB + nA, data.p());
  r.z.resize(nB + nA);
  r.X.topRows(nB) = data.nonprob.X;
  for (int i = 0; i < nB; ++i) r.z(i) = est.transform(data.nonprob.y(i));
  if (nA) {
    r.X.bottomRows(nA) = data.prob.X;
    for (int i = 0; i < nA; ++i) r.z(nB + i) = est.transform(data.prob.y(i));
  }
  return r;
}

double logistic_loglik(const ScopeRows& r, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = r.X * beta;
  double v = 0.0;
  for (int i = 0; i < eta.size(); ++i) v += r.z(i) * eta(i) - log1pexp(eta(i));
  return v;
}

}  // namespace

Eigen::VectorXd outcome_score(const CombinedData& data, OutcomeScope scope, const Estimand& est,
                              const Eigen::VectorXd& beta) {
  ScopeRows r = scope_rows(data, scope, est);
  OutcomeModel m{beta, est.binary_outcome() ? OutcomeLink::Logit : OutcomeLink::Identity};
  Eigen::VectorXd resid(r.z.size());
  for (int i = 0; i < resid.size(); ++i) resid(i) = r.z(i) - m(r.X.row(i).transpose());
  return r.X.transpose() * resid;
}

Eigen::VectorXd fit_outcome_ols(const CombinedData& data, OutcomeScope scope, const Estimand& est, SolveInfo* info) {
  ScopeRows r = scope_rows(data, scope, est);
  const int p = static_cast<int>(r.X.cols());
  Eigen::MatrixXd G = r.X.transpose() * r.X;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G);
  qr.setThreshold(1e-12);
  if (qr.rank() < p) {
    throw Error(ErrorKind::RankDeficiency, "outcome design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                               std::to_string(p));
  }
  SolveInfo local;
  Eigen::VectorXd beta;
  if (!est.binary_outcome()) {
    beta = qr.solve(r.X.transpose() * r.z);
    // One step of iterative refinement on the normal equations.
    beta += qr.solve(r.X.transpose() * (r.z - r.X * beta));
    local.iterations = 1;
    local.residual = (r.X.transpose() * (r.z - r.X * beta)).cwiseAbs().maxCoeff();
    local.converged = true;
  } else {
    const double tol = nuisance_tolerance(data);
    beta = Eigen::VectorXd::Zero(p);
    double obj = logistic_loglik(r, beta);
    for (int it = 0; it <= kMaxNewton; ++it) {
      Eigen::VectorXd eta = r.X * beta;
      Eigen::VectorXd mu(eta.size()), w(eta.size());
      for (int i = 0; i < eta.size(); ++i) {
        mu(i) = expit(eta(i));
        w(i) = mu(i) * (1.0 - mu(i));
      }
      Eigen::VectorXd g = r.X.transpose() * (r.z - mu);
      local.residual = g.cwiseAbs().maxCoeff();
      local.iterations = it;
      if (local.residual < tol) {
        local.converged = true;
        break;
      }
      if (it == kMaxNewton) break;
      Eigen::MatrixXd H = r.X.transpose() * w.asDiagonal() * r.X;
      Eigen::VectorXd step = H.ldlt().solve(g);
      if (!step.allFinite()) throw Error(ErrorKind::SingularJacobian, "logistic outcome Hessian is singular");
      double scale = 1.0;
      Eigen::VectorXd next = beta + step;
      double next_obj = logistic_loglik(r, next);
      for (int h = 0; h < 40 && !(next_obj >= obj - 1e-12 * std::abs(obj)); ++h) {
        scale *= 0.5;
        next = beta + scale * step;
        next_obj = logistic_loglik(r, next);
      }
      beta = next;
      obj = next_obj;
      check_divergence(beta, "logistic outcome fit");
    }
  }
  if (info) *info = local;
  return beta;
}

namespace {

struct KhSystem {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
};

KhSystem kh_system(const CombinedData& data, const Estimand& est, const Eigen::VectorXd& alpha,
                   const Eigen::VectorXd& beta, bool with_jacobian) {
  const int p = data.p();
  const int pb = static_cast<int>(beta.size());
  OutcomeModel m{beta, est.binary_outcome() ? OutcomeLink::Logit : OutcomeLink::Identity};
  KhSystem s;
  s.r = Eigen::VectorXd::Zero(p + pb);
  if (with_jacobian) s.J = Eigen::MatrixXd::Zero(p + pb, p + pb);
  s.r.head(p) = -(data.prob.X.transpose() * data.prob.d);
  for (int i = 0; i < data.n_B(); ++i) {
    Eigen::VectorXd x = data.nonprob.X.row(i).transpose();
    double e = std::exp(-x.dot(alpha));  // 1/pi - 1
    s.r.head(p) += (1.0 + e) * x;
    if (pb) {
      double resid = est.transform(data.nonprob.y(i)) - m(x);
      s.r.tail(pb) += e * resid * x;
      if (with_jacobian) {
        s.J.block(p, 0, pb, p) -= e * resid * x * x.transpose();
        s.J.block(p, p, pb, pb) -= e * x * m.gradient(x).transpose();
      }
    }
    if (with_jacobian) s.J.block(0, 0, p, p) -= e * x * x.transpose();
  }
  return s;
}

}  // namespace

Eigen::VectorXd kh_residual(const CombinedData& data, const Estimand& est, const Eigen::VectorXd& alpha,
                            const Eigen::VectorXd& beta) {
  return kh_system(data, est, alpha, beta, false).r;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> fit_kh_joint(const CombinedData& data, const Estimand& est,
                                                         SolveInfo* info) {
  if (data.n_B() == 0) throw Error(ErrorKind::Precondition, "non-probability sample is empty");
  check_collinearity(data);
  const int p = data.p();
  const double tol = nuisance_tolerance(data);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd beta;
  if (est.kind != EstimandKind::RegressionCoef) beta = fit_outcome_ols(data, OutcomeScope::BOnly, est);
  const int pb = static_cast<int>(beta.size());
  SolveInfo local;
  KhSystem s = kh_system(data, est, alpha, beta, true);
  for (int it = 0; it <= kMaxNewton; ++it) {
    local.residual = s.r.cwiseAbs().maxCoeff();
    local.iterations = it;
    if (local.residual < tol) {
      local.converged = true;
      break;
    }
    if (it == kMaxNewton) break;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(s.J);
    if (!lu.isInvertible()) throw Error(ErrorKind::SingularJacobian, "KH joint Jacobian is singular");
    Eigen::VectorXd step = lu.solve(-s.r);
    double norm0 = s.r.norm();
    double scale = 1.0;
    Eigen::VectorXd theta(p + pb);
    theta << alpha, beta;
    KhSystem next;
    Eigen::VectorXd cand;
    for (int h = 0; h < 40; ++h) {
      cand = theta + scale * step;
      if (cand.allFinite() && cand.head(p).norm() <= kDivergenceNorm) {
        next = kh_system(data, est, cand.head(p), cand.tail(pb), true);
        if (next.r.allFinite() && next.r.norm() < norm0) break;
      }
      scale *= 0.5;
    }
    check_divergence(cand.head(p), "KH joint propensity fit");
    if (next.r.size() == 0) next = kh_system(data, est, cand.head(p), cand.tail(pb), true);
    alpha = cand.head(p);
    beta = cand.tail(pb);
    s = std::move(next);
  }
  if (info) *info = local;
  return {alpha, beta};
}

NuisanceFit fit_nuisance(const CombinedData& data, const Estimand& est, NuisanceStrategy strategy) {
  NuisanceFit fit;
  fit.strategy = strategy;
  fit.link = est.binary_outcome() ? OutcomeLink::Logit : OutcomeLink::Identity;
  const bool needs_outcome = est.kind != EstimandKind::RegressionCoef;
  if (strategy == NuisanceStrategy::KhJoint) {
    SolveInfo info;
    auto [a, b] = fit_kh_joint(data, est, &info);
    fit.alpha = a;
    fit.beta = b;
    fit.converged = info.converged;
    fit.iterations = info.iterations;
    fit.residual = info.residual;
    return fit;
  }
  SolveInfo pinfo;
  fit.alpha = fit_propensity_pseudo_ml(data, &pinfo);
  fit.converged = pinfo.converged;
  fit.iterations = pinfo.iterations;
  fit.residual = pinfo.residual;
  if (needs_outcome) {
    SolveInfo oinfo;
    auto scope = strategy == NuisanceStrategy::PseudoMlOlsB ? OutcomeScope::BOnly : OutcomeScope::AAndB;
    fit.beta = fit_outcome_ols(data, scope, est, &oinfo);
    fit.converged = fit.converged && oinfo.converged;
    fit.iterations += oinfo.iterations;
    fit.residual = std::max(fit.residual, oinfo.residual);
  }
  return fit;
}

}  // namespace tapool
