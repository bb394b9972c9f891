#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "riskadj/risk_engine.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

/// Result of one (penalized) partial-likelihood fit. Cox fits leave
/// random_effects empty; frailty fits carry one entry per term.
struct FrailtyFit {
  std::vector<std::string> covariate_names;
  VectorXd beta_hat;  // original covariate scale
  MatrixXd beta_cov;  // p x p, inverse (penalized) information submatrix or sandwich
  struct RandomEffects {
    std::string term;  // "level1" or "level2"
    double theta = 0.0;
    std::vector<std::string> labels;
    VectorXd b;
  };
  std::vector<RandomEffects> random_effects;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  bool monotone_flag = false;
  bool degenerate_random_effect = false;
  std::vector<std::string> training_level1;

  const RandomEffects* term(const std::string& name) const {
    for (const auto& re : random_effects)
      if (re.term == name) return &re;
    return nullptr;
  }
};

/// Value, exact gradient, and exact Hessian of the counting-process partial
/// log-likelihood at beta, with per-row fixed offsets (random-effect
/// contributions enter here; pass empty for none). Original covariate scale.
struct PartialLoglik {
  double value = 0.0;
  VectorXd gradient;
  MatrixXd hessian;  // negative semidefinite
};

inline PartialLoglik partial_loglik(const VectorXd& beta, const VectorXd& offsets,
                                    const Dataset& data) {
  if (static_cast<std::size_t>(beta.size()) != data.n_covariates())
    throw ValidationError("partial_loglik: beta length does not match covariate count");
  RiskIndex idx = RiskIndex::from_events(data);
  CoxDesign d = CoxDesign::build(data, idx, data.covariates(), {}, offsets);
  CoxEval e = eval_partial_loglik(d, beta, {}, true);
  PartialLoglik out;
  out.value = e.loglik;
  out.gradient = std::move(e.grad);
  out.hessian = -e.info;
  return out;
}

enum class RobustGroups { none, level1, level2 };

namespace detail {

struct Standardizer {
  VectorXd mu, sd;

  static Standardizer fit(const MatrixXd& X, const std::vector<std::string>& names) {
    Standardizer s;
    const Eigen::Index n = X.rows(), p = X.cols();
    s.mu = X.colwise().mean();
    s.sd.resize(p);
    for (Eigen::Index c = 0; c < p; ++c) {
      double v = (X.col(c).array() - s.mu[c]).square().sum() / std::max<double>(1, n - 1);
      s.sd[c] = std::sqrt(v);
      if (!(s.sd[c] > 0.0))
        throw ValidationError("constant covariate column '" + names[static_cast<std::size_t>(c)] +
                              "' rejected");
    }
    return s;
  }

  MatrixXd apply(const MatrixXd& X) const {
    return (X.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
  }
  VectorXd to_std(const VectorXd& beta_orig) const { return beta_orig.cwiseProduct(sd); }
  VectorXd to_orig(const VectorXd& beta_std) const { return beta_std.cwiseQuotient(sd); }
  MatrixXd cov_to_orig(const MatrixXd& cov_std) const {
    VectorXd inv = sd.cwiseInverse();
    return inv.asDiagonal() * cov_std * inv.asDiagonal();
  }
};

/// Grouped sandwich covariance from per-row score residuals aggregated by
/// cluster: V = I^-1 (sum_g U_g U_g^T) I^-1, all on the standardized scale.
inline MatrixXd robust_cov(const Dataset& data, const RiskIndex& idx, const CoxDesign& d,
                           const VectorXd& beta, const MatrixXd& model_cov,
                           RobustGroups groups) {
  const std::size_t n = d.n_rows();
  const std::size_t K = idx.n_times();
  const Eigen::Index p = d.p();
  VectorXd eta = d.eta(beta);
  RiskSums sums = RiskSums::compute(idx, eta);

  // zbar_k = S1_k / S0_k via difference arrays (shift cancels in the ratio)
  MatrixXd S1 = MatrixXd::Zero(static_cast<Eigen::Index>(K + 1), p);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx.lo[i] >= idx.hi[i]) continue;
    double w = std::exp(eta[static_cast<Eigen::Index>(i)] - sums.log_shift);
    S1.row(idx.lo[i]) += w * d.X.row(static_cast<Eigen::Index>(i));
    S1.row(idx.hi[i]) -= w * d.X.row(static_cast<Eigen::Index>(i));
  }
  MatrixXd zbar(static_cast<Eigen::Index>(K), p);
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(p);
  for (std::size_t k = 0; k < K; ++k) {
    acc += S1.row(static_cast<Eigen::Index>(k));
    zbar.row(static_cast<Eigen::Index>(k)) = acc / sums.S0[k];
  }
  // prefix over k of dl_k * zbar_k for the cumulative part of the residual
  MatrixXd pref = MatrixXd::Zero(static_cast<Eigen::Index>(K + 1), p);
  for (std::size_t k = 0; k < K; ++k)
    pref.row(static_cast<Eigen::Index>(k + 1)) =
        pref.row(static_cast<Eigen::Index>(k)) + sums.dl[k] * zbar.row(static_cast<Eigen::Index>(k));

  const int n_groups = groups == RobustGroups::level1 ? static_cast<int>(data.n_level1())
                                                      : static_cast<int>(data.n_level2());
  MatrixXd U = MatrixXd::Zero(n_groups, p);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::RowVectorXd u = Eigen::RowVectorXd::Zero(p);
    if (d.event[i]) {
      int k = idx.event_k[i];
      u += d.X.row(static_cast<Eigen::Index>(i)) - zbar.row(k);
    }
    double w = std::exp(eta[static_cast<Eigen::Index>(i)] - sums.log_shift);
    u -= w * (sums.A[i] * d.X.row(static_cast<Eigen::Index>(i)) -
              (pref.row(idx.hi[i]) - pref.row(idx.lo[i])));
    int g = groups == RobustGroups::level1 ? data.level1_of(i) : data.level2_of(i);
    U.row(g) += u;
  }
  MatrixXd meat = U.transpose() * U;
  return model_cov * meat * model_cov;
}

}  // namespace detail

/// Cox proportional hazards fit by Newton-Raphson on internally standardized
/// covariates; estimates reported on the original scale. With robust_groups,
/// beta_cov is the grouped sandwich estimator; otherwise the inverse
/// information.
inline FrailtyFit fit_cox(const Dataset& data, RobustGroups robust_groups = RobustGroups::none,
                          std::optional<VectorXd> init = std::nullopt) {
  if (data.has_missing())
    throw ValidationError("fit_cox: covariates contain missing values; impute first");
  if (data.total_events() == 0) throw ValidationError("fit_cox: no events in dataset");
  auto std = detail::Standardizer::fit(data.covariates(), data.covariate_names());
  MatrixXd Xs = std.apply(data.covariates());
  RiskIndex idx = RiskIndex::from_events(data);
  CoxDesign d = CoxDesign::build(data, idx, Xs);

  VectorXd beta = VectorXd::Zero(d.p());
  if (init) beta = std.to_std(*init);
  NewtonResult nr = newton_maximize(d, beta);
  if (!nr.converged) {
    std::string msg = "fit_cox: Newton did not converge; last beta =";
    VectorXd bo = std.to_orig(beta);
    for (Eigen::Index c = 0; c < bo.size(); ++c) msg += " " + std::to_string(bo[c]);
    throw ComputeError(msg);
  }

  FrailtyFit fit;
  fit.covariate_names = data.covariate_names();
  fit.beta_hat = std.to_orig(beta);
  fit.monotone_flag = beta.lpNorm<Eigen::Infinity>() > 15.0;
  MatrixXd model_cov = nr.last.info.ldlt().solve(MatrixXd::Identity(d.p(), d.p()));
  if (robust_groups == RobustGroups::none) {
    fit.beta_cov = std.cov_to_orig(model_cov);
  } else {
    fit.beta_cov = std.cov_to_orig(
        detail::robust_cov(data, idx, d, beta, model_cov, robust_groups));
  }
  fit.loglik = nr.last.loglik_unpen;
  fit.converged = true;
  fit.iterations = nr.iterations;
  fit.training_level1 = data.level1_labels();
  return fit;
}

}  // namespace riskadj
