#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "riskadj/cox.hpp"
#include "riskadj/risk_engine.hpp"

namespace riskadj {

/// Random-intercept specification: one or two grouping factors.
struct RandomEffectSpec {
  bool level1 = true;
  bool level2 = false;
  Structure structure = Structure::nested;
  double variance_init_level1 = 0.2;
  double variance_init_level2 = 0.2;

  void validate() const {
    if (!level1 && !level2)
      throw ValidationError("RandomEffectSpec: at least one grouping term required");
    if (variance_init_level1 <= 0.0 || variance_init_level2 <= 0.0)
      throw ValidationError("RandomEffectSpec: variance inits must be strictly positive");
  }
};

/// How resampling refits (jackknife blocks) treat the variance parameters.
enum class ThetaRefit { full_search, local_search, fixed };

struct FitConfig {
  enum class Model { cox, frailty };
  Model model = Model::frailty;
  RandomEffectSpec spec;
  RobustGroups robust = RobustGroups::none;
  ThetaRefit resample_theta = ThetaRefit::local_search;
  bool include_frailty_in_prediction = false;
};

namespace detail {

inline constexpr double kThetaLower = 1e-8;
inline constexpr double kThetaUpper = 10.0;
inline constexpr double kLogThetaTol = 1e-4;

/// Golden-section maximization of f on [lo, hi]; returns argmax.
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol) {
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

struct FrailtyProblem {
  CoxDesign design;
  std::vector<std::string> term_names;      // "level1" / "level2"
  std::vector<std::vector<std::string>> term_labels;
  Standardizer std;
  Eigen::Index p = 0;

  Eigen::Index dim() const { return design.dim(); }
};

inline FrailtyProblem make_frailty_problem(const Dataset& data, const RiskIndex& idx,
                                           const RandomEffectSpec& spec) {
  FrailtyProblem fp;
  fp.std = Standardizer::fit(data.covariates(), data.covariate_names());
  MatrixXd Xs = fp.std.apply(data.covariates());
  std::vector<RandomEffectTerm> terms;
  if (spec.level1) {
    RandomEffectTerm t;
    t.n_groups = static_cast<int>(data.n_level1());
    t.group.resize(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i) t.group[i] = data.level1_of(i);
    terms.push_back(std::move(t));
    fp.term_names.push_back("level1");
    fp.term_labels.push_back(data.level1_labels());
  }
  if (spec.level2) {
    RandomEffectTerm t;
    t.n_groups = static_cast<int>(data.n_level2());
    t.group.resize(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i) t.group[i] = data.level2_of(i);
    terms.push_back(std::move(t));
    fp.term_names.push_back("level2");
    fp.term_labels.push_back(data.level2_labels());
  }
  fp.design = CoxDesign::build(data, idx, Xs, std::move(terms));
  fp.p = fp.design.p();
  return fp;
}

/// Laplace-type integrated log-likelihood at theta: maximize the penalized
/// partial likelihood jointly over (beta, b), then
///   ILL = PPL(beta^, b^) - 1/2 sum_t G_t log theta_t - 1/2 log det K_bb,
/// with K_bb the b-block of the penalized information at the optimum.
struct ProfileEval {
  double ill = -std::numeric_limits<double>::infinity();
  int newton_iters = 0;
  bool converged = false;
};

inline ProfileEval profile_eval(const FrailtyProblem& fp, const std::vector<double>& theta,
                                VectorXd& xi) {
  std::vector<double> inv_theta;
  inv_theta.reserve(theta.size());
  for (double t : theta) inv_theta.push_back(1.0 / t);
  NewtonResult nr = newton_maximize(fp.design, xi, inv_theta);
  ProfileEval pe;
  pe.newton_iters = nr.iterations;
  pe.converged = nr.converged;
  if (!nr.converged) return pe;
  const Eigen::Index G = fp.dim() - fp.p;
  double logdet = 0.0;
  {
    MatrixXd Kbb = nr.last.info.bottomRightCorner(G, G);
    Eigen::LLT<MatrixXd> llt(Kbb);
    if (llt.info() != Eigen::Success) return pe;  // leave at -inf
    for (Eigen::Index i = 0; i < G; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  }
  double ill = nr.last.loglik - 0.5 * logdet;
  Eigen::Index off = fp.p;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    Eigen::Index g = fp.design.terms[t].n_groups;
    ill -= 0.5 * static_cast<double>(g) * std::log(theta[t]);
    off += g;
  }
  pe.ill = ill;
  pe.converged = true;
  return pe;
}

}  // namespace detail

/// Mixed-effect Andersen-Gill fit: penalized partial likelihood over
/// (beta, b) by Newton iterations, profile (integrated Laplace) maximization
/// over each theta by golden section on log theta in [1e-8, 10].
/// `theta_fixed` pins the variances (resampling refits with ThetaRefit::fixed);
/// `theta_bracket_nats` narrows the search around the init (local_search).
inline FrailtyFit fit_frailty(const Dataset& data, const RandomEffectSpec& spec,
                              std::optional<VectorXd> init = std::nullopt,
                              std::optional<std::vector<double>> theta_fixed = std::nullopt,
                              std::optional<double> theta_bracket_nats = std::nullopt,
                              std::optional<std::vector<double>> theta_init_override =
                                  std::nullopt) {
  spec.validate();
  if (data.has_missing())
    throw ValidationError("fit_frailty: covariates contain missing values; impute first");
  if (data.total_events() == 0) throw ValidationError("fit_frailty: no events in dataset");

  RiskIndex idx = RiskIndex::from_events(data);
  detail::FrailtyProblem fp = detail::make_frailty_problem(data, idx, spec);
  const std::size_t n_terms = fp.design.terms.size();

  VectorXd xi = VectorXd::Zero(fp.dim());
  if (init) xi.head(fp.p) = fp.std.to_std(*init);

  std::vector<double> theta(n_terms);
  for (std::size_t t = 0; t < n_terms; ++t)
    theta[t] = fp.term_names[t] == "level1" ? spec.variance_init_level1
                                            : spec.variance_init_level2;
  if (theta_init_override) theta = *theta_init_override;
  for (double& th : theta)
    th = std::clamp(th, detail::kThetaLower, detail::kThetaUpper);

  int total_iters = 0;
  bool inner_ok = true;
  auto eval_at = [&](std::vector<double> th) {
    detail::ProfileEval pe = detail::profile_eval(fp, th, xi);
    total_iters += pe.newton_iters;
    if (!pe.converged) inner_ok = false;
    return pe.ill;
  };

  if (theta_fixed) {
    theta = *theta_fixed;
    for (double& th : theta) th = std::clamp(th, detail::kThetaLower, detail::kThetaUpper);
    eval_at(theta);
  } else {
    const double lo_all = std::log(detail::kThetaLower);
    const double hi_all = std::log(detail::kThetaUpper);
    const int sweeps = n_terms > 1 ? 2 : 1;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t t = 0; t < n_terms; ++t) {
        double lo = lo_all, hi = hi_all;
        if (theta_bracket_nats) {
          lo = std::max(lo_all, std::log(theta[t]) - *theta_bracket_nats);
          hi = std::min(hi_all, std::log(theta[t]) + *theta_bracket_nats);
        }
        double best = detail::golden_max(
            [&](double lt) {
              std::vector<double> th = theta;
              th[t] = std::exp(lt);
              return eval_at(th);
            },
            lo, hi, detail::kLogThetaTol);
        theta[t] = std::exp(best);
      }
    }
  }

  // final inner solve at the chosen theta, with the Hessian for covariances
  std::vector<double> inv_theta;
  for (double t : theta) inv_theta.push_back(1.0 / t);
  NewtonResult nr = newton_maximize(fp.design, xi, inv_theta);
  if (!nr.converged || !inner_ok) {
    std::string msg = "fit_frailty: inner Newton did not converge; last beta =";
    VectorXd bo = fp.std.to_orig(xi.head(fp.p));
    for (Eigen::Index c = 0; c < bo.size(); ++c) msg += " " + std::to_string(bo[c]);
    throw ComputeError(msg);
  }
  total_iters += nr.iterations;

  FrailtyFit fit;
  fit.covariate_names = data.covariate_names();
  fit.beta_hat = fp.std.to_orig(xi.head(fp.p));
  fit.monotone_flag = xi.head(fp.p).lpNorm<Eigen::Infinity>() > 15.0;
  MatrixXd full_cov = nr.last.info.ldlt().solve(MatrixXd::Identity(fp.dim(), fp.dim()));
  fit.beta_cov = fp.std.cov_to_orig(full_cov.topLeftCorner(fp.p, fp.p));
  fit.loglik = nr.last.loglik;
  fit.converged = true;
  fit.iterations = total_iters;
  fit.training_level1 = data.level1_labels();

  Eigen::Index off = fp.p;
  for (std::size_t t = 0; t < n_terms; ++t) {
    FrailtyFit::RandomEffects re;
    re.term = fp.term_names[t];
    re.theta = theta[t];
    re.labels = fp.term_labels[t];
    re.b = xi.segment(off, fp.design.terms[t].n_groups);
    if (theta[t] <= detail::kThetaLower * std::exp(2.0 * detail::kLogThetaTol))
      fit.degenerate_random_effect = true;
    off += fp.design.terms[t].n_groups;
    fit.random_effects.push_back(std::move(re));
  }
  return fit;
}

/// Config-driven fit: Cox initial values feed the frailty fit, matching the
/// two-stage procedure used throughout the pipeline.
inline FrailtyFit fit_model(const Dataset& data, const FitConfig& config) {
  if (config.model == FitConfig::Model::cox) return fit_cox(data, config.robust);
  FrailtyFit cox = fit_cox(data, RobustGroups::none);
  return fit_frailty(data, config.spec, cox.beta_hat);
}

/// Resampling refit warm-started from a full-data fit: beta from the warm fit,
/// theta handled per config (fixed, local bracket, or full re-search).
inline FrailtyFit refit_model(const Dataset& data, const FitConfig& config,
                              const FrailtyFit& warm) {
  if (config.model == FitConfig::Model::cox)
    return fit_cox(data, config.robust, warm.beta_hat);
  std::vector<double> warm_theta;
  for (const auto& re : warm.random_effects) warm_theta.push_back(re.theta);
  switch (config.resample_theta) {
    case ThetaRefit::fixed:
      return fit_frailty(data, config.spec, warm.beta_hat, warm_theta);
    case ThetaRefit::local_search:
      return fit_frailty(data, config.spec, warm.beta_hat, std::nullopt, 2.0, warm_theta);
    case ThetaRefit::full_search:
      return fit_frailty(data, config.spec, warm.beta_hat);
  }
  throw ComputeError("unreachable");
}

/// Per-row random-effect offsets from a fit, mapped by group label; groups
/// absent from the fit contribute 0.
inline VectorXd frailty_offsets(const FrailtyFit& fit, const Dataset& data) {
  VectorXd off = VectorXd::Zero(static_cast<Eigen::Index>(data.n_rows()));
  for (const auto& re : fit.random_effects) {
    std::unordered_map<std::string, double> by_label;
    for (std::size_t g = 0; g < re.labels.size(); ++g)
      by_label[re.labels[g]] = re.b[static_cast<Eigen::Index>(g)];
    for (std::size_t i = 0; i < data.n_rows(); ++i) {
      const std::string& lab = re.term == "level1"
                                   ? data.level1_labels()[static_cast<std::size_t>(data.level1_of(i))]
                                   : data.level2_labels()[static_cast<std::size_t>(data.level2_of(i))];
      auto it = by_label.find(lab);
      if (it != by_label.end()) off[static_cast<Eigen::Index>(i)] += it->second;
    }
  }
  return off;
}

}  // namespace riskadj
