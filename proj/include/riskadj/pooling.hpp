#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "riskadj/frailty.hpp"
#include "riskadj/imputation.hpp"
#include "riskadj/stats.hpp"

namespace riskadj {

/// Rubin's-rule pooled estimate across M imputations:
///   beta_bar = mean, Var = Wbar + (1 + 1/M) B,  B with divisor M-1.
/// T statistics reference a t distribution with the classical Rubin df
///   nu = (M-1) (1 + Wbar / ((1+1/M) B))^2  per coordinate; B = 0 gives the
/// normal reference (df = inf).
struct PooledEstimate {
  std::vector<std::string> names;
  VectorXd beta_bar;
  MatrixXd within;     // Wbar
  MatrixXd between;    // B
  MatrixXd total_var;  // Wbar + (1+1/M) B
  VectorXd t_stats;
  VectorXd p_values;
  VectorXd df;
  std::size_t M = 0;
};

inline PooledEstimate rubin_pool(const std::vector<VectorXd>& betas,
                                 const std::vector<MatrixXd>& covs,
                                 std::vector<std::string> names = {}) {
  const std::size_t M = betas.size();
  if (M < 2)
    throw ValidationError("rubin_pool: need M >= 2 imputations (between-variance undefined)");
  if (covs.size() != M) throw ValidationError("rubin_pool: betas/covs count mismatch");
  const Eigen::Index p = betas.front().size();
  for (const auto& b : betas)
    if (b.size() != p) throw ValidationError("rubin_pool: inconsistent beta dimensions");
  for (const auto& c : covs)
    if (c.rows() != p || c.cols() != p)
      throw ValidationError("rubin_pool: inconsistent covariance dimensions");

  PooledEstimate out;
  out.M = M;
  out.names = std::move(names);
  out.beta_bar = VectorXd::Zero(p);
  for (const auto& b : betas) out.beta_bar += b;
  out.beta_bar /= static_cast<double>(M);

  out.within = MatrixXd::Zero(p, p);
  for (const auto& c : covs) out.within += c;
  out.within /= static_cast<double>(M);

  out.between = MatrixXd::Zero(p, p);
  for (const auto& b : betas) {
    VectorXd d = b - out.beta_bar;
    out.between += d * d.transpose();
  }
  out.between /= static_cast<double>(M - 1);

  const double infl = 1.0 + 1.0 / static_cast<double>(M);
  out.total_var = out.within + infl * out.between;

  out.t_stats.resize(p);
  out.p_values.resize(p);
  out.df.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    double v = out.total_var(i, i);
    out.t_stats[i] = out.beta_bar[i] / std::sqrt(v);
    double b = infl * out.between(i, i);
    if (b <= 0.0) {
      out.df[i] = std::numeric_limits<double>::infinity();
    } else {
      double r = out.within(i, i) / b;
      out.df[i] = static_cast<double>(M - 1) * (1.0 + r) * (1.0 + r);
    }
    out.p_values[i] = t_p_value(out.t_stats[i], out.df[i]);
  }
  return out;
}

/// Modified step-down selection: per iteration, drop up to three covariates
/// with pooled p >= 0.5, else up to two with p strictly in (0.25, 0.5), else
/// the single largest; stop once every p < 0.1. Ties in the p ranking break
/// by covariate name.
struct SelectionThresholds {
  double drop3 = 0.5;
  double drop2 = 0.25;
  double stop = 0.1;
};

struct SelectionTrace {
  struct Iteration {
    std::vector<std::string> dropped;
    std::vector<double> p_values;
    std::string rule;  // drop3 | drop2 | drop1 | stop
  };
  std::vector<Iteration> iterations;
  std::vector<std::string> final_covariates;
  std::optional<PooledEstimate> final_estimate;
};

struct SelectionError : ComputeError {
  SelectionError(const std::string& msg, SelectionTrace t)
      : ComputeError(msg), trace(std::move(t)) {}
  SelectionTrace trace;
};

namespace detail {

inline PooledEstimate pooled_fit(const MIStack& stack, const FitConfig& config,
                                 const std::vector<std::string>& covariates) {
  std::vector<VectorXd> betas;
  std::vector<MatrixXd> covs;
  for (std::size_t l = 0; l < stack.M(); ++l) {
    Dataset sub = select_covariates(stack.copy(l), covariates);
    FrailtyFit fit = fit_model(sub, config);
    betas.push_back(fit.beta_hat);
    covs.push_back(fit.beta_cov);
  }
  return rubin_pool(betas, covs, covariates);
}

}  // namespace detail

inline SelectionTrace stepdown_select(const MIStack& stack, const FitConfig& config,
                                      const SelectionThresholds& thresholds = {}) {
  if (stack.M() < 2) throw ValidationError("stepdown_select: need M >= 2 imputations");
  if (stack.copy(0).n_covariates() == 0)
    throw ValidationError("stepdown_select: need at least one covariate");

  SelectionTrace trace;
  std::vector<std::string> current = stack.copy(0).covariate_names();
  while (!current.empty()) {
    PooledEstimate pooled;
    try {
      pooled = detail::pooled_fit(stack, config, current);
    } catch (const std::exception& e) {
      throw SelectionError(std::string("stepdown_select: fit failed: ") + e.what(), trace);
    }
    // rank by p descending, names ascending on ties
    std::vector<std::size_t> order(current.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      double pa = pooled.p_values[static_cast<Eigen::Index>(a)];
      double pb = pooled.p_values[static_cast<Eigen::Index>(b)];
      if (pa != pb) return pa > pb;
      return current[a] < current[b];
    });
    double max_p = pooled.p_values[static_cast<Eigen::Index>(order.front())];
    if (max_p < thresholds.stop) {
      trace.iterations.push_back({{}, {}, "stop"});
      trace.final_covariates = current;
      trace.final_estimate = std::move(pooled);
      return trace;
    }

    std::size_t count = 0;
    double cutoff = 0.0;
    bool strict = false;
    std::string rule;
    if (max_p >= thresholds.drop3) {
      count = 3;
      cutoff = thresholds.drop3;
      rule = "drop3";
    } else if (max_p > thresholds.drop2) {
      count = 2;
      cutoff = thresholds.drop2;
      strict = true;  // p strictly above drop2
      rule = "drop2";
    } else {
      count = 1;
      cutoff = thresholds.stop;
      rule = "drop1";
    }
    SelectionTrace::Iteration it;
    it.rule = rule;
    for (std::size_t k = 0; k < order.size() && it.dropped.size() < count; ++k) {
      double p = pooled.p_values[static_cast<Eigen::Index>(order[k])];
      if (strict ? (p > cutoff) : (p >= cutoff)) {
        it.dropped.push_back(current[order[k]]);
        it.p_values.push_back(p);
      }
    }
    std::vector<std::string> next;
    for (const auto& name : current)
      if (std::find(it.dropped.begin(), it.dropped.end(), name) == it.dropped.end())
        next.push_back(name);
    trace.iterations.push_back(std::move(it));
    current = std::move(next);
  }
  trace.final_covariates = {};
  return trace;
}

}  // namespace riskadj
