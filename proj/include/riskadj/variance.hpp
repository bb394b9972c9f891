#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "riskadj/predict.hpp"
#include "riskadj/rng.hpp"
#include "riskadj/stats.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

/// Block-jackknife sampling plan over level-1 groups: m disjoint blocks of
/// q = floor(N/m) ids drawn without replacement; leftovers recorded.
struct BlockPlan {
  int m = 0;
  int q = 0;
  std::vector<std::string> sampled_level1;            // the D* sample, m*q ids
  std::vector<std::vector<std::string>> blocks;       // partition of sampled_level1
  std::vector<std::string> excluded_level1;           // N - m*q leftover ids
  std::uint64_t seed = 0;
};

inline BlockPlan block_partition(const std::vector<std::string>& level1_ids, int m,
                                 std::uint64_t seed) {
  const int N = static_cast<int>(level1_ids.size());
  if (m < 2 || m > N)
    throw ValidationError("block_partition: need 2 <= m <= N (m=" + std::to_string(m) +
                          ", N=" + std::to_string(N) + ")");
  BlockPlan plan;
  plan.m = m;
  plan.q = N / m;  // largest q with m*q <= N
  plan.seed = seed;
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(static_cast<std::size_t>(N),
                                            static_cast<std::size_t>(plan.m * plan.q));
  std::unordered_set<std::size_t> used(idx.begin(), idx.end());
  for (std::size_t i : idx) plan.sampled_level1.push_back(level1_ids[i]);
  for (int b = 0; b < m; ++b)
    plan.blocks.emplace_back(plan.sampled_level1.begin() + b * plan.q,
                             plan.sampled_level1.begin() + (b + 1) * plan.q);
  for (std::size_t i = 0; i < level1_ids.size(); ++i)
    if (!used.count(i)) plan.excluded_level1.push_back(level1_ids[i]);
  return plan;
}

inline BlockPlan block_partition(int N, int m, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) ids.push_back(std::to_string(i));
  return block_partition(ids, m, seed);
}

namespace detail {

/// Refit on a subset of training level-1 groups, then evaluate expected counts
/// for every program against the full evaluation data.
inline std::vector<double> leave_out_estimates(const Dataset& train, const Dataset& eval,
                                               const FitConfig& config, const FrailtyFit& warm,
                                               const std::unordered_set<std::string>& drop) {
  Dataset sub = train.restrict_level1(
      [&](const std::string& lab) { return !drop.count(lab); });
  FrailtyFit fit = refit_model(sub, config, warm);
  fit.training_level1 = eval.level1_labels();  // every program gets a leave-out estimate
  VectorXd off;
  if (config.include_frailty_in_prediction) off = frailty_offsets(fit, sub);
  HazardTable hz = breslow_hazard(fit.beta_hat, off, sub);
  return expected_events_all(fit, hz, eval, config.include_frailty_in_prediction);
}

}  // namespace detail

/// Across-group variance by the block jackknife:
///   S*_j = (m-1) * q * sum_b (theta*_j^(-b) - thetabar*_j)^2
/// with theta*_j^(-b) the expected count for program j refit on the sampled
/// groups minus block b, evaluated against the full evaluation data.
/// `classical` switches to the delete-d normalization (m-1)/m * sum.
inline std::vector<double> block_jackknife_variance(const Dataset& train, const Dataset& eval,
                                                    const FitConfig& config,
                                                    const BlockPlan& plan,
                                                    const FrailtyFit& full_fit,
                                                    bool classical = false) {
  const std::size_t J = eval.n_level1();
  // refits see only the sampled ids minus the dropped block
  std::unordered_set<std::string> sampled(plan.sampled_level1.begin(),
                                          plan.sampled_level1.end());
  Dataset dstar = train.restrict_level1(
      [&](const std::string& lab) { return sampled.count(lab) > 0; });
  std::vector<std::vector<double>> est(static_cast<std::size_t>(plan.m));
  for (int b = 0; b < plan.m; ++b) {
    std::unordered_set<std::string> drop(plan.blocks[static_cast<std::size_t>(b)].begin(),
                                         plan.blocks[static_cast<std::size_t>(b)].end());
    try {
      est[static_cast<std::size_t>(b)] =
          detail::leave_out_estimates(dstar, eval, config, full_fit, drop);
    } catch (const std::exception& e) {
      throw ComputeError("block_jackknife_variance: refit for block " + std::to_string(b) +
                         " failed: " + e.what());
    }
  }
  std::vector<double> out(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    double bar = 0.0;
    for (int b = 0; b < plan.m; ++b) bar += est[static_cast<std::size_t>(b)][j];
    bar /= plan.m;
    double ss = 0.0;
    for (int b = 0; b < plan.m; ++b) {
      double d = est[static_cast<std::size_t>(b)][j] - bar;
      ss += d * d;
    }
    out[j] = classical ? (static_cast<double>(plan.m - 1) / plan.m) * ss
                       : static_cast<double>(plan.m - 1) * plan.q * ss;
  }
  return out;
}

/// Leave-one-group-out jackknife:
///   V^_j = (N-1) * sum_v (N^_j^(-v) - N^_j)^2
/// with N^_j the full-data estimate.
inline std::vector<double> loo_jackknife_variance(const Dataset& train, const Dataset& eval,
                                                  const FitConfig& config,
                                                  const FrailtyFit& full_fit) {
  const std::size_t N = train.n_level1();
  if (N < 2) throw ValidationError("loo_jackknife_variance: need N >= 2 level-1 groups");
  VectorXd off;
  if (config.include_frailty_in_prediction) off = frailty_offsets(full_fit, train);
  HazardTable hz = breslow_hazard(full_fit.beta_hat, off, train);
  FrailtyFit full_for_eval = full_fit;
  full_for_eval.training_level1 = eval.level1_labels();
  std::vector<double> full_est =
      expected_events_all(full_for_eval, hz, eval, config.include_frailty_in_prediction);

  const std::size_t J = eval.n_level1();
  std::vector<double> out(J, 0.0);
  for (std::size_t v = 0; v < N; ++v) {
    std::unordered_set<std::string> drop{train.level1_labels()[v]};
    std::vector<double> est;
    try {
      est = detail::leave_out_estimates(train, eval, config, full_fit, drop);
    } catch (const std::exception& e) {
      throw ComputeError("loo_jackknife_variance: refit without group '" +
                         train.level1_labels()[v] + "' failed: " + e.what());
    }
    for (std::size_t j = 0; j < J; ++j) {
      double d = est[j] - full_est[j];
      out[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < J; ++j) out[j] *= static_cast<double>(N - 1);
  return out;
}

/// MI variance component, divisor M exactly as printed:
///   s^2_j = (1/M) sum_l (N^_jl - N^_j.)^2 ; zero when M = 1.
inline double mi_variance(const std::vector<double>& per_copy) {
  if (per_copy.empty()) throw ValidationError("mi_variance: empty vector");
  double m = pool_expected(per_copy);
  double s = 0.0;
  for (double v : per_copy) s += (v - m) * (v - m);
  return s / static_cast<double>(per_copy.size());
}

inline double total_variance(double poisson, double across, double mi) {
  if (poisson < 0.0 || across < 0.0 || mi < 0.0)
    throw ValidationError("total_variance: components must be nonnegative");
  return poisson + across + mi;
}

/// Z-test of observed vs expected (Eq. 7); two-sided p from the standard normal.
inline std::pair<double, double> z_test(double observed, double expected, double variance) {
  if (!(variance > 0.0)) throw ValidationError("z_test: variance must be strictly positive");
  double t = (observed - expected) / std::sqrt(variance);
  return {t, 2.0 * norm_cdf(-std::fabs(t))};
}

enum class CiMode { two_sided, lower_only, upper_only, asymmetric };

/// CI for the expected count (Eq. 8). Two-sided by default; one-sided modes
/// leave the open side infinite; asymmetric splits alpha as (alpha_lo_share,
/// 1 - alpha_lo_share).
struct CiConfig {
  CiMode mode = CiMode::two_sided;
  double alpha_lo_share = 0.5;
};

inline std::pair<double, double> confidence_interval(double expected, double variance,
                                                     double alpha,
                                                     const CiConfig& cfg = {}) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("confidence_interval: alpha must be in (0,1)");
  if (variance < 0.0) throw ValidationError("confidence_interval: negative variance");
  const double sd = std::sqrt(variance);
  const double inf = std::numeric_limits<double>::infinity();
  switch (cfg.mode) {
    case CiMode::two_sided: {
      double z = norm_quantile(1.0 - 0.5 * alpha);
      return {expected - z * sd, expected + z * sd};
    }
    case CiMode::lower_only: {
      double z = norm_quantile(1.0 - alpha);
      return {expected - z * sd, inf};
    }
    case CiMode::upper_only: {
      double z = norm_quantile(1.0 - alpha);
      return {-inf, expected + z * sd};
    }
    case CiMode::asymmetric: {
      double alo = alpha * cfg.alpha_lo_share;
      double ahi = alpha - alo;
      return {expected - norm_quantile(1.0 - alo) * sd,
              expected + norm_quantile(1.0 - ahi) * sd};
    }
  }
  throw ComputeError("unreachable");
}

inline Flag flag_decision(double observed, double lo, double hi) {
  if (observed > hi) return Flag::above;
  if (observed < lo) return Flag::below;
  return Flag::within;  // boundaries inclusive
}

/// Fraction of programs whose observed count lies inside [lo, hi], inclusive.
inline double coverage(const std::vector<ProgramPrediction>& predictions,
                       const std::vector<std::pair<std::string, std::size_t>>& observed) {
  if (predictions.size() != observed.size())
    throw ValidationError("coverage: prediction/observed program sets differ in size");
  double covered = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].level1 != observed[i].first)
      throw ValidationError("coverage: program mismatch at position " + std::to_string(i) +
                            " ('" + predictions[i].level1 + "' vs '" + observed[i].first + "')");
    double o = static_cast<double>(observed[i].second);
    if (o >= predictions[i].ci_lo && o <= predictions[i].ci_hi) covered += 1.0;
  }
  return covered / static_cast<double>(predictions.size());
}

}  // namespace riskadj
