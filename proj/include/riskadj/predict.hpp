#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "riskadj/breslow.hpp"
#include "riskadj/frailty.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

/// Expected risk-adjusted event counts for every level-1 group of `data`,
/// in label order: N^_jl = sum over rows and hazard jump times s in (L, U] of
/// exp(Z beta) dLambda(s). The exponent includes fitted random effects only
/// when `include_frailty` is set (default follows the literal estimator).
inline std::vector<double> expected_events_all(const FrailtyFit& fit, const HazardTable& hazard,
                                               const Dataset& data,
                                               bool include_frailty = false) {
  if (data.has_missing())
    throw ValidationError("expected_events: covariates contain missing values");
  {
    std::unordered_set<std::string> trained(fit.training_level1.begin(),
                                            fit.training_level1.end());
    for (const auto& lab : data.level1_labels())
      if (!trained.count(lab))
        throw ValidationError("evaluation program '" + lab + "' absent from training set");
  }
  RiskIndex idx = RiskIndex::against_times(data, hazard.times);
  VectorXd eta = data.covariates() * fit.beta_hat;
  if (include_frailty) eta += frailty_offsets(fit, data);

  // per-row hazard mass over the row's jump range, via the cumulative table
  std::vector<double> out(data.n_level1(), 0.0);
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    int lo = idx.lo[i], hi = idx.hi[i];
    if (lo >= hi) continue;
    double mass = hazard.cumulative[static_cast<std::size_t>(hi - 1)] -
                  (lo > 0 ? hazard.cumulative[static_cast<std::size_t>(lo - 1)] : 0.0);
    out[static_cast<std::size_t>(data.level1_of(i))] +=
        std::exp(eta[static_cast<Eigen::Index>(i)]) * mass;
  }
  return out;
}

/// Expected count for a single level-1 group (Eq. 4 for one j).
inline double expected_events(const FrailtyFit& fit, const HazardTable& hazard,
                              const Dataset& data, const std::string& level1,
                              bool include_frailty = false) {
  int j = data.level1_index(level1);
  if (j < 0) throw ValidationError("unknown level-1 group '" + level1 + "'");
  return expected_events_all(fit, hazard, data, include_frailty)[static_cast<std::size_t>(j)];
}

/// Mean over MI copies (Eq. 5).
inline double pool_expected(const std::vector<double>& per_copy) {
  if (per_copy.empty()) throw ValidationError("pool_expected: empty vector");
  double s = 0.0;
  for (double v : per_copy) s += v;
  return s / static_cast<double>(per_copy.size());
}

enum class Flag { below, within, above };

inline const char* to_string(Flag f) {
  switch (f) {
    case Flag::below: return "below";
    case Flag::within: return "within";
    case Flag::above: return "above";
  }
  return "?";
}

/// Per-program prediction with the three-component variance and CI decision.
struct ProgramPrediction {
  std::string level1;
  std::size_t observed = 0;
  std::vector<double> expected_per_copy;
  double expected_pooled = 0.0;
  double var_poisson = 0.0;
  double var_across = 0.0;
  double var_mi = 0.0;
  double total_variance = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0, ci_level = 0.0;
  double z = 0.0, p_value = 1.0;
  Flag flag = Flag::within;
};

}  // namespace riskadj
