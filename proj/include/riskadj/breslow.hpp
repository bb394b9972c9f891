#pragma once

#include <cmath>
#include <vector>

#include "riskadj/risk_engine.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

/// Step-function baseline cumulative hazard: jump times and increments.
struct HazardTable {
  std::vector<double> times;       // strictly increasing
  std::vector<double> increments;  // dLambda at each time, nonnegative
  std::vector<double> cumulative;  // running sums

  std::size_t size() const { return times.size(); }
};

/// Extended Breslow estimator: at each distinct event time s the increment is
/// (events at s) / sum over at-risk rows of exp(Z beta + offset). Offsets
/// carry random-effect contributions when the prediction config includes them.
inline HazardTable breslow_hazard(const VectorXd& beta, const VectorXd& offsets,
                                  const Dataset& data) {
  if (!beta.allFinite()) throw ValidationError("breslow_hazard: beta must be finite");
  if (static_cast<std::size_t>(beta.size()) != data.n_covariates())
    throw ValidationError("breslow_hazard: beta length does not match covariate count");
  RiskIndex idx = RiskIndex::from_events(data);
  VectorXd eta = data.covariates() * beta;
  if (offsets.size()) eta += offsets;
  RiskSums sums = RiskSums::compute(idx, eta);
  HazardTable h;
  h.times = idx.times;
  h.increments.resize(idx.n_times());
  h.cumulative.resize(idx.n_times());
  double acc = 0.0;
  for (std::size_t k = 0; k < idx.n_times(); ++k) {
    if (!(sums.S0[k] > 0.0))
      throw ComputeError("breslow_hazard: empty risk set at event time " +
                         std::to_string(idx.times[k]));
    h.increments[k] = idx.dcount[k] / sums.S0[k] * std::exp(-sums.log_shift);
    acc += h.increments[k];
    h.cumulative[k] = acc;
  }
  return h;
}

}  // namespace riskadj
