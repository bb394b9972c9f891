#pragma once

// Shared fixture builders for the test suites.

#include <string>
#include <vector>

#include "riskadj/rng.hpp"
#include "riskadj/types.hpp"

namespace riskadj::testing {

inline AtRiskRow make_row(const std::string& prog, const std::string& subj, double start,
                          double stop, bool event, std::vector<double> cov) {
  AtRiskRow r;
  r.group.level1 = prog;
  r.group.level2 = subj;
  r.start = start;
  r.stop = stop;
  r.event = event;
  r.covariates = std::move(cov);
  return r;
}

/// Random single-interval dataset: n subjects spread over n_prog programs,
/// independent uniform covariates, events assigned at random stop times.
/// Covariates are independent of event status unless beta is supplied, in
/// which case event probability follows a logistic in the linear predictor.
inline Dataset random_dataset(std::uint64_t seed, std::size_t n, std::size_t n_prog,
                              std::size_t p, double event_rate = 0.4,
                              const std::vector<double>& beta = {}) {
  Rng rng(seed);
  std::vector<AtRiskRow> rows;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < p; ++c) names.push_back("x" + std::to_string(c + 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> cov(p);
    for (auto& v : cov) v = rng.normal();
    double stop = 1.0 + 99.0 * rng.uniform01();
    bool event;
    if (beta.empty()) {
      event = rng.uniform01() < event_rate;
    } else {
      double lp = 0;
      for (std::size_t c = 0; c < p; ++c) lp += beta[c] * cov[c];
      event = rng.uniform01() < 1.0 / (1.0 + std::exp(-(lp + std::log(event_rate / (1 - event_rate)))));
    }
    rows.push_back(make_row("P" + std::to_string(1 + i % n_prog), "S" + std::to_string(i + 1),
                            0.0, stop, event, std::move(cov)));
  }
  return Dataset(std::move(rows), names);
}

}  // namespace riskadj::testing
