#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "riskadj/types.hpp"

namespace riskadj {

/// LOCF with NOCB for leading gaps: interior/trailing missings take the most
/// recent prior observation, leading missings take the earliest subsequent one.
/// All-missing series come back unchanged with the flag set.
struct FilledSeries {
  std::vector<double> values;
  bool all_missing = false;
};

inline FilledSeries locf_nocb(std::vector<double> series) {
  FilledSeries out;
  double last = kMissing;
  for (double& v : series) {
    if (is_missing(v))
      v = last;
    else
      last = v;
  }
  double first_observed = kMissing;
  for (double v : series)
    if (!is_missing(v)) {
      first_observed = v;
      break;
    }
  if (is_missing(first_observed)) {
    out.values = std::move(series);
    out.all_missing = true;
    return out;
  }
  for (double& v : series) {
    if (is_missing(v))
      v = first_observed;
    else
      break;
  }
  out.values = std::move(series);
  return out;
}

/// Replace each missing value by the max of observed values in the trailing
/// window [day - window_days, day], boundary inclusive; stays missing when the
/// window holds no observation.
inline std::vector<double> windowed_max_fill(std::vector<double> values,
                                             const std::vector<double>& days,
                                             double window_days = 365.0) {
  if (values.size() != days.size())
    throw ValidationError("windowed_max_fill: values/days length mismatch");
  if (!(window_days > 0.0)) throw ValidationError("windowed_max_fill: window must be positive");
  std::vector<double> out = values;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!is_missing(values[i])) continue;
    double best = kMissing;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (is_missing(values[k])) continue;
      if (days[k] <= days[i] && days[i] - days[k] <= window_days)
        if (is_missing(best) || values[k] > best) best = values[k];
    }
    out[i] = best;
  }
  return out;
}

/// M structurally identical dataset copies differing only in covariate values.
struct MIStack {
  std::vector<Dataset> copies;

  std::size_t M() const { return copies.size(); }
  const Dataset& copy(std::size_t l) const { return copies[l]; }
};

inline MIStack assemble_mi_stack(std::vector<Dataset> copies) {
  if (copies.empty()) throw ValidationError("assemble_mi_stack: need at least one copy");
  const Dataset& ref = copies.front();
  for (std::size_t l = 1; l < copies.size(); ++l) {
    const Dataset& d = copies[l];
    if (d.n_rows() != ref.n_rows())
      throw ValidationError("assemble_mi_stack: copy " + std::to_string(l + 1) + " has " +
                            std::to_string(d.n_rows()) + " rows, expected " +
                            std::to_string(ref.n_rows()));
    if (d.covariate_names() != ref.covariate_names())
      throw ValidationError("assemble_mi_stack: copy " + std::to_string(l + 1) +
                            " covariate names differ");
    for (std::size_t i = 0; i < ref.n_rows(); ++i) {
      AtRiskRow a = ref.row(i), b = d.row(i);
      if (!(a.group == b.group) || a.start != b.start || a.stop != b.stop ||
          a.event != b.event || a.encounter_index != b.encounter_index)
        throw ValidationError("assemble_mi_stack: copy " + std::to_string(l + 1) +
                              " differs structurally at row " + std::to_string(i) +
                              " (subject '" + b.group.level2 + "')");
    }
  }
  MIStack s;
  s.copies = std::move(copies);
  return s;
}

/// Deterministic LOCF/NOCB pass over every covariate, per subject, rows in
/// start order. Covariates whose all-missing-subject share exceeds
/// drop_threshold are dropped with a warning.
struct ImputeResult {
  Dataset dataset;
  std::vector<std::string> dropped_covariates;
  std::vector<std::string> warnings;
};

inline ImputeResult impute_locf_nocb(const Dataset& data, double drop_threshold = 0.5) {
  const std::size_t p = data.n_covariates();
  std::vector<AtRiskRow> rows;
  rows.reserve(data.n_rows());
  for (std::size_t i = 0; i < data.n_rows(); ++i) rows.push_back(data.row(i));

  std::map<std::string, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < rows.size(); ++i)
    by_subject[rows[i].group.level2].push_back(i);
  for (auto& [sub, idx] : by_subject)
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return rows[a].start < rows[b].start; });

  std::vector<std::size_t> flagged(p, 0);
  for (auto& [sub, idx] : by_subject) {
    for (std::size_t c = 0; c < p; ++c) {
      std::vector<double> series;
      series.reserve(idx.size());
      for (auto i : idx) series.push_back(rows[i].covariates[c]);
      FilledSeries f = locf_nocb(std::move(series));
      if (f.all_missing) {
        ++flagged[c];
        continue;
      }
      for (std::size_t k = 0; k < idx.size(); ++k) rows[idx[k]].covariates[c] = f.values[k];
    }
  }

  ImputeResult out{Dataset{}, {}, {}};
  std::vector<bool> keep(p, true);
  const double n_sub = static_cast<double>(by_subject.size());
  for (std::size_t c = 0; c < p; ++c) {
    if (static_cast<double>(flagged[c]) > drop_threshold * n_sub) {
      keep[c] = false;
      out.dropped_covariates.push_back(data.covariate_names()[c]);
      out.warnings.push_back("covariate '" + data.covariate_names()[c] + "' dropped: " +
                             std::to_string(flagged[c]) + "/" +
                             std::to_string(by_subject.size()) +
                             " subjects entirely missing");
    } else if (flagged[c] > 0) {
      out.warnings.push_back("covariate '" + data.covariate_names()[c] + "': " +
                             std::to_string(flagged[c]) + " subjects entirely missing");
    }
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < p; ++c)
    if (keep[c]) names.push_back(data.covariate_names()[c]);
  for (auto& r : rows) {
    std::vector<double> cov;
    cov.reserve(names.size());
    for (std::size_t c = 0; c < p; ++c)
      if (keep[c]) cov.push_back(r.covariates[c]);
    r.covariates = std::move(cov);
  }
  out.dataset = Dataset(std::move(rows), std::move(names), /*strict=*/false);
  return out;
}

/// Column subset of a dataset (selection iterations fit on survivors).
inline Dataset select_covariates(const Dataset& data, const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    auto it = std::find(data.covariate_names().begin(), data.covariate_names().end(), n);
    if (it == data.covariate_names().end())
      throw ValidationError("select_covariates: unknown covariate '" + n + "'");
    idx.push_back(static_cast<std::size_t>(it - data.covariate_names().begin()));
  }
  std::vector<AtRiskRow> rows;
  rows.reserve(data.n_rows());
  for (std::size_t i = 0; i < data.n_rows(); ++i) {
    AtRiskRow r = data.row(i);
    std::vector<double> cov;
    cov.reserve(idx.size());
    for (auto c : idx) cov.push_back(r.covariates[c]);
    r.covariates = std::move(cov);
    rows.push_back(std::move(r));
  }
  return Dataset(std::move(rows), names, /*strict=*/false);
}

}  // namespace riskadj
