#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace riskadj {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Input/config problems: bad schema, bad arguments, invariant violations.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Schema/column-mapping problems while reading files.
struct SchemaError : ValidationError {
  using ValidationError::ValidationError;
};

/// Numerical failures: non-convergence, singular systems, overflow.
struct ComputeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double x) { return std::isnan(x); }

/// Two-level group label: level1 = program (index j), level2 = subject (index i).
struct GroupId {
  std::string level1;
  std::string level2;

  bool operator==(const GroupId&) const = default;
};

/// One counting-process row: at-risk interval (start, stop] with covariate
/// values held constant on the interval and an event indicator at stop.
struct AtRiskRow {
  GroupId group;
  int encounter_index = 0;
  double start = 0;
  double stop = 0;
  bool event = false;
  std::vector<double> covariates;
};

enum class Structure { nested, crossed };

inline const char* to_string(Structure s) {
  return s == Structure::nested ? "nested" : "crossed";
}

/// Rules governing at-risk interval construction from raw encounters.
struct IntervalRules {
  int washout_days = 730;
  int lookback_days = 730;
  int max_gap_days = 548;  // 18 months, 365.25 * 1.5 rounded
  bool exclude_post_transplant = true;
  bool infant_at_risk = true;
  double cutoff_day = std::numeric_limits<double>::infinity();

  void validate() const {
    if (washout_days <= 0 || lookback_days <= 0 || max_gap_days <= 0)
      throw ValidationError("IntervalRules: day counts must be strictly positive");
  }
};

/// Immutable counting-process dataset with interned group labels.
/// Rows are stored column-wise; row(i) materializes an AtRiskRow view.
class Dataset {
 public:
  Dataset() = default;

  /// strict=true enforces the per-subject zero-start invariant in addition to
  /// interval ordering; derived datasets (subsets, truncations) relax it.
  Dataset(std::vector<AtRiskRow> rows, std::vector<std::string> covariate_names,
          bool strict = true)
      : covariate_names_(std::move(covariate_names)) {
    const std::size_t p = covariate_names_.size();
    n_ = rows.size();
    start_.resize(n_);
    stop_.resize(n_);
    event_.resize(n_);
    enc_.resize(n_);
    l1_.resize(n_);
    l2_.resize(n_);
    X_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(p));

    // Interned label tables, sorted for stable downstream output order.
    std::vector<std::string> l1s, l2s;
    for (const auto& r : rows) {
      l1s.push_back(r.group.level1);
      l2s.push_back(r.group.level2);
    }
    std::sort(l1s.begin(), l1s.end());
    l1s.erase(std::unique(l1s.begin(), l1s.end()), l1s.end());
    std::sort(l2s.begin(), l2s.end());
    l2s.erase(std::unique(l2s.begin(), l2s.end()), l2s.end());
    level1_labels_ = std::move(l1s);
    level2_labels_ = std::move(l2s);

    for (std::size_t i = 0; i < n_; ++i) {
      const auto& r = rows[i];
      if (!(r.start < r.stop))
        throw ValidationError("row for subject '" + r.group.level2 +
                              "': start must be < stop (got start=" +
                              std::to_string(r.start) + ", stop=" + std::to_string(r.stop) + ")");
      if (r.covariates.size() != p)
        throw ValidationError("row for subject '" + r.group.level2 +
                              "': expected " + std::to_string(p) + " covariates, got " +
                              std::to_string(r.covariates.size()));
      start_[i] = r.start;
      stop_[i] = r.stop;
      event_[i] = r.event ? 1 : 0;
      enc_[i] = r.encounter_index;
      l1_[i] = label_index(level1_labels_, r.group.level1);
      l2_[i] = label_index(level2_labels_, r.group.level2);
      for (std::size_t c = 0; c < p; ++c) {
        X_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r.covariates[c];
        if (is_missing(r.covariates[c])) has_missing_ = true;
      }
    }
    check_subject_intervals(strict);
    structure_ = derive_structure();
  }

  std::size_t n_rows() const { return n_; }
  std::size_t n_covariates() const { return covariate_names_.size(); }
  std::size_t n_level1() const { return level1_labels_.size(); }
  std::size_t n_level2() const { return level2_labels_.size(); }
  Structure structure() const { return structure_; }
  bool has_missing() const { return has_missing_; }

  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  const std::vector<std::string>& level1_labels() const { return level1_labels_; }
  const std::vector<std::string>& level2_labels() const { return level2_labels_; }

  double start(std::size_t i) const { return start_[i]; }
  double stop(std::size_t i) const { return stop_[i]; }
  bool event(std::size_t i) const { return event_[i] != 0; }
  int encounter_index(std::size_t i) const { return enc_[i]; }
  int level1_of(std::size_t i) const { return l1_[i]; }
  int level2_of(std::size_t i) const { return l2_[i]; }
  const MatrixXd& covariates() const { return X_; }

  AtRiskRow row(std::size_t i) const {
    AtRiskRow r;
    r.group.level1 = level1_labels_[static_cast<std::size_t>(l1_[i])];
    r.group.level2 = level2_labels_[static_cast<std::size_t>(l2_[i])];
    r.encounter_index = enc_[i];
    r.start = start_[i];
    r.stop = stop_[i];
    r.event = event_[i] != 0;
    r.covariates.assign(X_.row(static_cast<Eigen::Index>(i)).begin(),
                        X_.row(static_cast<Eigen::Index>(i)).end());
    return r;
  }

  int level1_index(const std::string& label) const {
    auto it = std::lower_bound(level1_labels_.begin(), level1_labels_.end(), label);
    if (it == level1_labels_.end() || *it != label) return -1;
    return static_cast<int>(it - level1_labels_.begin());
  }

  /// N_j: observed event count for one level-1 group, summed over its
  /// level-2 groups and encounters.
  std::size_t observed_events(const std::string& level1) const {
    int j = level1_index(level1);
    if (j < 0) throw ValidationError("unknown level-1 group '" + level1 + "'");
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
      if (l1_[i] == j && event_[i]) ++c;
    return c;
  }

  /// Observed event counts for every level-1 group, in label order.
  std::vector<std::size_t> observed_events_all() const {
    std::vector<std::size_t> c(level1_labels_.size(), 0);
    for (std::size_t i = 0; i < n_; ++i)
      if (event_[i]) ++c[static_cast<std::size_t>(l1_[i])];
    return c;
  }

  std::size_t total_events() const {
    std::size_t c = 0;
    for (auto e : event_) c += e;
    return c;
  }

  /// Subset keeping only rows whose level-1 label passes `keep`.
  template <typename Pred>
  Dataset restrict_level1(Pred keep) const {
    std::vector<AtRiskRow> rows;
    for (std::size_t i = 0; i < n_; ++i)
      if (keep(level1_labels_[static_cast<std::size_t>(l1_[i])])) rows.push_back(row(i));
    return Dataset(std::move(rows), covariate_names_, /*strict=*/false);
  }

  /// Truncate intervals at `day`: rows starting at or past the cutoff are
  /// dropped, rows crossing it end there censored.
  Dataset truncate_at(double day) const {
    std::vector<AtRiskRow> rows;
    for (std::size_t i = 0; i < n_; ++i) {
      if (start_[i] >= day) continue;
      AtRiskRow r = row(i);
      if (r.stop > day) {
        r.stop = day;
        r.event = false;
      }
      rows.push_back(std::move(r));
    }
    return Dataset(std::move(rows), covariate_names_, /*strict=*/false);
  }

 private:
  static int label_index(const std::vector<std::string>& labels, const std::string& s) {
    return static_cast<int>(std::lower_bound(labels.begin(), labels.end(), s) - labels.begin());
  }

  void check_subject_intervals(bool strict) const {
    // Per subject: sorted by start, non-overlapping; strict adds first-start-0.
    std::unordered_map<int, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < n_; ++i) by_subject[l2_[i]].push_back(i);
    for (auto& [sub, idx] : by_subject) {
      std::vector<std::size_t> order = idx;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return start_[a] < start_[b]; });
      for (std::size_t k = 1; k < order.size(); ++k) {
        if (start_[order[k]] < stop_[order[k - 1]])
          throw ValidationError("overlapping at-risk intervals for subject '" +
                                level2_labels_[static_cast<std::size_t>(sub)] + "'");
      }
      if (strict && start_[order.front()] != 0.0)
        throw ValidationError("first at-risk interval for subject '" +
                              level2_labels_[static_cast<std::size_t>(sub)] +
                              "' does not start at 0");
    }
  }

  Structure derive_structure() const {
    std::unordered_map<int, int> prog_of;
    for (std::size_t i = 0; i < n_; ++i) {
      auto [it, inserted] = prog_of.emplace(l2_[i], l1_[i]);
      if (!inserted && it->second != l1_[i]) return Structure::crossed;
    }
    return Structure::nested;
  }

  std::size_t n_ = 0;
  std::vector<double> start_, stop_;
  std::vector<std::uint8_t> event_;
  std::vector<int> enc_, l1_, l2_;
  MatrixXd X_;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> level1_labels_, level2_labels_;
  Structure structure_ = Structure::nested;
  bool has_missing_ = false;
};

}  // namespace riskadj
