#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "riskadj/rng.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

enum class Period { three_year, one_year };

inline const char* to_string(Period p) {
  return p == Period::three_year ? "three_year" : "one_year";
}

struct CovariateParams {
  int p_invariant = 5;
  int p_varying = 5;
  double mu1 = 0.0;
  double sigma1_diag = 0.1;
  double sigma1_offdiag = 0.02;
  std::vector<double> mu2;  // per timepoint mean of each time-varying covariate
  double a_max = 0.1;       // a ~ U(0, a_max) scales the banded Toeplitz covariance
};

/// Synthetic-data generator configuration; defaults mirror the reference
/// simulation constants for the chosen period.
struct SimConfig {
  int n_level1 = 150;
  int n_level2 = 10000;
  Period period = Period::three_year;
  int n_timepoints = 12;
  double period_length_days = 1100;
  double h0 = std::exp(-8.0);
  VectorXd beta;  // covariate coefficients, size p_invariant + p_varying
  double re_variance_scale = 0.001;
  double censor_rate = 1.0 / 600.0;
  double washout_days = 730;
  CovariateParams covariates;
  // The printed time-varying means are a deterministic function of time and
  // are absorbed by the nonparametric baseline; by default they enter the
  // recorded covariates only. trend_in_hazard=true puts them in the hazard too.
  bool trend_in_hazard = false;
  bool crossed = false;  // relocation after an event; default nested
  std::uint64_t seed = 1;

  static SimConfig defaults(Period p) {
    SimConfig c;
    c.period = p;
    if (p == Period::three_year) {
      c.n_timepoints = 12;
      c.period_length_days = 1100;
      c.censor_rate = 1.0 / 600.0;
      c.covariates.mu2.resize(12);
      for (int g = 0; g < 12; ++g) c.covariates.mu2[static_cast<std::size_t>(g)] = g - 5.0;
    } else {
      c.n_timepoints = 4;
      c.period_length_days = 400;
      c.censor_rate = 1.0 / 300.0;
      c.covariates.mu2 = {-1.0, 0.0, 1.0, 2.0};
    }
    c.beta = VectorXd::Constant(c.covariates.p_invariant + c.covariates.p_varying, 0.5);
    return c;
  }

  int p_total() const { return covariates.p_invariant + covariates.p_varying; }

  void validate() const {
    if (n_level1 < 1 || n_level2 < 1) throw ValidationError("SimConfig: group counts must be >= 1");
    if (n_timepoints < 1) throw ValidationError("SimConfig: need at least one timepoint");
    if (!(period_length_days > n_timepoints))
      throw ValidationError("SimConfig: period length must exceed the timepoint count");
    if (h0 < 0.0) throw ValidationError("SimConfig: h0 must be nonnegative");
    if (beta.size() != p_total())
      throw ValidationError("SimConfig: beta length must equal covariate count");
    if (censor_rate <= 0.0) throw ValidationError("SimConfig: censor rate must be positive");
    if (washout_days <= 0.0) throw ValidationError("SimConfig: washout must be positive");
    if (covariates.p_varying > 0 &&
        covariates.mu2.size() != static_cast<std::size_t>(n_timepoints))
      throw ValidationError("SimConfig: mu2 length must equal the timepoint count");
    if (re_variance_scale < 0.0) throw ValidationError("SimConfig: negative variance scale");
  }
};

/// Ground truth emitted alongside a generated dataset for oracle-based tests.
struct SimTruth {
  double g_level1 = 0.0, g_level2 = 0.0;  // realized random-intercept variances
  double a = 0.0;
  std::vector<double> timepoints;
  std::vector<double> b_level1;                  // per program
  std::vector<double> b_level2;                  // per subject
  std::vector<int> program_of;                   // per subject
  std::vector<std::vector<double>> event_times;  // observed events per subject
  std::vector<double> follow_up_end;             // min(censor, period end) per subject
  std::size_t total_events = 0;
};

namespace detail {

inline MatrixXd banded_toeplitz_chol(int G, double a) {
  MatrixXd T(G, G);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < G; ++j) T(i, j) = a * (G - std::abs(i - j));
  T.diagonal().array() += 1e-12;
  Eigen::LLT<MatrixXd> llt(T);
  if (llt.info() != Eigen::Success)
    throw ComputeError("simgen: time covariance not positive definite");
  return llt.matrixL();
}

inline std::string padded_label(const char* prefix, int i, int n) {
  std::size_t width = 1;
  for (int v = n; v >= 10; v /= 10) ++width;
  std::string s = std::to_string(i + 1);
  return std::string(prefix) + std::string(width - s.size(), '0') + s;
}

}  // namespace detail

/// Generate one hierarchical recurrent-event dataset: piecewise-exponential
/// event times over the shared encounter grid, exponential censoring, washout
/// between incident events, counting-process rows split at covariate changes.
inline std::pair<Dataset, SimTruth> gen_dataset(const SimConfig& config) {
  config.validate();
  const int G = config.n_timepoints;
  const int p1 = config.covariates.p_invariant;
  const int p2 = config.covariates.p_varying;

  SimTruth truth;

  // shared encounter grid: t_1 = 0 plus G-1 uniform integer days, distinct
  {
    Rng rng = Rng::substream(config.seed, stream::timepoints);
    std::set<long long> seen{0};
    std::vector<double> ts{0.0};
    while (static_cast<int>(ts.size()) < G) {
      double draw = std::round(rng.uniform(static_cast<double>(G), config.period_length_days));
      long long key = static_cast<long long>(draw);
      if (seen.insert(key).second) ts.push_back(draw);
    }
    std::sort(ts.begin(), ts.end());
    truth.timepoints = std::move(ts);
  }
  std::vector<double> grid = truth.timepoints;
  grid.push_back(config.period_length_days);  // final carry-forward span

  {
    Rng rng = Rng::substream(config.seed, stream::covariate_scale);
    truth.a = p2 > 0 ? rng.uniform(0.0, config.covariates.a_max) : 0.0;
  }
  {
    Rng rng = Rng::substream(config.seed, stream::re_variances);
    double sd = std::sqrt(config.re_variance_scale);
    truth.g_level1 = std::fabs(rng.normal(0.0, sd));
    truth.g_level2 = std::fabs(rng.normal(0.0, sd));
  }
  {
    Rng rng = Rng::substream(config.seed, stream::program_effects);
    truth.b_level1.resize(static_cast<std::size_t>(config.n_level1));
    for (auto& b : truth.b_level1) b = rng.normal(0.0, std::sqrt(truth.g_level1));
  }

  MatrixXd L1;
  if (p1 > 0) {
    MatrixXd S1 = MatrixXd::Constant(p1, p1, config.covariates.sigma1_offdiag);
    S1.diagonal().setConstant(config.covariates.sigma1_diag);
    Eigen::LLT<MatrixXd> llt(S1);
    if (llt.info() != Eigen::Success)
      throw ComputeError("simgen: time-invariant covariance not positive definite");
    L1 = llt.matrixL();
  }
  MatrixXd L2;
  if (p2 > 0) L2 = detail::banded_toeplitz_chol(G, truth.a);

  std::vector<std::string> names;
  for (int c = 0; c < p1; ++c) names.push_back("z1_" + std::to_string(c + 1));
  for (int c = 0; c < p2; ++c) names.push_back("z2_" + std::to_string(c + 1));

  truth.b_level2.resize(static_cast<std::size_t>(config.n_level2));
  truth.program_of.resize(static_cast<std::size_t>(config.n_level2));
  truth.event_times.resize(static_cast<std::size_t>(config.n_level2));
  truth.follow_up_end.resize(static_cast<std::size_t>(config.n_level2));

  std::vector<AtRiskRow> rows;
  rows.reserve(static_cast<std::size_t>(config.n_level2) * static_cast<std::size_t>(G));

  const VectorXd beta1 = config.beta.head(p1);
  const VectorXd beta2 = config.beta.tail(p2);

  for (int i = 0; i < config.n_level2; ++i) {
    Rng rng = Rng::substream(config.seed, stream::subject, static_cast<std::uint64_t>(i));
    const int prog = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config.n_level1)));
    truth.program_of[static_cast<std::size_t>(i)] = prog;
    const double b2 = rng.normal(0.0, std::sqrt(truth.g_level2));
    truth.b_level2[static_cast<std::size_t>(i)] = b2;

    VectorXd z1 = VectorXd::Zero(p1);
    if (p1 > 0) z1 = VectorXd::Constant(p1, config.covariates.mu1) + L1 * rng.normal_vector(p1);
    MatrixXd z2dev(G, p2);  // centered paths; recorded values add mu2
    for (int c = 0; c < p2; ++c) z2dev.col(c) = L2 * rng.normal_vector(G);

    const double censor = rng.exponential(config.censor_rate);
    const double fup = std::min(censor, config.period_length_days);
    truth.follow_up_end[static_cast<std::size_t>(i)] = fup;

    const double lp_fixed = beta1.dot(z1) + truth.b_level1[static_cast<std::size_t>(prog)] + b2;
    std::vector<double> lp_tv(static_cast<std::size_t>(G), 0.0);
    for (int g = 0; g < G; ++g) {
      double v = z2dev.row(g).dot(beta2);
      if (config.trend_in_hazard)
        v += config.covariates.mu2[static_cast<std::size_t>(g)] * beta2.sum();
      lp_tv[static_cast<std::size_t>(g)] = v;
    }

    // piecewise-exponential stepping from `from` to the period end
    auto step_event = [&](double from) -> double {
      int g = static_cast<int>(std::upper_bound(grid.begin(), grid.end(), from) - grid.begin()) - 1;
      g = std::min(g, G - 1);
      double pos = from;
      while (g <= G - 1) {
        double h = config.h0 * std::exp(lp_fixed + lp_tv[static_cast<std::size_t>(g)]);
        if (h <= 0.0) return std::numeric_limits<double>::infinity();
        double s = rng.exponential(h);
        if (pos + s < grid[static_cast<std::size_t>(g + 1)]) return pos + s;
        pos = grid[static_cast<std::size_t>(g + 1)];
        ++g;
      }
      return std::numeric_limits<double>::infinity();
    };

    // at-risk segments (start, end, event?]; washout separates incident events
    struct Segment {
      double start, end;
      bool event;
    };
    std::vector<Segment> segments;
    double at_risk_from = 0.0;
    while (at_risk_from < fup) {
      double t = step_event(at_risk_from);
      if (t <= fup) {
        segments.push_back({at_risk_from, t, true});
        truth.event_times[static_cast<std::size_t>(i)].push_back(t);
        ++truth.total_events;
        at_risk_from = t + config.washout_days;
      } else {
        segments.push_back({at_risk_from, fup, false});
        break;
      }
    }

    const std::string subject = detail::padded_label("S", i, config.n_level2);
    int enc = 0;
    for (std::size_t seg_idx = 0; seg_idx < segments.size(); ++seg_idx) {
      const auto& seg = segments[seg_idx];
      int my_prog = prog;
      if (config.crossed && seg_idx > 0) {
        // relocation after an incident event
        my_prog = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(config.n_level1)));
      }
      std::vector<double> cuts{seg.start};
      for (double t : truth.timepoints)
        if (t > seg.start && t < seg.end) cuts.push_back(t);
      cuts.push_back(seg.end);
      for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        AtRiskRow r;
        r.group.level1 = detail::padded_label("P", my_prog, config.n_level1);
        r.group.level2 = subject;
        r.encounter_index = ++enc;
        r.start = cuts[k];
        r.stop = cuts[k + 1];
        r.event = seg.event && (k + 2 == cuts.size());
        int g = static_cast<int>(std::upper_bound(grid.begin(), grid.end(), r.start) -
                                 grid.begin()) - 1;
        g = std::min(g, G - 1);
        r.covariates.reserve(static_cast<std::size_t>(p1 + p2));
        for (int c = 0; c < p1; ++c) r.covariates.push_back(z1[c]);
        for (int c = 0; c < p2; ++c)
          r.covariates.push_back(config.covariates.mu2[static_cast<std::size_t>(g)] +
                                 z2dev(g, c));
        rows.push_back(std::move(r));
      }
    }
  }
  return {Dataset(std::move(rows), names), std::move(truth)};
}

/// Dataset-level rates used to check the generator against its targets.
struct SimDiagnostics {
  double censor_rate = 0.0;        // subjects with no observed event
  double second_event_rate = 0.0;  // subjects with two or more
  std::size_t events_total = 0;
};

inline SimDiagnostics sim_diagnostics(const Dataset& data, const SimTruth& truth) {
  std::vector<std::size_t> per_subject(data.n_level2(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < data.n_rows(); ++i)
    if (data.event(i)) {
      ++per_subject[static_cast<std::size_t>(data.level2_of(i))];
      ++total;
    }
  if (total != truth.total_events)
    throw ValidationError("sim_diagnostics: dataset/truth event totals differ");
  SimDiagnostics d;
  d.events_total = total;
  std::size_t none = 0, twice = 0;
  for (auto c : per_subject) {
    if (c == 0) ++none;
    if (c >= 2) ++twice;
  }
  d.censor_rate = static_cast<double>(none) / static_cast<double>(per_subject.size());
  d.second_event_rate = static_cast<double>(twice) / static_cast<double>(per_subject.size());
  return d;
}

}  // namespace riskadj
