#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "riskadj/io.hpp"
#include "riskadj/pooling.hpp"
#include "riskadj/predict.hpp"
#include "riskadj/simgen.hpp"
#include "riskadj/variance.hpp"

namespace riskadj {

enum class VarianceEstimator { block_jackknife, loo_jackknife };

struct PipelineConfig {
  enum class Mode { simulate, analyze };
  Mode mode = Mode::simulate;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int M = 1;
  std::vector<int> m_blocks{5, 10, 15};
  std::vector<double> confidence_levels{0.7, 0.8, 0.9, 0.95, 0.995};
  VarianceEstimator estimator = VarianceEstimator::block_jackknife;
  bool classical_jackknife = false;
  CiConfig ci;
  bool selection = false;
  SelectionThresholds thresholds;
  FitConfig fit;
  bool apply_locf_nocb = true;
  std::optional<double> validation_cutoff_day;
  // analyze mode
  std::string training_path;      // single CSV or "{i}" pattern when M > 1
  std::string validation_path;    // same conventions; "same" reuses training
  ColumnSchema schema;
  // simulate mode
  SimConfig sim = SimConfig::defaults(Period::one_year);
  bool validation_fresh = true;   // fresh replicate of the training config
  std::optional<SimConfig> validation_sim;
  int replicates = 1;
  json raw;  // canonical config as parsed, for the manifest

  void validate() const {
    if (M < 1) throw ValidationError("config: M must be >= 1");
    for (double c : confidence_levels)
      if (!(c > 0.0 && c < 1.0))
        throw ValidationError("config: confidence level " + std::to_string(c) +
                              " outside (0,1)");
    if (estimator == VarianceEstimator::block_jackknife) {
      if (m_blocks.empty()) throw ValidationError("config: m_blocks must not be empty");
      for (int m : m_blocks)
        if (m < 2) throw ValidationError("config: m must be >= 2");
    }
    if (replicates < 1) throw ValidationError("config: replicates must be >= 1");
    if (validation_cutoff_day && *validation_cutoff_day <= 0.0)
      throw ValidationError("config: validation cutoff must be positive");
    if (mode == Mode::analyze && training_path.empty())
      throw ValidationError("config: analyze mode requires a training path");
  }
};

inline SimConfig sim_config_from_json(const json& j) {
  Period period = Period::one_year;
  if (j.contains("period")) {
    std::string p = j.at("period").get<std::string>();
    if (p == "three_year")
      period = Period::three_year;
    else if (p == "one_year")
      period = Period::one_year;
    else
      throw ValidationError("config: unknown period '" + p + "'");
  }
  SimConfig c = SimConfig::defaults(period);
  if (j.contains("n_level1")) c.n_level1 = j.at("n_level1").get<int>();
  if (j.contains("n_level2")) c.n_level2 = j.at("n_level2").get<int>();
  if (j.contains("n_timepoints")) c.n_timepoints = j.at("n_timepoints").get<int>();
  if (j.contains("period_length_days"))
    c.period_length_days = j.at("period_length_days").get<double>();
  if (j.contains("h0")) c.h0 = j.at("h0").get<double>();
  if (j.contains("re_variance_scale"))
    c.re_variance_scale = j.at("re_variance_scale").get<double>();
  if (j.contains("censor_rate")) c.censor_rate = j.at("censor_rate").get<double>();
  if (j.contains("washout_days")) c.washout_days = j.at("washout_days").get<double>();
  if (j.contains("trend_in_hazard")) c.trend_in_hazard = j.at("trend_in_hazard").get<bool>();
  if (j.contains("crossed")) c.crossed = j.at("crossed").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("p_invariant")) c.covariates.p_invariant = j.at("p_invariant").get<int>();
  if (j.contains("p_varying")) c.covariates.p_varying = j.at("p_varying").get<int>();
  if (j.contains("sigma1_diag")) c.covariates.sigma1_diag = j.at("sigma1_diag").get<double>();
  if (j.contains("sigma1_offdiag"))
    c.covariates.sigma1_offdiag = j.at("sigma1_offdiag").get<double>();
  if (j.contains("a_max")) c.covariates.a_max = j.at("a_max").get<double>();
  if (j.contains("mu1")) c.covariates.mu1 = j.at("mu1").get<double>();
  if (j.contains("mu2")) c.covariates.mu2 = j.at("mu2").get<std::vector<double>>();
  if (j.contains("beta")) {
    if (j.at("beta").is_number())
      c.beta = VectorXd::Constant(c.p_total(), j.at("beta").get<double>());
    else {
      auto v = j.at("beta").get<std::vector<double>>();
      c.beta = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
  } else if (c.beta.size() != c.p_total()) {
    c.beta = VectorXd::Constant(c.p_total(), 0.5);
  }
  return c;
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  c.raw = j;
  std::string mode = j.value("mode", "simulate");
  if (mode == "simulate")
    c.mode = PipelineConfig::Mode::simulate;
  else if (mode == "analyze")
    c.mode = PipelineConfig::Mode::analyze;
  else
    throw ValidationError("config: unknown mode '" + mode + "'");
  c.seed = j.value("seed", std::uint64_t{1});
  c.out_dir = j.value("out_dir", std::string("out"));
  c.M = j.value("M", 1);
  if (j.contains("m_blocks")) c.m_blocks = j.at("m_blocks").get<std::vector<int>>();
  if (j.contains("confidence_levels"))
    c.confidence_levels = j.at("confidence_levels").get<std::vector<double>>();
  std::string est = j.value("variance_estimator", "block_jackknife");
  if (est == "block_jackknife")
    c.estimator = VarianceEstimator::block_jackknife;
  else if (est == "loo_jackknife")
    c.estimator = VarianceEstimator::loo_jackknife;
  else
    throw ValidationError("config: unknown variance estimator '" + est + "'");
  c.classical_jackknife = j.value("classical_jackknife", false);
  std::string cim = j.value("ci_mode", "two_sided");
  if (cim == "two_sided")
    c.ci.mode = CiMode::two_sided;
  else if (cim == "lower_only")
    c.ci.mode = CiMode::lower_only;
  else if (cim == "upper_only")
    c.ci.mode = CiMode::upper_only;
  else if (cim == "asymmetric")
    c.ci.mode = CiMode::asymmetric;
  else
    throw ValidationError("config: unknown ci mode '" + cim + "'");
  c.ci.alpha_lo_share = j.value("ci_alpha_lo_share", 0.5);
  c.selection = j.value("selection", false);
  if (j.contains("selection_thresholds")) {
    auto t = j.at("selection_thresholds").get<std::vector<double>>();
    if (t.size() != 3) throw ValidationError("config: selection_thresholds needs 3 values");
    c.thresholds = {t[0], t[1], t[2]};
  }
  std::string model = j.value("model", "frailty");
  if (model == "frailty")
    c.fit.model = FitConfig::Model::frailty;
  else if (model == "cox")
    c.fit.model = FitConfig::Model::cox;
  else
    throw ValidationError("config: unknown model '" + model + "'");
  if (j.contains("random_effects")) {
    auto re = j.at("random_effects").get<std::vector<std::string>>();
    c.fit.spec.level1 = false;
    c.fit.spec.level2 = false;
    for (const auto& t : re) {
      if (t == "level1")
        c.fit.spec.level1 = true;
      else if (t == "level2")
        c.fit.spec.level2 = true;
      else
        throw ValidationError("config: unknown random effect term '" + t + "'");
    }
  }
  std::string rt = j.value("resample_theta", "local_search");
  if (rt == "local_search")
    c.fit.resample_theta = ThetaRefit::local_search;
  else if (rt == "fixed")
    c.fit.resample_theta = ThetaRefit::fixed;
  else if (rt == "full_search")
    c.fit.resample_theta = ThetaRefit::full_search;
  else
    throw ValidationError("config: unknown resample_theta '" + rt + "'");
  c.fit.include_frailty_in_prediction = j.value("include_frailty_in_prediction", false);
  c.apply_locf_nocb = j.value("apply_locf_nocb", true);
  if (j.contains("validation_cutoff_day") && !j.at("validation_cutoff_day").is_null())
    c.validation_cutoff_day = j.at("validation_cutoff_day").get<double>();
  if (j.contains("training")) {
    const auto& t = j.at("training");
    c.training_path = t.contains("pattern") ? t.at("pattern").get<std::string>()
                                            : t.at("path").get<std::string>();
  }
  if (j.contains("validation")) {
    const auto& v = j.at("validation");
    if (v.is_string())
      c.validation_path = v.get<std::string>();
    else
      c.validation_path = v.contains("pattern") ? v.at("pattern").get<std::string>()
                                                : v.at("path").get<std::string>();
  }
  if (j.contains("schema")) {
    const auto& s = j.at("schema");
    c.schema = s.contains("file") ? ColumnSchema::from_file(s.at("file").get<std::string>())
                                  : ColumnSchema::from_json(s);
  }
  if (j.contains("sim")) c.sim = sim_config_from_json(j.at("sim"));
  if (j.contains("validation_sim")) {
    const auto& v = j.at("validation_sim");
    if (v.is_string()) {
      c.validation_fresh = v.get<std::string>() == "fresh";
    } else {
      c.validation_sim = sim_config_from_json(v);
    }
  }
  c.replicates = j.value("replicates", 1);
  c.validate();
  return c;
}

/// Simple bounded parallel map with deterministic, index-ordered results.
/// Thread count comes from RISKADJ_THREADS (default: hardware concurrency).
inline int thread_count() {
  if (const char* env = std::getenv("RISKADJ_THREADS")) {
    int t = std::atoi(env);
    if (t >= 1) return t;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int T = std::min<int>(thread_count(), static_cast<int>(n));
  if (T <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Everything `predict`-stage needs for one (training stack, validation stack)
/// pair, shared across block counts and confidence levels.
struct PredictionCore {
  std::vector<std::string> programs;           // eval level-1 labels
  std::vector<std::size_t> observed;           // per program
  std::vector<std::vector<double>> per_copy;   // [M][program] expected counts
  std::vector<double> pooled;                  // per program (Eq. 5)
  std::vector<double> var_mi;                  // per program
  struct PerM {
    int m = 0;  // 0 marks the leave-one-out estimator
    std::vector<double> var_across;            // per program, pooled over copies
    std::optional<BlockPlan> plan;
  };
  std::vector<PerM> per_m;
  std::vector<FrailtyFit> fits;                // per copy
  std::vector<HazardTable> hazards;            // per copy
};

inline PredictionCore run_prediction_core(const MIStack& train, const MIStack& eval,
                                          const PipelineConfig& cfg) {
  const std::size_t M = train.M();
  if (eval.M() != M && eval.M() != 1)
    throw ValidationError("validation stack must have 1 or M copies");
  PredictionCore core;
  core.programs = eval.copy(0).level1_labels();
  {
    // spec invariant: validation programs must appear in training
    std::unordered_set<std::string> trained(train.copy(0).level1_labels().begin(),
                                            train.copy(0).level1_labels().end());
    std::string missing;
    for (const auto& p : core.programs)
      if (!trained.count(p)) missing += (missing.empty() ? "" : ", ") + p;
    if (!missing.empty())
      throw ValidationError("validation programs absent from training: " + missing);
  }
  core.observed = eval.copy(0).observed_events_all();

  core.fits.resize(M);
  core.hazards.resize(M);
  core.per_copy.resize(M);
  parallel_for(M, [&](std::size_t l) {
    const Dataset& tr = train.copy(l);
    const Dataset& ev = eval.copy(eval.M() == 1 ? 0 : l);
    FrailtyFit fit = fit_model(tr, cfg.fit);
    VectorXd off;
    if (cfg.fit.include_frailty_in_prediction) off = frailty_offsets(fit, tr);
    HazardTable hz = breslow_hazard(fit.beta_hat, off, tr);
    core.per_copy[l] = expected_events_all(fit, hz, ev, cfg.fit.include_frailty_in_prediction);
    core.fits[l] = std::move(fit);
    core.hazards[l] = std::move(hz);
  });

  const std::size_t J = core.programs.size();
  core.pooled.assign(J, 0.0);
  core.var_mi.assign(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    std::vector<double> v(M);
    for (std::size_t l = 0; l < M; ++l) v[l] = core.per_copy[l][j];
    core.pooled[j] = pool_expected(v);
    core.var_mi[j] = mi_variance(v);
  }

  auto across_for = [&](std::optional<BlockPlan> plan) {
    PredictionCore::PerM pm;
    pm.m = plan ? plan->m : 0;
    pm.plan = plan;
    std::vector<std::vector<double>> per_copy_var(M);
    parallel_for(M, [&](std::size_t l) {
      const Dataset& tr = train.copy(l);
      const Dataset& ev = eval.copy(eval.M() == 1 ? 0 : l);
      per_copy_var[l] = plan ? block_jackknife_variance(tr, ev, cfg.fit, *plan, core.fits[l],
                                                        cfg.classical_jackknife)
                             : loo_jackknife_variance(tr, ev, cfg.fit, core.fits[l]);
    });
    pm.var_across.assign(J, 0.0);
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t l = 0; l < M; ++l) pm.var_across[j] += per_copy_var[l][j];
      pm.var_across[j] /= static_cast<double>(M);
    }
    return pm;
  };

  if (cfg.estimator == VarianceEstimator::block_jackknife) {
    for (int m : cfg.m_blocks) {
      BlockPlan plan = block_partition(train.copy(0).level1_labels(), m,
                                       derive_seed(cfg.seed, stream::block_plan,
                                                   static_cast<std::uint64_t>(m)));
      core.per_m.push_back(across_for(plan));
    }
  } else {
    core.per_m.push_back(across_for(std::nullopt));
  }
  return core;
}

/// Predictions for one block count at one confidence level.
inline std::vector<ProgramPrediction> assemble_predictions(const PredictionCore& core,
                                                           const PredictionCore::PerM& pm,
                                                           double confidence,
                                                           const CiConfig& ci) {
  std::vector<ProgramPrediction> out;
  const std::size_t J = core.programs.size();
  out.reserve(J);
  for (std::size_t j = 0; j < J; ++j) {
    ProgramPrediction p;
    p.level1 = core.programs[j];
    p.observed = core.observed[j];
    for (const auto& copy : core.per_copy) p.expected_per_copy.push_back(copy[j]);
    p.expected_pooled = core.pooled[j];
    p.var_poisson = core.pooled[j];
    p.var_across = pm.var_across[j];
    p.var_mi = core.var_mi[j];
    p.total_variance = total_variance(p.var_poisson, p.var_across, p.var_mi);
    auto [lo, hi] = confidence_interval(p.expected_pooled, p.total_variance,
                                        1.0 - confidence, ci);
    p.ci_lo = lo;
    p.ci_hi = hi;
    p.ci_level = confidence;
    if (p.total_variance > 0.0) {
      auto [z, pv] = z_test(static_cast<double>(p.observed), p.expected_pooled,
                            p.total_variance);
      p.z = z;
      p.p_value = pv;
    }
    p.flag = flag_decision(static_cast<double>(p.observed), lo, hi);
    out.push_back(std::move(p));
  }
  return out;
}

inline double coverage_of(const std::vector<ProgramPrediction>& preds) {
  double covered = 0;
  for (const auto& p : preds) {
    double o = static_cast<double>(p.observed);
    if (o >= p.ci_lo && o <= p.ci_hi) covered += 1.0;
  }
  return preds.empty() ? 0.0 : covered / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// artifacts

struct PipelineResult {
  PredictionCore core;
  std::map<std::pair<int, double>, double> coverage;  // (m, confidence) -> coverage
  double spearman = 0.0;
  std::optional<SelectionTrace> selection;
  std::vector<std::string> artifact_paths;
};

namespace detail {

inline std::string fmt(double x) { return format_double(x); }

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void write_predictions_csv(const std::string& path, const PipelineResult& res,
                                  const PipelineConfig& cfg) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& pm : res.core.per_m) {
    for (double conf : cfg.confidence_levels) {
      auto preds = assemble_predictions(res.core, pm, conf, cfg.ci);
      for (const auto& p : preds) {
        rows.push_back({p.level1, std::to_string(pm.m), fmt(conf),
                        std::to_string(p.observed), fmt(p.expected_pooled),
                        fmt(p.var_poisson), fmt(p.var_across), fmt(p.var_mi),
                        fmt(p.total_variance), fmt(p.ci_lo), fmt(p.ci_hi), fmt(p.z),
                        fmt(p.p_value), to_string(p.flag)});
      }
    }
  }
  write_csv(path,
            {"program", "m", "confidence", "observed", "expected", "var_poisson",
             "var_across", "var_mi", "var_total", "ci_lo", "ci_hi", "z", "p", "flag"},
            rows);
}

inline void write_coverage_csv(const std::string& path, const PipelineResult& res) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [key, cov] : res.coverage)
    rows.push_back({std::to_string(key.first), fmt(key.second), fmt(cov),
                    fmt(std::fabs(cov - key.second))});
  write_csv(path, {"m", "confidence", "coverage", "abs_cov_diff"}, rows);
}

inline void write_histogram_csv(const std::string& path, const PredictionCore& core) {
  double hi = 1.0;
  for (std::size_t j = 0; j < core.programs.size(); ++j)
    hi = std::max({hi, static_cast<double>(core.observed[j]), core.pooled[j]});
  double width = std::max(1.0, std::ceil((hi + 1.0) / 30.0));
  std::size_t nbins = static_cast<std::size_t>(std::ceil((hi + 1.0) / width));
  std::vector<std::size_t> obs(nbins, 0), exp(nbins, 0);
  for (std::size_t j = 0; j < core.programs.size(); ++j) {
    auto bin = [&](double v) {
      return std::min(nbins - 1, static_cast<std::size_t>(v / width));
    };
    ++obs[bin(static_cast<double>(core.observed[j]))];
    ++exp[bin(core.pooled[j])];
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t b = 0; b < nbins; ++b) {
    rows.push_back({"observed", fmt(width * static_cast<double>(b)),
                    fmt(width * static_cast<double>(b + 1)), std::to_string(obs[b])});
    rows.push_back({"expected", fmt(width * static_cast<double>(b)),
                    fmt(width * static_cast<double>(b + 1)), std::to_string(exp[b])});
  }
  write_csv(path, {"kind", "bin_lo", "bin_hi", "count"}, rows);
}

inline void write_residuals_csv(const std::string& path, const PredictionCore& core,
                                const Dataset& eval) {
  // center-level covariate means weighted by at-risk days, vs count residuals
  const std::size_t J = eval.n_level1();
  const std::size_t p = eval.n_covariates();
  std::vector<std::vector<double>> wsum(J, std::vector<double>(p, 0.0));
  std::vector<double> wtot(J, 0.0);
  for (std::size_t i = 0; i < eval.n_rows(); ++i) {
    double w = eval.stop(i) - eval.start(i);
    std::size_t j = static_cast<std::size_t>(eval.level1_of(i));
    wtot[j] += w;
    for (std::size_t c = 0; c < p; ++c)
      wsum[j][c] += w * eval.covariates()(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(c));
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t j = 0; j < J; ++j) {
      double m = wtot[j] > 0 ? wsum[j][c] / wtot[j] : 0.0;
      double resid = static_cast<double>(core.observed[j]) - core.pooled[j];
      rows.push_back({eval.covariate_names()[c], core.programs[j], fmt(m), fmt(resid)});
    }
  write_csv(path, {"covariate", "program", "weighted_mean", "residual"}, rows);
}

inline json selection_to_json(const SelectionTrace& t) {
  json j;
  json its = json::array();
  for (const auto& it : t.iterations) {
    json e;
    e["rule"] = it.rule;
    e["dropped"] = it.dropped;
    e["p_values"] = it.p_values;
    its.push_back(std::move(e));
  }
  j["iterations"] = std::move(its);
  j["final_covariates"] = t.final_covariates;
  if (t.final_estimate) {
    json fe;
    fe["names"] = t.final_estimate->names;
    fe["beta"] = std::vector<double>(t.final_estimate->beta_bar.begin(),
                                     t.final_estimate->beta_bar.end());
    fe["t"] = std::vector<double>(t.final_estimate->t_stats.begin(),
                                  t.final_estimate->t_stats.end());
    fe["p"] = std::vector<double>(t.final_estimate->p_values.begin(),
                                  t.final_estimate->p_values.end());
    fe["df"] = std::vector<double>(t.final_estimate->df.begin(), t.final_estimate->df.end());
    j["final_estimate"] = std::move(fe);
  }
  return j;
}

inline std::string selection_to_text(const SelectionTrace& t) {
  std::ostringstream os;
  os << "step-down selection trace\n";
  for (std::size_t i = 0; i < t.iterations.size(); ++i) {
    const auto& it = t.iterations[i];
    os << "iteration " << (i + 1) << ": rule=" << it.rule;
    if (!it.dropped.empty()) {
      os << " dropped:";
      for (std::size_t k = 0; k < it.dropped.size(); ++k)
        os << " " << it.dropped[k] << " (p=" << format_double(it.p_values[k]) << ")";
    }
    os << "\n";
  }
  os << "final covariates (" << t.final_covariates.size() << "):";
  for (const auto& n : t.final_covariates) os << " " << n;
  os << "\n";
  return os.str();
}

}  // namespace detail

/// Human-readable flag table (observed vs expected with CI and decision).
inline std::string emit_report(const PipelineResult& res, const PipelineConfig& cfg) {
  std::ostringstream os;
  os << "risk-adjusted incidence report\n";
  for (const auto& pm : res.core.per_m) {
    for (double conf : cfg.confidence_levels) {
      auto preds = assemble_predictions(res.core, pm, conf, cfg.ci);
      os << "\n";
      if (pm.m > 0)
        os << "block jackknife m=" << pm.m;
      else
        os << "leave-one-out jackknife";
      os << ", confidence " << format_double(conf) << "\n";
      os << "program        observed   expected     ci_lo       ci_hi     flag\n";
      for (const auto& p : preds) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-12s %9zu %10.3f %9.3f %11.3f    %s\n",
                      p.level1.c_str(), p.observed, p.expected_pooled, p.ci_lo, p.ci_hi,
                      to_string(p.flag));
        os << line;
      }
    }
  }
  return os.str();
}

/// End-to-end single run: load/generate -> impute -> (select) -> fit ->
/// predict -> variance -> validate -> report. Writes all artifacts into
/// cfg.out_dir and returns the in-memory results.
inline PipelineResult run_pipeline(const PipelineConfig& cfg,
                                   bool write_artifacts = true) {
  cfg.validate();
  namespace fs = std::filesystem;

  MIStack train, eval;
  if (cfg.mode == PipelineConfig::Mode::simulate) {
    SimConfig sc = cfg.sim;
    sc.seed = derive_seed(cfg.seed, stream::replicate, 0);
    auto [tr, tr_truth] = gen_dataset(sc);
    train = assemble_mi_stack({std::move(tr)});
    if (cfg.validation_sim) {
      SimConfig vc = *cfg.validation_sim;
      vc.seed = derive_seed(cfg.seed, stream::validation, 0);
      auto [ev, ev_truth] = gen_dataset(vc);
      eval = assemble_mi_stack({std::move(ev)});
    } else if (cfg.validation_fresh) {
      SimConfig vc = cfg.sim;
      vc.seed = derive_seed(cfg.seed, stream::validation, 0);
      auto [ev, ev_truth] = gen_dataset(vc);
      eval = assemble_mi_stack({std::move(ev)});
    } else {
      eval = train;
    }
  } else {
    auto load_stack = [&](const std::string& path) {
      if (path.find("{i}") != std::string::npos)
        return load_mi_stack(path, cfg.M, cfg.schema);
      return assemble_mi_stack({load_dataset(path, cfg.schema)});
    };
    train = load_stack(cfg.training_path);
    if (cfg.validation_path.empty() || cfg.validation_path == "same")
      eval = train;
    else
      eval = load_stack(cfg.validation_path);
  }

  if (cfg.apply_locf_nocb) {
    for (auto* stack : {&train, &eval}) {
      for (auto& copy : stack->copies) {
        if (!copy.has_missing()) continue;
        ImputeResult ir = impute_locf_nocb(copy);
        copy = std::move(ir.dataset);
      }
    }
  }

  if (cfg.validation_cutoff_day) {
    std::vector<Dataset> truncated;
    for (const auto& copy : eval.copies) truncated.push_back(copy.truncate_at(*cfg.validation_cutoff_day));
    eval = assemble_mi_stack(std::move(truncated));
  }

  PipelineResult res;
  PipelineConfig work = cfg;
  if (cfg.selection) {
    res.selection = stepdown_select(train, cfg.fit, cfg.thresholds);
    const auto& keep = res.selection->final_covariates;
    std::vector<Dataset> tr2, ev2;
    for (const auto& copy : train.copies) tr2.push_back(select_covariates(copy, keep));
    for (const auto& copy : eval.copies) ev2.push_back(select_covariates(copy, keep));
    train = assemble_mi_stack(std::move(tr2));
    eval = assemble_mi_stack(std::move(ev2));
  }

  res.core = run_prediction_core(train, eval, work);
  for (const auto& pm : res.core.per_m)
    for (double conf : cfg.confidence_levels)
      res.coverage[{pm.m, conf}] =
          coverage_of(assemble_predictions(res.core, pm, conf, cfg.ci));
  {
    std::vector<double> obs(res.core.observed.size());
    for (std::size_t j = 0; j < obs.size(); ++j)
      obs[j] = static_cast<double>(res.core.observed[j]);
    res.spearman = obs.size() >= 2 ? spearman(res.core.pooled, obs) : 0.0;
  }

  if (write_artifacts) {
    fs::create_directories(cfg.out_dir);
    auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };
    detail::write_predictions_csv(path("predictions.csv"), res, cfg);
    detail::write_coverage_csv(path("coverage.csv"), res);
    detail::write_histogram_csv(path("histogram.csv"), res.core);
    detail::write_residuals_csv(path("residuals.csv"), res.core, eval.copy(0));
    {
      std::ofstream rep(path("report.txt"));
      rep << emit_report(res, cfg);
    }
    json model = json::array();
    for (std::size_t l = 0; l < res.core.fits.size(); ++l) {
      json entry;
      entry["fit"] = fit_to_json(res.core.fits[l]);
      entry["hazard"] = hazard_to_json(res.core.hazards[l]);
      model.push_back(std::move(entry));
    }
    write_json_file(model, path("model.json"));
    if (res.selection) {
      write_json_file(detail::selection_to_json(*res.selection), path("selection.json"));
      std::ofstream st(path("selection.txt"));
      st << detail::selection_to_text(*res.selection);
    }
    json metrics;
    metrics["spearman"] = res.spearman;
    double so = 0, se = 0;
    for (std::size_t j = 0; j < res.core.observed.size(); ++j) {
      so += static_cast<double>(res.core.observed[j]);
      se += res.core.pooled[j];
    }
    metrics["sum_observed"] = so;
    metrics["sum_expected"] = se;
    write_json_file(metrics, path("metrics.json"));
    json manifest;
    manifest["config"] = cfg.raw.is_null() ? json::object() : cfg.raw;
    manifest["config_hash"] = detail::fnv1a(cfg.raw.dump());
    manifest["seed"] = cfg.seed;
    manifest["artifacts"] = {"predictions.csv", "coverage.csv", "histogram.csv",
                             "residuals.csv", "report.txt", "model.json", "metrics.json"};
    write_json_file(manifest, path("manifest.json"));
    for (const auto& a : {"predictions.csv", "coverage.csv", "histogram.csv",
                          "residuals.csv", "report.txt", "model.json", "metrics.json",
                          "manifest.json"})
      res.artifact_paths.push_back(path(a));
  }
  return res;
}

// ---------------------------------------------------------------------------
// simulation study (replicated coverage table)

struct StudyRow {
  std::string validation;  // "same" or "next"
  int m = 0;
  double confidence = 0.0;
  double mean_coverage = 0.0;
  double abs_cov_diff = 0.0;
  int replicates = 0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<std::vector<double>> same_coverage;  // [key][replicate]
  std::vector<std::vector<double>> next_coverage;
  std::vector<std::pair<int, double>> keys;        // (m, confidence)
  std::vector<std::string> failures;
  bool failure_flag = false;  // > 5% of replicates failed
};

/// Replicated simulate-mode study: per replicate, generate training data and
/// an independent validation replicate of the same configuration, fit once,
/// and record CI coverage per (m, confidence) for same-period and next-period
/// validation.
inline StudyResult run_simulation_study(const PipelineConfig& cfg, int replicates) {
  cfg.validate();
  if (cfg.mode != PipelineConfig::Mode::simulate)
    throw ValidationError("run_simulation_study: simulate mode required");

  StudyResult out;
  for (int m : cfg.m_blocks)
    for (double conf : cfg.confidence_levels) out.keys.emplace_back(m, conf);
  if (cfg.estimator == VarianceEstimator::loo_jackknife) {
    out.keys.clear();
    for (double conf : cfg.confidence_levels) out.keys.emplace_back(0, conf);
  }
  out.same_coverage.resize(out.keys.size());
  out.next_coverage.resize(out.keys.size());

  std::vector<std::optional<std::vector<std::pair<double, double>>>> results(
      static_cast<std::size_t>(replicates));
  std::vector<std::string> errors(static_cast<std::size_t>(replicates));

  parallel_for(static_cast<std::size_t>(replicates), [&](std::size_t r) {
    try {
      SimConfig tr_cfg = cfg.sim;
      tr_cfg.seed = derive_seed(cfg.seed, stream::replicate, r);
      SimConfig ev_cfg = cfg.validation_sim ? *cfg.validation_sim : cfg.sim;
      ev_cfg.seed = derive_seed(cfg.seed, stream::validation, r);
      auto [tr, tr_truth] = gen_dataset(tr_cfg);
      auto [ev, ev_truth] = gen_dataset(ev_cfg);
      if (cfg.validation_cutoff_day) ev = ev.truncate_at(*cfg.validation_cutoff_day);
      MIStack train = assemble_mi_stack({std::move(tr)});
      MIStack eval = assemble_mi_stack({std::move(ev)});

      PipelineConfig work = cfg;
      work.seed = derive_seed(cfg.seed, stream::block_plan, r);
      PredictionCore same = run_prediction_core(train, train, work);
      PredictionCore next = run_prediction_core(train, eval, work);

      std::vector<std::pair<double, double>> cov;
      for (std::size_t k = 0; k < out.keys.size(); ++k) {
        auto [m, conf] = out.keys[k];
        auto find_pm = [&](const PredictionCore& c) -> const PredictionCore::PerM& {
          for (const auto& pm : c.per_m)
            if (pm.m == m) return pm;
          throw ComputeError("study: missing per-m results");
        };
        double cs = coverage_of(assemble_predictions(same, find_pm(same), conf, cfg.ci));
        double cn = coverage_of(assemble_predictions(next, find_pm(next), conf, cfg.ci));
        cov.emplace_back(cs, cn);
      }
      results[r] = std::move(cov);
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  });

  int ok = 0;
  for (int r = 0; r < replicates; ++r) {
    if (!results[static_cast<std::size_t>(r)]) {
      out.failures.push_back("replicate " + std::to_string(r) + ": " +
                             errors[static_cast<std::size_t>(r)]);
      continue;
    }
    ++ok;
    const auto& cov = *results[static_cast<std::size_t>(r)];
    for (std::size_t k = 0; k < out.keys.size(); ++k) {
      out.same_coverage[k].push_back(cov[k].first);
      out.next_coverage[k].push_back(cov[k].second);
    }
  }
  out.failure_flag =
      !out.failures.empty() &&
      static_cast<double>(out.failures.size()) > 0.05 * static_cast<double>(replicates);

  for (std::size_t k = 0; k < out.keys.size(); ++k) {
    auto [m, conf] = out.keys[k];
    for (const char* which : {"same", "next"}) {
      const auto& v = which == std::string("same") ? out.same_coverage[k]
                                                   : out.next_coverage[k];
      StudyRow row;
      row.validation = which;
      row.m = m;
      row.confidence = conf;
      row.mean_coverage = v.empty() ? 0.0 : mean(v);
      row.abs_cov_diff = std::fabs(row.mean_coverage - conf);
      row.replicates = ok;
      out.rows.push_back(row);
    }
  }
  return out;
}

inline void write_study_artifacts(const StudyResult& study, const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  auto path = [&](const char* name) { return (fs::path(cfg.out_dir) / name).string(); };
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : study.rows)
      rows.push_back({r.validation, std::to_string(r.m), detail::fmt(r.confidence),
                      detail::fmt(r.mean_coverage), detail::fmt(r.abs_cov_diff),
                      std::to_string(r.replicates)});
    write_csv(path("study.csv"),
              {"validation", "m", "confidence", "mean_coverage", "abs_cov_diff",
               "replicates"},
              rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < study.keys.size(); ++k) {
      for (std::size_t r = 0; r < study.same_coverage[k].size(); ++r)
        rows.push_back({"same", std::to_string(study.keys[k].first),
                        detail::fmt(study.keys[k].second), std::to_string(r),
                        detail::fmt(study.same_coverage[k][r])});
      for (std::size_t r = 0; r < study.next_coverage[k].size(); ++r)
        rows.push_back({"next", std::to_string(study.keys[k].first),
                        detail::fmt(study.keys[k].second), std::to_string(r),
                        detail::fmt(study.next_coverage[k][r])});
    }
    write_csv(path("study_replicates.csv"),
              {"validation", "m", "confidence", "replicate", "coverage"}, rows);
  }
  json manifest;
  manifest["config"] = cfg.raw.is_null() ? json::object() : cfg.raw;
  manifest["config_hash"] = detail::fnv1a(cfg.raw.dump());
  manifest["seed"] = cfg.seed;
  manifest["failures"] = study.failures;
  manifest["failure_flag"] = study.failure_flag;
  write_json_file(manifest, path("manifest.json"));
}

}  // namespace riskadj
