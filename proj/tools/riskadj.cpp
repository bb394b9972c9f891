// Command-line front end for the risk-adjusted incidence pipeline.
// Exit codes: 0 success, 1 validation/configuration error, 2 computation failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "riskadj/riskadj.hpp"

namespace fs = std::filesystem;
using namespace riskadj;

namespace {

PipelineConfig load_config(const std::string& path, std::uint64_t seed_override,
                           const std::string& out_override) {
  json j = read_json_file(path);
  if (seed_override) j["seed"] = seed_override;
  if (!out_override.empty()) j["out_dir"] = out_override;
  return pipeline_config_from_json(j);
}

void cmd_simulate(const std::string& config_path, std::uint64_t seed,
                  const std::string& out_dir) {
  json j = config_path.empty() ? json::object() : read_json_file(config_path);
  SimConfig sc = sim_config_from_json(j.contains("sim") ? j.at("sim") : j);
  if (seed) sc.seed = seed;
  auto [data, truth] = gen_dataset(sc);
  fs::create_directories(out_dir);
  save_dataset(data, (fs::path(out_dir) / "dataset.csv").string());
  json t;
  t["g_level1"] = truth.g_level1;
  t["g_level2"] = truth.g_level2;
  t["a"] = truth.a;
  t["timepoints"] = truth.timepoints;
  t["b_level1"] = truth.b_level1;
  t["b_level2"] = truth.b_level2;
  t["program_of"] = truth.program_of;
  t["event_times"] = truth.event_times;
  t["follow_up_end"] = truth.follow_up_end;
  t["total_events"] = truth.total_events;
  write_json_file(t, (fs::path(out_dir) / "truth.json").string());
  SimDiagnostics diag = sim_diagnostics(data, truth);
  std::cout << "wrote " << data.n_rows() << " rows, " << data.n_level2() << " subjects, "
            << data.n_level1() << " programs\n"
            << "events " << diag.events_total << ", censor rate "
            << format_double(diag.censor_rate) << ", second-event rate "
            << format_double(diag.second_event_rate) << "\n";
}

void cmd_ingest(const std::string& encounters_path, const std::string& schema_path,
                const std::string& rules_path, const std::string& out_path) {
  CsvTable t = read_csv(encounters_path);
  json sj = schema_path.empty() ? json::object() : read_json_file(schema_path);
  auto col = [&](const char* key, const char* dflt) {
    std::string name = sj.value(key, dflt);
    int c = t.column(name);
    if (c < 0)
      throw SchemaError("required column '" + name + "' missing in " + encounters_path);
    return c;
  };
  int c_l1 = col("level1", "level1"), c_l2 = col("level2", "level2");
  int c_day = col("day", "day"), c_inf = col("infection", "infection");
  int c_tx = -1, c_birth = -1;
  if (sj.contains("transplant_day")) c_tx = t.column(sj.at("transplant_day").get<std::string>());
  if (sj.contains("birth_day")) c_birth = t.column(sj.at("birth_day").get<std::string>());
  std::vector<std::string> cov_names;
  std::vector<int> cov_cols;
  if (sj.contains("covariates"))
    for (const auto& n : sj.at("covariates")) {
      cov_names.push_back(n.get<std::string>());
      cov_cols.push_back(col(cov_names.back().c_str(), ""));
    }

  EncounterData enc;
  enc.covariate_names = cov_names;
  std::size_t line = 1;
  for (const auto& rec : t.rows) {
    ++line;
    std::string ctx = encounters_path + ":" + std::to_string(line);
    Encounter e;
    e.level1 = rec[static_cast<std::size_t>(c_l1)];
    e.level2 = rec[static_cast<std::size_t>(c_l2)];
    double day = parse_double(rec[static_cast<std::size_t>(c_day)], ctx);
    if (!is_missing(day)) e.day = day;
    e.infected = parse_event_field(rec[static_cast<std::size_t>(c_inf)], ctx);
    for (int c : cov_cols)
      e.covariates.push_back(parse_double(rec[static_cast<std::size_t>(c)], ctx));
    if (c_tx >= 0) {
      double tx = parse_double(rec[static_cast<std::size_t>(c_tx)], ctx);
      if (!is_missing(tx)) enc.transplant_day.emplace(e.level2, tx);
    }
    if (c_birth >= 0) {
      double b = parse_double(rec[static_cast<std::size_t>(c_birth)], ctx);
      if (!is_missing(b)) enc.birth_day.emplace(e.level2, b);
    }
    enc.encounters.push_back(std::move(e));
  }

  IntervalRules rules;
  if (!rules_path.empty()) {
    json rj = read_json_file(rules_path);
    rules.washout_days = rj.value("washout_days", rules.washout_days);
    rules.lookback_days = rj.value("lookback_days", rules.lookback_days);
    rules.max_gap_days = rj.value("max_gap_days", rules.max_gap_days);
    rules.exclude_post_transplant =
        rj.value("exclude_post_transplant", rules.exclude_post_transplant);
    rules.infant_at_risk = rj.value("infant_at_risk", rules.infant_at_risk);
    if (rj.contains("cutoff_day")) rules.cutoff_day = rj.at("cutoff_day").get<double>();
  }
  BuildResult built = build_at_risk_intervals(enc, rules);
  for (const auto& msg : built.log) std::cerr << "ingest: " << msg << "\n";
  save_dataset(built.dataset, out_path);
  std::cout << "wrote " << built.dataset.n_rows() << " at-risk rows for "
            << built.dataset.n_level2() << " subjects\n";
}

void cmd_fit(const PipelineConfig& cfg) {
  MIStack train;
  if (cfg.training_path.find("{i}") != std::string::npos)
    train = load_mi_stack(cfg.training_path, cfg.M, cfg.schema);
  else
    train = assemble_mi_stack({load_dataset(cfg.training_path, cfg.schema)});
  fs::create_directories(cfg.out_dir);
  json model = json::array();
  std::vector<VectorXd> betas;
  std::vector<MatrixXd> covs;
  for (std::size_t l = 0; l < train.M(); ++l) {
    FrailtyFit fit = fit_model(train.copy(l), cfg.fit);
    VectorXd off;
    if (cfg.fit.include_frailty_in_prediction) off = frailty_offsets(fit, train.copy(l));
    HazardTable hz = breslow_hazard(fit.beta_hat, off, train.copy(l));
    json entry;
    entry["fit"] = fit_to_json(fit);
    entry["hazard"] = hazard_to_json(hz);
    model.push_back(std::move(entry));
    betas.push_back(fit.beta_hat);
    covs.push_back(fit.beta_cov);
  }
  write_json_file(model, (fs::path(cfg.out_dir) / "model.json").string());
  if (train.M() >= 2) {
    PooledEstimate pooled = rubin_pool(betas, covs, train.copy(0).covariate_names());
    json pj;
    pj["names"] = pooled.names;
    pj["beta"] = std::vector<double>(pooled.beta_bar.begin(), pooled.beta_bar.end());
    pj["t"] = std::vector<double>(pooled.t_stats.begin(), pooled.t_stats.end());
    pj["p"] = std::vector<double>(pooled.p_values.begin(), pooled.p_values.end());
    pj["df"] = std::vector<double>(pooled.df.begin(), pooled.df.end());
    write_json_file(pj, (fs::path(cfg.out_dir) / "pooled.json").string());
  }
  std::cout << "wrote model for M=" << train.M() << " copies to " << cfg.out_dir << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"risk-adjusted incidence modeling for hierarchical recurrent-event data"};
  app.require_subcommand(1);

  std::string config_path, out_dir, encounters, schema_path, rules_path, out_path;
  std::string predictions_path;
  std::uint64_t seed = 0;
  int replicates = 0;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config,-c", config_path, "pipeline config (JSON)");
    if (need_config) opt->required();
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out,-o", out_dir, "output directory override");
  };

  auto* s_sim = app.add_subcommand("simulate", "generate a synthetic dataset + truth sidecar");
  s_sim->add_option("--config,-c", config_path, "sim config (JSON)");
  s_sim->add_option("--seed", seed, "seed override");
  s_sim->add_option("--out,-o", out_dir, "output directory")->required();

  auto* s_ingest =
      app.add_subcommand("ingest", "build at-risk intervals from raw encounter records");
  s_ingest->add_option("--encounters", encounters, "encounter CSV")->required();
  s_ingest->add_option("--schema", schema_path, "column mapping JSON");
  s_ingest->add_option("--rules", rules_path, "interval rules JSON");
  s_ingest->add_option("--out,-o", out_path, "output dataset CSV")->required();

  auto* s_select = app.add_subcommand("select", "step-down variable selection on the MI stack");
  add_common(s_select, true);

  auto* s_fit = app.add_subcommand("fit", "fit Cox + frailty models per MI copy");
  add_common(s_fit, true);

  auto* s_predict =
      app.add_subcommand("predict", "expected counts, variance components, CIs, flags");
  add_common(s_predict, true);

  auto* s_validate = app.add_subcommand("validate", "coverage table from prediction artifacts");
  s_validate->add_option("--predictions", predictions_path, "predictions.csv path")->required();
  s_validate->add_option("--out,-o", out_path, "coverage CSV output")->required();

  auto* s_report = app.add_subcommand("report", "human-readable flag table");
  add_common(s_report, true);

  auto* s_study = app.add_subcommand("study", "replicated simulate-mode coverage study");
  add_common(s_study, true);
  s_study->add_option("--replicates,-r", replicates, "replicate count override");

  CLI11_PARSE(app, argc, argv);

  if (s_sim->parsed()) {
    cmd_simulate(config_path, seed, out_dir);
    return 0;
  }
  if (s_ingest->parsed()) {
    cmd_ingest(encounters, schema_path, rules_path, out_path);
    return 0;
  }
  if (s_validate->parsed()) {
    CsvTable t = read_csv(predictions_path);
    int c_m = t.column("m"), c_conf = t.column("confidence"), c_obs = t.column("observed");
    int c_lo = t.column("ci_lo"), c_hi = t.column("ci_hi");
    if (c_m < 0 || c_conf < 0 || c_obs < 0 || c_lo < 0 || c_hi < 0)
      throw SchemaError("predictions file missing required columns");
    std::map<std::pair<std::string, std::string>, std::pair<int, int>> tally;
    for (const auto& r : t.rows) {
      auto key = std::make_pair(r[static_cast<std::size_t>(c_m)],
                                r[static_cast<std::size_t>(c_conf)]);
      double obs = parse_double(r[static_cast<std::size_t>(c_obs)], predictions_path);
      double lo = parse_double(r[static_cast<std::size_t>(c_lo)], predictions_path);
      double hi = parse_double(r[static_cast<std::size_t>(c_hi)], predictions_path);
      ++tally[key].second;
      if (obs >= lo && obs <= hi) ++tally[key].first;
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, counts] : tally) {
      double cov = static_cast<double>(counts.first) / counts.second;
      double conf = parse_double(key.second, "confidence");
      rows.push_back({key.first, key.second, format_double(cov),
                      format_double(std::fabs(cov - conf))});
    }
    write_csv(out_path, {"m", "confidence", "coverage", "abs_cov_diff"}, rows);
    std::cout << "wrote " << rows.size() << " coverage rows\n";
    return 0;
  }

  PipelineConfig cfg = load_config(config_path, seed, out_dir);
  if (s_select->parsed()) {
    PipelineConfig c2 = cfg;
    c2.selection = true;
    MIStack train = c2.training_path.find("{i}") != std::string::npos
                        ? load_mi_stack(c2.training_path, c2.M, c2.schema)
                        : assemble_mi_stack({load_dataset(c2.training_path, c2.schema)});
    SelectionTrace trace = stepdown_select(train, c2.fit, c2.thresholds);
    fs::create_directories(c2.out_dir);
    write_json_file(detail::selection_to_json(trace),
                    (fs::path(c2.out_dir) / "selection.json").string());
    std::ofstream st((fs::path(c2.out_dir) / "selection.txt").string());
    st << detail::selection_to_text(trace);
    std::cout << "selected " << trace.final_covariates.size() << " covariates in "
              << trace.iterations.size() << " iterations\n";
    return 0;
  }
  if (s_fit->parsed()) {
    cmd_fit(cfg);
    return 0;
  }
  if (s_predict->parsed() || s_report->parsed()) {
    PipelineResult res = run_pipeline(cfg);
    if (s_report->parsed()) std::cout << emit_report(res, cfg);
    std::cout << "artifacts in " << cfg.out_dir << "\n";
    return 0;
  }
  if (s_study->parsed()) {
    if (replicates > 0) cfg.replicates = replicates;
    StudyResult study = run_simulation_study(cfg, cfg.replicates);
    write_study_artifacts(study, cfg);
    for (const auto& f : study.failures) std::cerr << "study: " << f << "\n";
    if (study.failure_flag) std::cerr << "study: more than 5% of replicates failed\n";
    std::cout << "study artifacts in " << cfg.out_dir << " (" << study.rows.size()
              << " table rows)\n";
    return study.failure_flag ? 2 : 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ComputeError& e) {
    std::cerr << "computation failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
