#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskadj/breslow.hpp"
#include "riskadj/cox.hpp"
#include "riskadj/csv.hpp"
#include "riskadj/imputation.hpp"
#include "riskadj/types.hpp"

namespace riskadj {

using nlohmann::json;

/// Column mapping for dataset CSVs. Canonical order is level1, level2, start,
/// stop, event, then covariates; an empty covariate list means "all remaining
/// header columns, in order". Missing values are empty fields.
struct ColumnSchema {
  std::string level1 = "level1";
  std::string level2 = "level2";
  std::string start = "start";
  std::string stop = "stop";
  std::string event = "event";
  std::vector<std::string> covariates;

  static ColumnSchema from_json(const json& j) {
    ColumnSchema s;
    if (j.contains("level1")) s.level1 = j.at("level1").get<std::string>();
    if (j.contains("level2")) s.level2 = j.at("level2").get<std::string>();
    if (j.contains("start")) s.start = j.at("start").get<std::string>();
    if (j.contains("stop")) s.stop = j.at("stop").get<std::string>();
    if (j.contains("event")) s.event = j.at("event").get<std::string>();
    if (j.contains("covariates"))
      s.covariates = j.at("covariates").get<std::vector<std::string>>();
    return s;
  }

  static ColumnSchema from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open schema file '" + path + "'");
    json j;
    in >> j;
    return from_json(j);
  }
};

inline bool parse_event_field(const std::string& s, const std::string& context) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw SchemaError("event field must be 0/1/true/false, got '" + s + "' in " + context);
}

inline Dataset load_dataset(const std::string& path, const ColumnSchema& schema = {}) {
  CsvTable t = read_csv(path);
  auto need = [&](const std::string& name) {
    int c = t.column(name);
    if (c < 0) throw SchemaError("required column '" + name + "' missing in " + path);
    return c;
  };
  const int c_l1 = need(schema.level1), c_l2 = need(schema.level2);
  const int c_start = need(schema.start), c_stop = need(schema.stop), c_ev = need(schema.event);

  std::vector<std::string> cov_names = schema.covariates;
  std::vector<int> cov_cols;
  if (cov_names.empty()) {
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      int ci = static_cast<int>(c);
      if (ci == c_l1 || ci == c_l2 || ci == c_start || ci == c_stop || ci == c_ev) continue;
      cov_names.push_back(t.header[c]);
      cov_cols.push_back(ci);
    }
  } else {
    for (const auto& name : cov_names) cov_cols.push_back(need(name));
  }

  std::vector<AtRiskRow> rows;
  rows.reserve(t.rows.size());
  std::size_t line = 1;
  for (const auto& rec : t.rows) {
    ++line;
    const std::string ctx = path + ":" + std::to_string(line);
    if (rec.size() != t.header.size())
      throw SchemaError("wrong field count in " + ctx);
    AtRiskRow r;
    r.group.level1 = rec[static_cast<std::size_t>(c_l1)];
    r.group.level2 = rec[static_cast<std::size_t>(c_l2)];
    r.start = parse_double(rec[static_cast<std::size_t>(c_start)], ctx);
    r.stop = parse_double(rec[static_cast<std::size_t>(c_stop)], ctx);
    if (is_missing(r.start) || is_missing(r.stop))
      throw SchemaError("start/stop may not be empty in " + ctx);
    r.event = parse_event_field(rec[static_cast<std::size_t>(c_ev)], ctx);
    r.encounter_index = static_cast<int>(rows.size());
    for (int c : cov_cols) r.covariates.push_back(parse_double(rec[static_cast<std::size_t>(c)], ctx));
    rows.push_back(std::move(r));
  }
  // per-subject encounter counters
  std::map<std::string, int> enc;
  for (auto& r : rows) r.encounter_index = ++enc[r.group.level2];
  return Dataset(std::move(rows), std::move(cov_names));
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::vector<std::string> header{"level1", "level2", "start", "stop", "event"};
  for (const auto& n : d.covariate_names()) header.push_back(n);
  std::vector<std::vector<std::string>> out;
  out.reserve(d.n_rows());
  for (std::size_t i = 0; i < d.n_rows(); ++i) {
    AtRiskRow r = d.row(i);
    std::vector<std::string> rec{r.group.level1, r.group.level2, format_double(r.start),
                                 format_double(r.stop), r.event ? "1" : "0"};
    for (double v : r.covariates) rec.push_back(is_missing(v) ? "" : format_double(v));
    out.push_back(std::move(rec));
  }
  write_csv(path, header, out);
}

/// Load M imputed copies named by an index pattern ("{i}" is 1..M).
inline MIStack load_mi_stack(const std::string& pattern, int M,
                             const ColumnSchema& schema = {}) {
  if (M < 1) throw ValidationError("load_mi_stack: M must be >= 1");
  std::vector<Dataset> copies;
  for (int l = 1; l <= M; ++l) {
    std::string path = pattern;
    auto pos = path.find("{i}");
    if (pos == std::string::npos)
      throw ValidationError("MI pattern must contain '{i}': " + pattern);
    path.replace(pos, 3, std::to_string(l));
    copies.push_back(load_dataset(path, schema));
  }
  return assemble_mi_stack(std::move(copies));
}

inline json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j) {
  MatrixXd m(j.size(), j.empty() ? 0 : j.front().size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

inline json fit_to_json(const FrailtyFit& fit) {
  json j;
  j["covariates"] = fit.covariate_names;
  j["beta"] = std::vector<double>(fit.beta_hat.begin(), fit.beta_hat.end());
  j["beta_cov"] = matrix_to_json(fit.beta_cov);
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["monotone_flag"] = fit.monotone_flag;
  j["degenerate_random_effect"] = fit.degenerate_random_effect;
  j["training_level1"] = fit.training_level1;
  json res = json::array();
  for (const auto& re : fit.random_effects) {
    json r;
    r["term"] = re.term;
    r["theta"] = re.theta;
    r["labels"] = re.labels;
    r["b"] = std::vector<double>(re.b.begin(), re.b.end());
    res.push_back(std::move(r));
  }
  j["random_effects"] = std::move(res);
  return j;
}

inline FrailtyFit fit_from_json(const json& j) {
  FrailtyFit fit;
  fit.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  auto beta = j.at("beta").get<std::vector<double>>();
  fit.beta_hat = Eigen::Map<const VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  fit.beta_cov = matrix_from_json(j.at("beta_cov"));
  fit.loglik = j.at("loglik").get<double>();
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.monotone_flag = j.at("monotone_flag").get<bool>();
  fit.degenerate_random_effect = j.at("degenerate_random_effect").get<bool>();
  fit.training_level1 = j.at("training_level1").get<std::vector<std::string>>();
  for (const auto& r : j.at("random_effects")) {
    FrailtyFit::RandomEffects re;
    re.term = r.at("term").get<std::string>();
    re.theta = r.at("theta").get<double>();
    re.labels = r.at("labels").get<std::vector<std::string>>();
    auto b = r.at("b").get<std::vector<double>>();
    re.b = Eigen::Map<const VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    fit.random_effects.push_back(std::move(re));
  }
  return fit;
}

inline json hazard_to_json(const HazardTable& h) {
  json j;
  j["times"] = h.times;
  j["increments"] = h.increments;
  return j;
}

inline HazardTable hazard_from_json(const json& j) {
  HazardTable h;
  h.times = j.at("times").get<std::vector<double>>();
  h.increments = j.at("increments").get<std::vector<double>>();
  h.cumulative.resize(h.increments.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < h.increments.size(); ++k) {
    acc += h.increments[k];
    h.cumulative[k] = acc;
  }
  return h;
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file '" + path + "'");
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file '" + path + "'");
  json j;
  in >> j;
  return j;
}

}  // namespace riskadj
