#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "riskadj/types.hpp"

namespace riskadj {

/// One dated encounter record. Day is an integer offset (calendar conversion
/// happens upstream); a record without a date excludes its subject.
struct Encounter {
  std::string level1;
  std::string level2;
  std::optional<double> day;
  bool infected = false;
  std::vector<double> covariates;  // may be empty (no covariates) or carry NaN
};

struct EncounterData {
  std::vector<Encounter> encounters;
  std::vector<std::string> covariate_names;
  std::map<std::string, double> transplant_day;  // per level2, optional
  std::map<std::string, double> birth_day;       // per level2, optional
};

struct BuildResult {
  Dataset dataset;
  std::vector<std::string> log;
  std::map<std::string, double> first_at_risk_day;  // original clock, per subject
};

/// Constructs counting-process at-risk rows from raw encounters:
///  - a subject becomes at-risk after lookback_days of observed infection-free
///    history (immediately, for infants younger than the lookback);
///  - gaps longer than max_gap_days void the carry-forward assumption and
///    start a new chain;
///  - encounters after a transplant are dropped;
///  - an infection while at risk is an incident event; at-risk resumes
///    washout_days later;
///  - subjects whose computed at-risk start falls on an infection date are
///    excluded;
///  - follow-up ends at the event, the last encounter of the chain, or the
///    cutoff, whichever comes first;
///  - rows split at encounter days, covariates attach to row start dates;
///  - each subject's intervals shift so the first starts at day 0.
inline BuildResult build_at_risk_intervals(const EncounterData& input,
                                           const IntervalRules& rules) {
  rules.validate();
  BuildResult out{Dataset{}, {}, {}};

  std::map<std::string, std::vector<Encounter>> by_subject;
  for (const auto& e : input.encounters) by_subject[e.level2].push_back(e);

  std::vector<AtRiskRow> all_rows;
  for (auto& [subject, encs] : by_subject) {
    bool missing_date = false;
    for (const auto& e : encs)
      if (!e.day.has_value()) missing_date = true;
    if (missing_date) {
      out.log.push_back("subject '" + subject + "' excluded: encounter without a date");
      continue;
    }
    std::stable_sort(encs.begin(), encs.end(),
                     [](const Encounter& a, const Encounter& b) { return *a.day < *b.day; });

    // same-day encounters at two programs: intent unknowable, drop those rows
    {
      std::vector<Encounter> kept;
      std::size_t i = 0;
      while (i < encs.size()) {
        std::size_t j = i;
        bool conflict = false;
        while (j + 1 < encs.size() && *encs[j + 1].day == *encs[i].day) {
          ++j;
          if (encs[j].level1 != encs[i].level1) conflict = true;
        }
        if (conflict) {
          out.log.push_back("subject '" + subject + "': simultaneous encounters at day " +
                            std::to_string(*encs[i].day) + " under different programs dropped");
        } else {
          for (std::size_t k = i; k <= j; ++k) kept.push_back(encs[k]);
        }
        i = j + 1;
      }
      encs = std::move(kept);
      if (encs.empty()) continue;
    }

    if (rules.exclude_post_transplant) {
      auto it = input.transplant_day.find(subject);
      if (it != input.transplant_day.end()) {
        double tx = it->second;
        auto last = std::remove_if(encs.begin(), encs.end(),
                                   [&](const Encounter& e) { return *e.day > tx; });
        if (last != encs.end()) {
          out.log.push_back("subject '" + subject + "': post-transplant encounters dropped");
          encs.erase(last, encs.end());
        }
        if (encs.empty()) continue;
      }
    }

    // chains split at gaps > max_gap_days
    std::vector<std::vector<Encounter>> chains;
    for (const auto& e : encs) {
      if (chains.empty() || *e.day - *chains.back().back().day > rules.max_gap_days)
        chains.emplace_back();
      chains.back().push_back(e);
    }

    struct Span {
      double start, end;
      bool event;
    };
    std::vector<Span> spans;
    std::vector<const Encounter*> timeline;  // all kept encounters, for splitting
    bool drop_subject = false;

    for (const auto& chain : chains) {
      for (const auto& e : chain) timeline.push_back(&e);
      const double first_day = *chain.front().day;
      double at_risk_from;
      auto bit = input.birth_day.find(subject);
      if (rules.infant_at_risk && bit != input.birth_day.end() &&
          first_day - bit->second < rules.lookback_days) {
        at_risk_from = first_day;
      } else {
        at_risk_from = first_day + rules.lookback_days;
      }
      const double chain_end = std::min(*chain.back().day, rules.cutoff_day);

      for (const auto& e : chain) {
        if (!e.infected) continue;
        const double d = *e.day;
        if (d > rules.cutoff_day) break;
        if (d == at_risk_from) {
          out.log.push_back("subject '" + subject +
                            "' excluded: at-risk start equals infection date (day " +
                            std::to_string(d) + ")");
          drop_subject = true;
          break;
        }
        if (d > at_risk_from) spans.push_back({at_risk_from, d, true});
        at_risk_from = d + rules.washout_days;
      }
      if (drop_subject) break;
      if (at_risk_from < chain_end) spans.push_back({at_risk_from, chain_end, false});
    }
    if (drop_subject || spans.empty()) continue;

    // rows: spans split at encounter days, covariates from the governing
    // encounter (latest at or before the row start)
    const double shift = spans.front().start;
    out.first_at_risk_day[subject] = shift;
    for (const auto& span : spans) {
      std::vector<double> cuts{span.start};
      for (const Encounter* e : timeline)
        if (*e->day > span.start && *e->day < span.end) cuts.push_back(*e->day);
      std::sort(cuts.begin(), cuts.end());
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
      cuts.push_back(span.end);
      for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const Encounter* gov = nullptr;
        int gov_idx = 0, idx = 0;
        for (const Encounter* e : timeline) {
          ++idx;
          if (*e->day <= cuts[k]) {
            gov = e;
            gov_idx = idx;
          }
        }
        AtRiskRow r;
        r.group.level1 = gov ? gov->level1 : timeline.front()->level1;
        r.group.level2 = subject;
        r.encounter_index = gov_idx;
        r.start = cuts[k] - shift;
        r.stop = cuts[k + 1] - shift;
        r.event = span.event && (k + 2 == cuts.size());
        if (gov && !gov->covariates.empty())
          r.covariates = gov->covariates;
        else
          r.covariates.assign(input.covariate_names.size(), kMissing);
        all_rows.push_back(std::move(r));
      }
    }
  }
  out.dataset = Dataset(std::move(all_rows), input.covariate_names);
  return out;
}

}  // namespace riskadj
