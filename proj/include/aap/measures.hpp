#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aap/benchmark.hpp"
#include "aap/common.hpp"
#include "aap/config.hpp"
#include "aap/ontology.hpp"
#include "aap/rng.hpp"

namespace aap {

enum class Polarity { HigherBetter, LowerBetter };
enum class Provenance { Internal, Automated, ExternalSummary };

inline std::string to_string(Polarity p) {
  return p == Polarity::HigherBetter ? "higher-better" : "lower-better";
}
inline Polarity polarity_from_string(const std::string& s) {
  if (s == "higher-better") return Polarity::HigherBetter;
  if (s == "lower-better") return Polarity::LowerBetter;
  throw Error("bad_measure", "unknown polarity: " + s);
}
inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Internal: return "internal";
    case Provenance::Automated: return "automated";
    case Provenance::ExternalSummary: return "external-summary";
  }
  return "internal";
}
inline Provenance provenance_from_string(const std::string& s) {
  if (s == "internal") return Provenance::Internal;
  if (s == "automated") return Provenance::Automated;
  if (s == "external-summary") return Provenance::ExternalSummary;
  throw Error("bad_measure", "unknown provenance: " + s);
}

struct MeasureValue {
  std::string measure_id;
  std::optional<double> value;  // nullopt => undefined
  std::string undefined_reason;
  Polarity polarity = Polarity::HigherBetter;
  std::int64_t sample_size = 0;
  Provenance provenance = Provenance::Internal;

  bool defined() const { return value.has_value(); }

  Json to_json() const {
    Json j{{"measure_id", measure_id},
           {"polarity", to_string(polarity)},
           {"sample_size", sample_size},
           {"provenance", to_string(provenance)}};
    if (value) {
      j["value"] = *value;
    } else {
      j["value"] = nullptr;
      j["undefined_reason"] = undefined_reason;
    }
    return j;
  }

  static MeasureValue from_json(const Json& j) {
    MeasureValue m;
    m.measure_id = j.at("measure_id").get<std::string>();
    if (!j.at("value").is_null()) m.value = j.at("value").get<double>();
    m.undefined_reason = j.value("undefined_reason", "");
    m.polarity = polarity_from_string(j.at("polarity").get<std::string>());
    m.sample_size = j.at("sample_size").get<std::int64_t>();
    m.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    return m;
  }
};

// Standardized measure vocabulary. `proportion` marks measures that are
// plain proportions of a known sample size and so are comparable with a
// two-proportion z-test. Disparate impact is ranked by distance from 1.
struct MeasureDef {
  std::string id;
  std::string display_name;
  Polarity polarity;
  bool proportion;
  bool rank_distance_to_one;
};

inline constexpr const char* kMeasureAccuracy = "accuracy";
inline constexpr const char* kMeasureImpactRatio = "impact_ratio";
inline constexpr const char* kMeasureType1 = "type1_rate";
inline constexpr const char* kMeasureType2 = "type2_rate";
inline constexpr const char* kMeasureAbstention = "abstention_rate";
inline constexpr const char* kMeasureAbstainNovel = "abstain_on_novel";
inline constexpr const char* kMeasureAbstainNormal = "abstain_on_normal";

inline const std::vector<MeasureDef>& measure_catalog() {
  static const std::vector<MeasureDef> defs = {
      {kMeasureAccuracy, "accuracy", Polarity::HigherBetter, true, false},
      {kMeasureImpactRatio, "disparate impact score", Polarity::LowerBetter, false, true},
      {kMeasureType1, "type 1 error rate", Polarity::LowerBetter, true, false},
      {kMeasureType2, "type 2 error rate", Polarity::LowerBetter, true, false},
      {kMeasureAbstention, "abstention rate", Polarity::LowerBetter, true, false},
      {kMeasureAbstainNovel, "novel-input abstention rate", Polarity::HigherBetter, true, false},
      {kMeasureAbstainNormal, "normal-input abstention rate", Polarity::LowerBetter, true, false},
  };
  return defs;
}

inline const MeasureDef* find_measure(const std::string& id) {
  for (const auto& d : measure_catalog()) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

inline double measure_rank_key(const MeasureDef& def, double value) {
  return def.rank_distance_to_one ? std::fabs(1.0 - value) : value;
}

// True when `a` outranks `b` for this measure.
inline bool measure_better(const MeasureDef& def, double a, double b) {
  const double ka = measure_rank_key(def, a);
  const double kb = measure_rank_key(def, b);
  return def.polarity == Polarity::HigherBetter ? ka > kb : ka < kb;
}

// ---------------------------------------------------------------------------
// Outcome tables

struct OutcomeRow {
  std::size_t record_index = 0;
  std::string group_key;
  std::string prediction;  // label-domain value or ABSTAIN
  std::string label;
  bool novelty_flag = false;
};

struct OutcomeTable {
  std::vector<OutcomeRow> rows;
  std::string positive_label;
  std::vector<std::string> label_domain;

  bool binary() const { return label_domain.size() == 2; }
};

inline std::string group_key_of(const FeatureOntology& ont, const Record& r) {
  std::string key;
  for (std::size_t fi : ont.protected_feature_indices()) {
    if (!key.empty()) key += ",";
    key += ont.features[fi].name + "=" + r.values[fi].display();
  }
  return key;
}

inline OutcomeTable build_outcome_table(const FeatureOntology& ont,
                                        const BenchmarkFold& fold,
                                        const std::vector<std::string>& predictions) {
  if (predictions.size() != fold.records.size())
    throw Error("bad_outcomes", "one prediction per fold record required");
  OutcomeTable t;
  t.positive_label = ont.positive_label;
  t.label_domain = ont.label_domain;
  t.rows.reserve(fold.records.size());
  for (std::size_t i = 0; i < fold.records.size(); ++i) {
    const Record& r = fold.records[i];
    t.rows.push_back({i, group_key_of(ont, r), predictions[i], r.label, r.novelty_flag});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Fairness and performance statistics

struct RateResult {
  std::optional<double> rate;
  std::string undefined_reason;
  std::int64_t group_size = 0;   // all rows of the group
  std::int64_t decided = 0;      // non-abstained rows
  std::int64_t positives = 0;    // positive decisions among decided
};

// Fraction of the group's decided (non-abstained) rows with a positive
// prediction. Groups below min_group_size are undefined to avoid unstable
// small-n statistics.
inline RateResult selection_rate(const OutcomeTable& t, const std::string& group_key,
                                 const Config& cfg) {
  RateResult r;
  for (const auto& row : t.rows) {
    if (row.group_key != group_key) continue;
    ++r.group_size;
    if (row.prediction == kAbstain) continue;
    ++r.decided;
    if (row.prediction == t.positive_label) ++r.positives;
  }
  if (r.group_size < cfg.min_group_size) {
    r.undefined_reason = "group below min_group_size";
    return r;
  }
  if (r.decided == 0) {
    r.undefined_reason = "no decided rows";
    return r;
  }
  r.rate = static_cast<double>(r.positives) / static_cast<double>(r.decided);
  return r;
}

inline std::vector<std::string> group_keys(const OutcomeTable& t) {
  std::vector<std::string> keys;
  for (const auto& row : t.rows) {
    if (std::find(keys.begin(), keys.end(), row.group_key) == keys.end())
      keys.push_back(row.group_key);
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

struct ImpactRatioResult {
  std::optional<double> ratio;
  std::string undefined_reason;
  bool rule_flag = false;  // the 80% rule: flagged iff ratio < 0.8, strictly
  std::string group;
  std::string reference_group;
  std::int64_t sample_size = 0;
};

// rate(a) / rate(b) with b as the reference group; flagged when strictly
// below 0.8.
inline ImpactRatioResult impact_ratio(const OutcomeTable& t, const std::string& group_a,
                                      const std::string& group_b, const Config& cfg) {
  ImpactRatioResult out;
  out.group = group_a;
  out.reference_group = group_b;
  const RateResult ra = selection_rate(t, group_a, cfg);
  const RateResult rb = selection_rate(t, group_b, cfg);
  if (!ra.rate) {
    out.undefined_reason = "group " + group_a + ": " + ra.undefined_reason;
    return out;
  }
  if (!rb.rate) {
    out.undefined_reason = "group " + group_b + ": " + rb.undefined_reason;
    return out;
  }
  if (*rb.rate == 0.0) {
    out.undefined_reason = "reference group selection rate is zero";
    return out;
  }
  out.ratio = *ra.rate / *rb.rate;
  out.rule_flag = *out.ratio < 0.8;
  out.sample_size = ra.decided + rb.decided;
  return out;
}

// Worst-case ratio across groups against the highest-rate group.
inline ImpactRatioResult worst_case_impact_ratio(const OutcomeTable& t, const Config& cfg) {
  ImpactRatioResult out;
  std::vector<std::pair<std::string, double>> rates;
  std::int64_t decided_total = 0;
  for (const auto& g : group_keys(t)) {
    const RateResult r = selection_rate(t, g, cfg);
    if (r.rate) {
      rates.emplace_back(g, *r.rate);
      decided_total += r.decided;
    }
  }
  if (rates.size() < 2) {
    out.undefined_reason = "fewer than two groups with a defined selection rate";
    return out;
  }
  const auto ref = std::max_element(rates.begin(), rates.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
  if (ref->second == 0.0) {
    out.undefined_reason = "reference group selection rate is zero";
    return out;
  }
  out.reference_group = ref->first;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [g, rate] : rates) {
    if (g == ref->first) continue;
    const double ratio = rate / ref->second;
    if (ratio < worst) {
      worst = ratio;
      out.group = g;
    }
  }
  out.ratio = worst;
  out.rule_flag = worst < 0.8;
  out.sample_size = decided_total;
  return out;
}

struct PerfStats {
  std::optional<double> accuracy;
  std::int64_t accuracy_n = 0;  // decided, non-novel rows
  std::optional<double> type1_rate;
  std::int64_t type1_n = 0;  // decided rows with a negative label
  std::optional<double> type2_rate;
  std::int64_t type2_n = 0;  // decided rows with a positive label
  std::optional<double> abstention_rate;
  std::int64_t total_rows = 0;
  std::string undefined_reason;

  Json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return Json{{"accuracy", opt(accuracy)},       {"accuracy_n", accuracy_n},
                {"type1_rate", opt(type1_rate)},   {"type1_n", type1_n},
                {"type2_rate", opt(type2_rate)},   {"type2_n", type2_n},
                {"abstention_rate", opt(abstention_rate)}, {"total_rows", total_rows}};
  }
};

namespace detail {

// Performance over a row subset. Novel rows expect abstention rather than a
// domain label, so they count toward abstention but not accuracy or error
// rates. Type 1 is the false-positive rate among decided negatives, type 2
// the false-negative rate among decided positives.
template <typename RowPred>
PerfStats perf_over(const OutcomeTable& t, const Config& cfg, RowPred&& in_scope) {
  PerfStats p;
  std::int64_t abstained = 0, correct = 0, fp = 0, fn = 0;
  for (const auto& row : t.rows) {
    if (!in_scope(row)) continue;
    ++p.total_rows;
    if (row.prediction == kAbstain) {
      ++abstained;
      continue;
    }
    if (row.novelty_flag) continue;
    ++p.accuracy_n;
    if (row.prediction == row.label) ++correct;
    if (t.binary()) {
      if (row.label == t.positive_label) {
        ++p.type2_n;
        if (row.prediction != t.positive_label) ++fn;
      } else {
        ++p.type1_n;
        if (row.prediction == t.positive_label) ++fp;
      }
    }
  }
  if (p.total_rows < cfg.min_group_size) {
    p.undefined_reason = "group below min_group_size";
    return p;
  }
  p.abstention_rate = static_cast<double>(abstained) / static_cast<double>(p.total_rows);
  if (p.accuracy_n > 0)
    p.accuracy = static_cast<double>(correct) / static_cast<double>(p.accuracy_n);
  if (t.binary()) {
    if (p.type1_n > 0) p.type1_rate = static_cast<double>(fp) / static_cast<double>(p.type1_n);
    if (p.type2_n > 0) p.type2_rate = static_cast<double>(fn) / static_cast<double>(p.type2_n);
  }
  return p;
}

}  // namespace detail

inline PerfStats overall_performance(const OutcomeTable& t, const Config& cfg) {
  return detail::perf_over(t, cfg, [](const OutcomeRow&) { return true; });
}

inline std::map<std::string, PerfStats> group_performance(const OutcomeTable& t,
                                                          const Config& cfg) {
  std::map<std::string, PerfStats> out;
  for (const auto& g : group_keys(t)) {
    out[g] = detail::perf_over(t, cfg, [&](const OutcomeRow& r) { return r.group_key == g; });
  }
  return out;
}

struct AbstentionStats {
  std::optional<double> abstain_on_novel;
  std::optional<double> abstain_on_normal;
  std::int64_t novel_rows = 0;
  std::int64_t normal_rows = 0;
};

inline AbstentionStats abstention_stats(const OutcomeTable& t) {
  AbstentionStats s;
  std::int64_t novel_abstained = 0, normal_abstained = 0;
  for (const auto& row : t.rows) {
    if (row.novelty_flag) {
      ++s.novel_rows;
      if (row.prediction == kAbstain) ++novel_abstained;
    } else {
      ++s.normal_rows;
      if (row.prediction == kAbstain) ++normal_abstained;
    }
  }
  if (s.novel_rows > 0)
    s.abstain_on_novel = static_cast<double>(novel_abstained) / static_cast<double>(s.novel_rows);
  if (s.normal_rows > 0)
    s.abstain_on_normal =
        static_cast<double>(normal_abstained) / static_cast<double>(s.normal_rows);
  return s;
}

// The full standardized set computable from one outcome table, keyed by
// measure id. Callers pick the subset their deployment type standardizes.
inline std::map<std::string, MeasureValue> compute_standard_measures(const OutcomeTable& t,
                                                                     const Config& cfg) {
  std::map<std::string, MeasureValue> out;
  auto put = [&](const char* id, std::optional<double> v, const std::string& reason,
                 std::int64_t n) {
    MeasureValue m;
    m.measure_id = id;
    m.value = v;
    m.undefined_reason = v ? "" : reason;
    m.polarity = find_measure(id)->polarity;
    m.sample_size = n;
    out[id] = std::move(m);
  };

  const PerfStats perf = overall_performance(t, cfg);
  const std::string perf_reason =
      !perf.undefined_reason.empty() ? perf.undefined_reason : "no decided rows";
  put(kMeasureAccuracy, perf.accuracy, perf_reason, perf.accuracy_n);
  put(kMeasureType1, perf.type1_rate,
      t.binary() ? perf_reason : "labels not binary", perf.type1_n);
  put(kMeasureType2, perf.type2_rate,
      t.binary() ? perf_reason : "labels not binary", perf.type2_n);
  put(kMeasureAbstention, perf.abstention_rate, perf_reason, perf.total_rows);

  const ImpactRatioResult ir = worst_case_impact_ratio(t, cfg);
  put(kMeasureImpactRatio, ir.ratio, ir.undefined_reason, ir.sample_size);

  const AbstentionStats ab = abstention_stats(t);
  put(kMeasureAbstainNovel, ab.abstain_on_novel, "no novel rows", ab.novel_rows);
  put(kMeasureAbstainNormal, ab.abstain_on_normal, "no normal rows", ab.normal_rows);
  return out;
}

// ---------------------------------------------------------------------------
// Input influence (marginal replacement from context data)

struct InfluenceExplanation {
  std::size_t record_index = 0;
  std::map<std::string, double> influence;  // signed, in positive-outcome probability units
  std::string context_fold_ref;
  int sample_count = 0;
  std::uint64_t seed = 0;

  Json to_json() const {
    return Json{{"record_index", record_index},
                {"influence", influence},
                {"context_fold_ref", context_fold_ref},
                {"sample_count", sample_count},
                {"seed", seed}};
  }

  static InfluenceExplanation from_json(const Json& j) {
    InfluenceExplanation e;
    e.record_index = j.at("record_index").get<std::size_t>();
    e.influence = j.at("influence").get<std::map<std::string, double>>();
    e.context_fold_ref = j.at("context_fold_ref").get<std::string>();
    e.sample_count = j.at("sample_count").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    return e;
  }
};

// Context-draw plan: draws[f][s] is the context row replacing feature f in
// sample s. Shared by the direct and the protocol-mediated evaluation paths
// so both aggregate identical numbers.
inline std::vector<std::vector<std::uint32_t>> influence_draws(std::uint64_t seed,
                                                               std::size_t n_features,
                                                               int sample_count,
                                                               std::size_t context_size) {
  SeededRng rng(seed);
  std::vector<std::vector<std::uint32_t>> draws(n_features);
  for (auto& per_feature : draws) {
    per_feature.reserve(static_cast<std::size_t>(sample_count));
    for (int s = 0; s < sample_count; ++s) {
      per_feature.push_back(static_cast<std::uint32_t>(rng.below(context_size)));
    }
  }
  return draws;
}

// Ordered query list for one explanation: the record itself first, then
// feature-major perturbations.
inline std::vector<Record> influence_query_plan(
    const Record& r, const BenchmarkFold& context,
    const std::vector<std::vector<std::uint32_t>>& draws) {
  std::size_t total = 1;
  for (const auto& d : draws) total += d.size();
  std::vector<Record> queries;
  queries.reserve(total);
  queries.push_back(r);
  for (std::size_t f = 0; f < draws.size(); ++f) {
    for (const std::uint32_t ctx : draws[f]) {
      Record q = r;
      q.values[f] = context.records[ctx].values[f];
      queries.push_back(std::move(q));
    }
  }
  return queries;
}

// Aggregation over scores returned for influence_query_plan's ordering.
inline InfluenceExplanation influence_from_scores(const FeatureOntology& ont, const Record&,
                                                  const std::vector<double>& scores,
                                                  int sample_count,
                                                  const std::string& context_fold_ref,
                                                  std::uint64_t seed,
                                                  std::size_t record_index) {
  InfluenceExplanation e;
  e.record_index = record_index;
  e.context_fold_ref = context_fold_ref;
  e.sample_count = sample_count;
  e.seed = seed;
  const double base = scores.at(0);
  std::size_t k = 1;
  for (std::size_t f = 0; f < ont.features.size(); ++f) {
    double sum = 0.0;
    for (int s = 0; s < sample_count; ++s) sum += base - scores.at(k++);
    e.influence[ont.features[f].name] = sum / static_cast<double>(sample_count);
  }
  return e;
}

// Marginal-replacement influence: for each feature, the mean drop in the
// model's positive-outcome score when that feature is replaced by values
// drawn (with replacement) from the public context fold. Deterministic in
// the seed; a model constant in a feature gets exactly zero.
template <typename ScoreFn>
InfluenceExplanation local_influence(ScoreFn&& score_fn, const FeatureOntology& ont,
                                     const Record& record, const BenchmarkFold& context,
                                     int sample_count, std::uint64_t seed,
                                     std::size_t record_index = 0) {
  if (context.visibility != Visibility::Public)
    throw Error("airgapped_context", "influence context fold must be public");
  if (context.records.empty()) throw Error("empty_context", "context fold has no records");
  if (sample_count < 1) throw Error("bad_sample_count", "sample_count must be >= 1");

  const auto draws =
      influence_draws(seed, ont.features.size(), sample_count, context.records.size());
  InfluenceExplanation e;
  e.record_index = record_index;
  e.context_fold_ref = context.ref();
  e.sample_count = sample_count;
  e.seed = seed;

  const double base = score_fn(record);
  Record scratch = record;
  for (std::size_t f = 0; f < ont.features.size(); ++f) {
    double sum = 0.0;
    for (const std::uint32_t ctx : draws[f]) {
      scratch.values[f] = context.records[ctx].values[f];
      sum += base - score_fn(scratch);
    }
    scratch.values[f] = record.values[f];
    e.influence[ont.features[f].name] = sum / static_cast<double>(sample_count);
  }
  return e;
}

struct GlobalInfluence {
  std::map<std::string, double> mean_abs;
  std::map<std::string, double> mean_signed;
  std::size_t explanation_count = 0;
  std::string context_fold_ref;
  int sample_count = 0;

  Json to_json() const {
    return Json{{"mean_abs", mean_abs},
                {"mean_signed", mean_signed},
                {"explanation_count", explanation_count},
                {"context_fold_ref", context_fold_ref},
                {"sample_count", sample_count}};
  }

  static GlobalInfluence from_json(const Json& j) {
    GlobalInfluence g;
    g.mean_abs = j.at("mean_abs").get<std::map<std::string, double>>();
    g.mean_signed = j.at("mean_signed").get<std::map<std::string, double>>();
    g.explanation_count = j.at("explanation_count").get<std::size_t>();
    g.context_fold_ref = j.value("context_fold_ref", "");
    g.sample_count = j.value("sample_count", 0);
    return g;
  }
};

// Aggregate of local explanations: per-feature mean absolute and mean signed
// influence.
inline GlobalInfluence global_influence(const std::vector<InfluenceExplanation>& explanations) {
  if (explanations.empty())
    throw Error("empty_explanations", "global influence needs at least one local explanation");
  GlobalInfluence g;
  g.explanation_count = explanations.size();
  g.context_fold_ref = explanations.front().context_fold_ref;
  g.sample_count = explanations.front().sample_count;
  for (const auto& e : explanations) {
    if (e.influence.size() != explanations.front().influence.size())
      throw Error("mixed_explanations", "explanations cover different feature sets");
    for (const auto& [name, v] : e.influence) {
      g.mean_abs[name] += std::fabs(v);
      g.mean_signed[name] += v;
    }
  }
  const auto n = static_cast<double>(explanations.size());
  for (auto& [name, v] : g.mean_abs) v /= n;
  for (auto& [name, v] : g.mean_signed) v /= n;
  return g;
}

struct InfluenceComparisonRow {
  std::string system_id;
  double mean_abs = 0.0;
  bool flagged = false;

  Json to_json() const {
    return Json{{"system_id", system_id}, {"mean_abs", mean_abs}, {"flagged", flagged}};
  }
};

// Cross-system comparison of one feature's influence. Systems are sorted by
// mean absolute influence; a system is flagged when it exceeds the median of
// its peers by more than `factor`.
inline std::vector<InfluenceComparisonRow> compare_influence(
    const std::vector<std::pair<std::string, GlobalInfluence>>& systems,
    const std::string& feature, double factor) {
  if (systems.size() < 2)
    throw Error("need_peers", "influence comparison needs at least two systems");
  const std::string& fold_ref = systems.front().second.context_fold_ref;
  for (const auto& [id, g] : systems) {
    if (g.context_fold_ref != fold_ref)
      throw Error("fold_mismatch", "system " + id + " was explained on a different fold version");
    if (!g.mean_abs.count(feature))
      throw Error("unknown_feature", "no influence recorded for feature " + feature);
  }

  std::vector<InfluenceComparisonRow> rows;
  rows.reserve(systems.size());
  for (const auto& [id, g] : systems) rows.push_back({id, g.mean_abs.at(feature), false});

  for (auto& row : rows) {
    std::vector<double> others;
    for (const auto& o : rows) {
      if (o.system_id != row.system_id) others.push_back(o.mean_abs);
    }
    std::sort(others.begin(), others.end());
    const std::size_t n = others.size();
    const double median =
        n % 2 == 1 ? others[n / 2] : 0.5 * (others[n / 2 - 1] + others[n / 2]);
    row.flagged = row.mean_abs > factor * median;
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs > b.mean_abs; });
  return rows;
}

// ---------------------------------------------------------------------------
// Counterfactual recourse

struct CounterfactualResult {
  Record counterfactual;
  std::size_t fold_index = SIZE_MAX;  // SIZE_MAX when the record itself qualifies
  std::vector<std::string> changed_features;
  double distance = 0.0;
};

// Weighted record distance: numeric differences normalized by ontology
// range, categorical and text mismatches cost 1.
inline double record_distance(const FeatureOntology& ont, const Record& a, const Record& b,
                              const std::map<std::string, double>& weights) {
  double d = 0.0;
  for (std::size_t i = 0; i < ont.features.size(); ++i) {
    const FeatureSpec& f = ont.features[i];
    const auto it = weights.find(f.name);
    const double w = it == weights.end() ? 1.0 : it->second;
    double delta = 0.0;
    if (f.kind == FeatureKind::Numeric && a.values[i].is_number() && b.values[i].is_number()) {
      const double range = f.max - f.min;
      delta = range > 0.0 ? std::fabs(a.values[i].number() - b.values[i].number()) / range
                          : (a.values[i] == b.values[i] ? 0.0 : 1.0);
    } else {
      delta = a.values[i] == b.values[i] ? 0.0 : 1.0;
    }
    d += w * delta;
  }
  return d;
}

// Nearest fold record receiving the desired outcome under the weighted
// distance. Protected features are immutable by default: candidates that
// differ on one are skipped. Ties break toward the lower fold index.
template <typename DecideFn>
std::optional<CounterfactualResult> counterfactual(
    DecideFn&& decide_fn, const FeatureOntology& ont, const Record& record,
    const std::string& desired_outcome, const BenchmarkFold& search_fold,
    const std::map<std::string, double>& distance_weights = {},
    bool allow_protected_changes = false) {
  if (search_fold.visibility != Visibility::Public)
    throw Error("airgapped_context", "counterfactual search fold must be public");
  if (!ont.label_in_domain(desired_outcome))
    throw Error("bad_outcome", "desired outcome not in label domain: " + desired_outcome);

  if (decide_fn(record) == desired_outcome) {
    return CounterfactualResult{record, SIZE_MAX, {}, 0.0};
  }

  const auto protected_idx = ont.protected_feature_indices();
  std::optional<CounterfactualResult> best;
  for (std::size_t i = 0; i < search_fold.records.size(); ++i) {
    const Record& cand = search_fold.records[i];
    if (cand.novelty_flag) continue;
    if (!allow_protected_changes) {
      bool protected_changed = false;
      for (std::size_t fi : protected_idx) {
        if (!(cand.values[fi] == record.values[fi])) {
          protected_changed = true;
          break;
        }
      }
      if (protected_changed) continue;
    }
    if (decide_fn(cand) != desired_outcome) continue;
    const double d = record_distance(ont, record, cand, distance_weights);
    if (!best || d < best->distance) {
      CounterfactualResult res;
      res.counterfactual = cand;
      res.fold_index = i;
      res.distance = d;
      for (std::size_t fi = 0; fi < ont.features.size(); ++fi) {
        if (!(cand.values[fi] == record.values[fi]))
          res.changed_features.push_back(ont.features[fi].name);
      }
      best = std::move(res);
    }
  }
  return best;
}

}  // namespace aap
