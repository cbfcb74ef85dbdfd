#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aap/benchmark.hpp"
#include "aap/common.hpp"
#include "aap/config.hpp"
#include "aap/measures.hpp"
#include "aap/ontology.hpp"
#include "aap/protocol.hpp"

namespace aap {

// What a model client sees for one query row: named tabular values or a
// rendered text document. Never labels, groups, or novelty markers.
struct QueryInput {
  std::optional<Json> values;
  std::optional<std::string> text;

  static QueryInput from_row(const Json& row) {
    QueryInput q;
    if (row.contains("values")) q.values = row.at("values");
    if (row.contains("text")) q.text = row.at("text").get<std::string>();
    if (!q.values && !q.text)
      throw Error("malformed_message", "query row carries neither values nor text");
    return q;
  }

  // The exact serialized form memorizer-style clients key on.
  std::string memo_key() const { return values ? canonical_dump(*values) : *text; }
};

inline QueryInput make_query_input(const FeatureOntology& ont, const Record& r,
                                   const InputPlan& plan) {
  return QueryInput::from_row(plan_row_payload(ont, r, plan));
}

struct ModelRule {
  std::string feature;
  std::string op;  // eq | ge | le | contains
  Value value;
  std::string decision;
};

// Reference model behaviors. These are deliberately simple native models:
// lookup tables and additive scorers are enough to exercise every measure
// and every audit failure mode.
class ModelBehavior {
 public:
  std::string kind;  // constant | additive-scorer | rule-based | abstainer | memorizer
  std::string system_id = "sys-unregistered";
  std::vector<SchemaFeature> expected_features;

  // constant
  std::string constant_decision;
  std::optional<double> constant_score;

  // additive-scorer: score = clamp(intercept + sum of contributions).
  // Numeric features are min-max normalized by the declared range,
  // categorical features contribute a per-value weight.
  double intercept = 0.5;
  double threshold = 0.5;
  std::string positive_label;
  std::string negative_label;
  struct NumericTerm {
    double weight = 0.0;
    double min = 0.0;
    double max = 1.0;
  };
  std::map<std::string, NumericTerm> numeric_terms;
  std::map<std::string, std::map<std::string, double>> categorical_terms;

  // rule-based: first matching rule wins. Decision-only (no score).
  std::vector<ModelRule> rules;
  std::string default_decision;

  // abstainer: ABSTAIN outside the declared domains, else delegate.
  std::vector<FeatureSpec> domains;
  std::shared_ptr<ModelBehavior> inner;

  // memorizer: exact serialized input -> decision, majority fallback.
  std::map<std::string, std::string> answers;
  std::string fallback_decision;

  ModelAnswer respond(const QueryInput& q) const {
    if (kind == "constant") return {constant_decision, constant_score};
    if (kind == "additive-scorer") return respond_additive(q);
    if (kind == "rule-based") return {apply_rules(q), std::nullopt};
    if (kind == "abstainer") return respond_abstainer(q);
    if (kind == "memorizer") {
      const auto it = answers.find(q.memo_key());
      return {it != answers.end() ? it->second : fallback_decision, std::nullopt};
    }
    throw Error("bad_behavior", "unknown behavior kind: " + kind);
  }

  Json to_json() const {
    Json j{{"kind", kind}, {"system_id", system_id}};
    Json feats = Json::array();
    for (const auto& f : expected_features) feats.push_back(f.to_json());
    j["schema"] = feats;
    if (kind == "constant") {
      j["decision"] = constant_decision;
      if (constant_score) j["score"] = *constant_score;
    } else if (kind == "additive-scorer") {
      j["intercept"] = intercept;
      j["threshold"] = threshold;
      j["positive_label"] = positive_label;
      j["negative_label"] = negative_label;
      Json num = Json::object();
      for (const auto& [name, t] : numeric_terms)
        num[name] = Json{{"weight", t.weight}, {"min", t.min}, {"max", t.max}};
      j["numeric_terms"] = num;
      j["categorical_terms"] = categorical_terms;
    } else if (kind == "rule-based") {
      Json arr = Json::array();
      for (const auto& r : rules)
        arr.push_back(Json{{"feature", r.feature},
                           {"op", r.op},
                           {"value", r.value.to_json()},
                           {"decision", r.decision}});
      j["rules"] = arr;
      j["default_decision"] = default_decision;
    } else if (kind == "abstainer") {
      Json dom = Json::array();
      for (const auto& f : domains) dom.push_back(f.to_json());
      j["domains"] = dom;
      j["inner"] = inner ? inner->to_json() : Json();
    } else if (kind == "memorizer") {
      j["answers"] = answers;
      j["fallback_decision"] = fallback_decision;
    }
    return j;
  }

  static ModelBehavior from_json(const Json& j) {
    ModelBehavior b;
    b.kind = j.at("kind").get<std::string>();
    b.system_id = j.value("system_id", "sys-unregistered");
    if (j.contains("schema")) {
      for (const auto& fj : j.at("schema"))
        b.expected_features.push_back(SchemaFeature::from_json(fj));
    }
    if (b.kind == "constant") {
      b.constant_decision = j.at("decision").get<std::string>();
      if (j.contains("score")) b.constant_score = j.at("score").get<double>();
    } else if (b.kind == "additive-scorer") {
      b.intercept = j.at("intercept").get<double>();
      b.threshold = j.value("threshold", 0.5);
      b.positive_label = j.at("positive_label").get<std::string>();
      b.negative_label = j.at("negative_label").get<std::string>();
      if (j.contains("numeric_terms")) {
        for (const auto& [name, tj] : j.at("numeric_terms").items()) {
          b.numeric_terms[name] = {tj.at("weight").get<double>(), tj.at("min").get<double>(),
                                   tj.at("max").get<double>()};
        }
      }
      if (j.contains("categorical_terms")) {
        b.categorical_terms =
            j.at("categorical_terms").get<std::map<std::string, std::map<std::string, double>>>();
      }
    } else if (b.kind == "rule-based") {
      for (const auto& rj : j.at("rules")) {
        b.rules.push_back({rj.at("feature").get<std::string>(), rj.at("op").get<std::string>(),
                           Value::from_json(rj.at("value")), rj.at("decision").get<std::string>()});
      }
      b.default_decision = j.at("default_decision").get<std::string>();
    } else if (b.kind == "abstainer") {
      for (const auto& fj : j.at("domains")) b.domains.push_back(FeatureSpec::from_json(fj));
      if (j.contains("inner") && !j.at("inner").is_null())
        b.inner = std::make_shared<ModelBehavior>(from_json(j.at("inner")));
    } else if (b.kind == "memorizer") {
      b.answers = j.at("answers").get<std::map<std::string, std::string>>();
      b.fallback_decision = j.at("fallback_decision").get<std::string>();
    } else {
      throw Error("bad_behavior", "unknown behavior kind: " + b.kind);
    }
    return b;
  }

 private:
  ModelAnswer respond_additive(const QueryInput& q) const {
    if (!q.values)
      throw Error("client_failure", "additive scorer expects tabular input");
    double s = intercept;
    for (const auto& [name, term] : numeric_terms) {
      if (!q.values->contains(name))
        throw Error("client_failure", "missing expected feature: " + name);
      const double x = q.values->at(name).get<double>();
      const double range = term.max - term.min;
      const double norm = range > 0.0 ? (x - term.min) / range : 0.0;
      s += term.weight * norm;
    }
    for (const auto& [name, table] : categorical_terms) {
      if (!q.values->contains(name))
        throw Error("client_failure", "missing expected feature: " + name);
      const std::string v = q.values->at(name).get<std::string>();
      const auto it = table.find(v);
      if (it != table.end()) s += it->second;
    }
    const double score = std::clamp(s, 0.0, 1.0);
    return {score >= threshold ? positive_label : negative_label, score};
  }

  std::string apply_rules(const QueryInput& q) const {
    for (const auto& r : rules) {
      if (q.text) {
        // Text input: rules test the whole document.
        if (r.op == "contains" && q.text->find(r.value.str()) != std::string::npos)
          return r.decision;
        if (r.op == "eq" && *q.text == r.value.str()) return r.decision;
        continue;
      }
      if (!q.values->contains(r.feature)) continue;
      const Json& cell = q.values->at(r.feature);
      if (r.op == "eq") {
        if (Value::from_json(cell) == r.value) return r.decision;
      } else if (r.op == "ge") {
        if (cell.is_number() && cell.get<double>() >= r.value.number()) return r.decision;
      } else if (r.op == "le") {
        if (cell.is_number() && cell.get<double>() <= r.value.number()) return r.decision;
      } else if (r.op == "contains") {
        if (cell.is_string() && cell.get<std::string>().find(r.value.str()) != std::string::npos)
          return r.decision;
      }
    }
    return default_decision;
  }

  ModelAnswer respond_abstainer(const QueryInput& q) const {
    bool out_of_domain = false;
    if (q.text) {
      out_of_domain = q.text->find(kOovMarker) != std::string::npos;
    } else {
      for (const auto& f : domains) {
        if (!q.values->contains(f.name)) continue;
        const Json& cell = q.values->at(f.name);
        switch (f.kind) {
          case FeatureKind::Numeric:
            if (!cell.is_number() || cell.get<double>() < f.min || cell.get<double>() > f.max)
              out_of_domain = true;
            break;
          case FeatureKind::Categorical:
            if (!cell.is_string() ||
                std::find(f.categories.begin(), f.categories.end(),
                          cell.get<std::string>()) == f.categories.end())
              out_of_domain = true;
            break;
          case FeatureKind::Text:
            if (!cell.is_string() ||
                cell.get<std::string>().find(kOovMarker) != std::string::npos)
              out_of_domain = true;
            break;
        }
        if (out_of_domain) break;
      }
    }
    if (out_of_domain) return {kAbstain, std::nullopt};
    if (!inner) throw Error("bad_behavior", "abstainer has no inner behavior");
    return inner->respond(q);
  }
};

// Positive-outcome score of an answer. Decision-only models are scored 0/1;
// a decision-only ABSTAIN scores a neutral 0.5.
inline double answer_score(const ModelAnswer& a, const std::string& positive_label) {
  if (a.score) return *a.score;
  if (a.decision == kAbstain) return 0.5;
  return a.decision == positive_label ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Client-side protocol loop

struct ClientOutcome {
  bool completed = false;
  std::string detail;
  std::size_t rows_answered = 0;
};

// Speaks the model side of the protocol to completion: HELLO, SCHEMA, then
// one RESPONSE_BATCH per QUERY_BATCH until SESSION_CLOSE.
inline ClientOutcome serve_model(const ModelBehavior& behavior, Connection& conn,
                                 int timeout_ms = 60000) {
  ClientOutcome out;
  conn.send_line(canonical_dump(msg::hello(behavior.system_id)));
  conn.send_line(canonical_dump(msg::schema(behavior.expected_features)));
  for (;;) {
    const RecvOutcome r = conn.recv_line(timeout_ms);
    if (r.status == RecvOutcome::Status::Timeout) {
      out.detail = "timed out waiting for the auditor";
      return out;
    }
    if (r.status == RecvOutcome::Status::Closed) {
      out.detail = "auditor closed the connection";
      return out;
    }
    Json m = Json::parse(r.line, nullptr, false);
    if (m.is_discarded()) {
      conn.send_line(canonical_dump(msg::error("malformed_message", "not JSON")));
      out.detail = "received a non-JSON line";
      return out;
    }
    const std::string type = message_type(m);
    if (type == kMsgSessionOpen) continue;
    if (type == kMsgSessionClose) {
      out.completed = true;
      return out;
    }
    if (type == kMsgError) {
      out.detail = "auditor error: " + m.value("code", "") + ": " + m.value("detail", "");
      return out;
    }
    if (type != kMsgQueryBatch) {
      conn.send_line(canonical_dump(msg::error("unexpected_message", "got " + type)));
      out.detail = "unexpected message type: " + type;
      return out;
    }
    Json rows = Json::array();
    try {
      for (const auto& row : m.at("rows")) {
        const QueryInput q = QueryInput::from_row(row);
        const ModelAnswer a = behavior.respond(q);
        Json rr{{"row_id", row.at("row_id").get<std::string>()}, {"decision", a.decision}};
        if (a.score) rr["score"] = *a.score;
        rows.push_back(std::move(rr));
        ++out.rows_answered;
      }
    } catch (const std::exception& e) {
      conn.send_line(canonical_dump(msg::error("client_failure", e.what())));
      out.detail = std::string("client failure: ") + e.what();
      return out;
    }
    conn.send_line(canonical_dump(msg::response_batch(m.value("batch_id", ""), std::move(rows))));
  }
}

// ---------------------------------------------------------------------------
// Reference model construction

inline std::string majority_label(const BenchmarkFold& fold) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : fold.records) {
    if (!r.novelty_flag) ++counts[r.label];
  }
  if (counts.empty()) throw Error("bad_fold", "fold has no labeled records");
  return std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
           return a.second < b.second;
         })->first;
}

// A model intentionally adapted to the public benchmark: it memorizes the
// exact serialized inputs of the fold and answers the true label (ABSTAIN
// for published abstain-expected rows), falling back to the majority label
// anywhere else.
inline ModelBehavior build_memorizer(const BenchmarkFold& fold, const FeatureOntology& ont,
                                     const std::string& system_id = "sys-unregistered") {
  if (fold.visibility != Visibility::Public)
    throw Error("airgapped_context", "memorizers are built from public folds only");
  ModelBehavior b;
  b.kind = "memorizer";
  b.system_id = system_id;
  for (const auto& f : ont.features) b.expected_features.push_back({f.name, f.kind});
  InputPlan plan;
  plan.mode = InputPlan::Mode::Tabular;
  for (const auto& f : ont.features) plan.features.push_back(f.name);
  for (const auto& r : fold.records) {
    b.answers[make_query_input(ont, r, plan).memo_key()] =
        r.label == kAbstainExpectedLabel ? kAbstain : r.label;
  }
  b.fallback_decision = majority_label(fold);
  return b;
}

// ---------------------------------------------------------------------------
// Local oracle: the audit computation without the wire protocol

struct AuditComputation {
  InputPlan plan;
  OutcomeTable table;
  std::map<std::string, MeasureValue> measures;
  std::map<std::string, PerfStats> groups;
  std::vector<InfluenceExplanation> explanations;
  std::optional<GlobalInfluence> global;
};

// Indices of the fold records that get a local explanation in an audit:
// the first `influence_records` non-novel rows.
inline std::vector<std::size_t> explained_record_indices(const BenchmarkFold& fold,
                                                         const Config& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.records.size() &&
                          out.size() < static_cast<std::size_t>(cfg.influence_records);
       ++i) {
    if (!fold.records[i].novelty_flag) out.push_back(i);
  }
  return out;
}

inline std::uint64_t explanation_seed(std::uint64_t audit_seed, std::size_t record_index) {
  return mix_seed(audit_seed, static_cast<std::uint64_t>(record_index));
}

// Runs the same computation an automated audit performs, querying the
// behavior directly. For deterministic behaviors this agrees bit-for-bit
// with a protocol-run audit on the same fold and seed.
inline AuditComputation local_oracle_audit(const ModelBehavior& behavior,
                                           const FeatureOntology& ont,
                                           const BenchmarkFold& fold,
                                           const std::vector<RenderTemplate>& templates,
                                           const Config& cfg, std::uint64_t seed) {
  const NegotiationResult neg = negotiate_schema(behavior.expected_features, ont, templates);
  if (!neg.ok) throw Error("schema_incompatible", neg.reason);

  AuditComputation out;
  out.plan = neg.plan;
  std::vector<std::string> decisions;
  decisions.reserve(fold.records.size());
  for (const auto& r : fold.records) {
    decisions.push_back(behavior.respond(make_query_input(ont, r, out.plan)).decision);
  }
  out.table = build_outcome_table(ont, fold, decisions);
  out.measures = compute_standard_measures(out.table, cfg);
  out.groups = group_performance(out.table, cfg);

  if (cfg.influence_records > 0 && cfg.influence_sample_count > 0 &&
      fold.visibility == Visibility::Public) {
    auto score_fn = [&](const Record& r) {
      return answer_score(behavior.respond(make_query_input(ont, r, out.plan)),
                          ont.positive_label);
    };
    for (const std::size_t idx : explained_record_indices(fold, cfg)) {
      out.explanations.push_back(local_influence(score_fn, ont, fold.records[idx], fold,
                                                 cfg.influence_sample_count,
                                                 explanation_seed(seed, idx), idx));
    }
    if (!out.explanations.empty()) out.global = global_influence(out.explanations);
  }
  return out;
}

}  // namespace aap
