#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aap/benchmark.hpp"
#include "aap/common.hpp"
#include "aap/hash.hpp"
#include "aap/measures.hpp"
#include "aap/ontology.hpp"
#include "aap/store.hpp"

namespace aap {

// ---------------------------------------------------------------------------
// Risk levels

enum class RiskLevel { Minimal = 0, Limited = 1, High = 2, Unacceptable = 3 };

inline std::string to_string(RiskLevel r) {
  switch (r) {
    case RiskLevel::Minimal: return "Minimal";
    case RiskLevel::Limited: return "Limited";
    case RiskLevel::High: return "High";
    case RiskLevel::Unacceptable: return "Unacceptable";
  }
  return "Limited";
}

inline RiskLevel risk_from_string(const std::string& s) {
  if (s == "Minimal") return RiskLevel::Minimal;
  if (s == "Limited") return RiskLevel::Limited;
  if (s == "High") return RiskLevel::High;
  if (s == "Unacceptable") return RiskLevel::Unacceptable;
  throw Error("bad_risk", "unknown risk level: " + s);
}

inline bool operator<(RiskLevel a, RiskLevel b) {
  return static_cast<int>(a) < static_cast<int>(b);
}

// The risk mapping is data, not code: legislation moves, the rule table is
// a versioned config file. Rules apply in order; no match falls back to
// Limited so unclassified systems still register and get checked.
struct RiskRule {
  std::string kind;     // "keyword" (substring of intended use) | "deployment_type"
  std::string pattern;  // lowercase keyword, or a deployment type id
  RiskLevel risk = RiskLevel::Limited;

  Json to_json() const {
    return Json{{"kind", kind}, {"pattern", pattern}, {"risk", to_string(risk)}};
  }
  static RiskRule from_json(const Json& j) {
    return RiskRule{j.at("kind").get<std::string>(), j.at("pattern").get<std::string>(),
                    risk_from_string(j.at("risk").get<std::string>())};
  }
};

struct RiskRuleTable {
  int version = 1;
  std::vector<RiskRule> rules;
  RiskLevel default_risk = RiskLevel::Limited;

  Json to_json() const {
    Json arr = Json::array();
    for (const auto& r : rules) arr.push_back(r.to_json());
    return Json{{"version", version}, {"rules", arr}, {"default_risk", to_string(default_risk)}};
  }

  static RiskRuleTable from_json(const Json& j) {
    RiskRuleTable t;
    t.version = j.at("version").get<int>();
    for (const auto& rj : j.at("rules")) t.rules.push_back(RiskRule::from_json(rj));
    t.default_risk = risk_from_string(j.value("default_risk", "Limited"));
    return t;
  }

  static RiskRuleTable defaults() {
    RiskRuleTable t;
    t.version = 1;
    t.rules = {
        {"keyword", "real-time biometric identification", RiskLevel::Unacceptable},
        {"keyword", "social scoring", RiskLevel::Unacceptable},
        {"deployment_type", "biometric", RiskLevel::High},
        {"deployment_type", "hiring", RiskLevel::High},
        {"deployment_type", "student-support", RiskLevel::High},
        {"deployment_type", "criminal-justice", RiskLevel::High},
        {"deployment_type", "healthcare", RiskLevel::High},
        {"keyword", "recidivism", RiskLevel::High},
        {"keyword", "recreational", RiskLevel::Minimal},
    };
    return t;
  }
};

// ---------------------------------------------------------------------------
// Deployment types, certificates, cards, system records

inline const std::vector<std::string>& known_sectors() {
  static const std::vector<std::string> s = {"biometric",        "hiring",    "student-support",
                                             "criminal-justice", "healthcare", "other"};
  return s;
}

struct DeploymentType {
  std::string deployment_type_id;
  std::string sector;
  std::string description;
  std::string ontology_id;
  std::vector<std::string> measure_set;

  Json to_json() const {
    return Json{{"deployment_type_id", deployment_type_id},
                {"sector", sector},
                {"description", description},
                {"ontology_id", ontology_id},
                {"measure_set", measure_set}};
  }

  static DeploymentType from_json(const Json& j) {
    DeploymentType d;
    d.deployment_type_id = j.at("deployment_type_id").get<std::string>();
    d.sector = j.at("sector").get<std::string>();
    d.description = j.value("description", "");
    d.ontology_id = j.at("ontology_id").get<std::string>();
    d.measure_set = j.at("measure_set").get<std::vector<std::string>>();
    return d;
  }
};

struct Certificate {
  std::string certificate_id;
  std::string system_id;
  std::string deployment_type_id;
  std::string claim_template;
  std::map<std::string, std::string> claim_params;
  std::int64_t issued_at = 0;
  std::string transcript_hash;
  std::string status = "valid";  // valid | revoked
  std::string revoked_reason;

  std::string claim_text() const {
    std::string out;
    std::size_t i = 0;
    while (i < claim_template.size()) {
      if (claim_template[i] == '{') {
        const auto close = claim_template.find('}', i + 1);
        if (close == std::string::npos) break;
        const std::string key = claim_template.substr(i + 1, close - i - 1);
        const auto it = claim_params.find(key);
        out += it != claim_params.end() ? it->second : "{" + key + "}";
        i = close + 1;
      } else {
        out += claim_template[i++];
      }
    }
    return out;
  }

  Json to_json() const {
    Json j{{"certificate_id", certificate_id},
           {"system_id", system_id},
           {"deployment_type_id", deployment_type_id},
           {"claim", Json{{"template", claim_template}, {"params", claim_params},
                          {"text", claim_text()}}},
           {"issued_at", issued_at},
           {"transcript_hash", transcript_hash},
           {"status", status}};
    if (!revoked_reason.empty()) j["revoked_reason"] = revoked_reason;
    return j;
  }

  static Certificate from_json(const Json& j) {
    Certificate c;
    c.certificate_id = j.at("certificate_id").get<std::string>();
    c.system_id = j.at("system_id").get<std::string>();
    c.deployment_type_id = j.at("deployment_type_id").get<std::string>();
    c.claim_template = j.at("claim").at("template").get<std::string>();
    c.claim_params = j.at("claim").at("params").get<std::map<std::string, std::string>>();
    c.issued_at = j.at("issued_at").get<std::int64_t>();
    c.transcript_hash = j.at("transcript_hash").get<std::string>();
    c.status = j.at("status").get<std::string>();
    c.revoked_reason = j.value("revoked_reason", "");
    return c;
  }
};

struct AICard {
  std::string system_id;
  std::map<std::string, MeasureValue> measures;
  std::vector<InfluenceExplanation> local_explanations;
  std::optional<GlobalInfluence> global_explanation;
  std::vector<Certificate> certificates;
  // Derived from peers at export time, never persisted as state.
  std::map<std::string, std::string> percentile_labels;

  bool empty() const {
    return measures.empty() && local_explanations.empty() && !global_explanation &&
           certificates.empty();
  }

  Json to_json() const {
    Json meas = Json::object();
    for (const auto& [id, m] : measures) meas[id] = m.to_json();
    Json locals = Json::array();
    for (const auto& e : local_explanations) locals.push_back(e.to_json());
    Json certs = Json::array();
    for (const auto& c : certificates) certs.push_back(c.to_json());
    return Json{{"system_id", system_id},
                {"measures", meas},
                {"local_explanations", locals},
                {"global_explanation",
                 global_explanation ? global_explanation->to_json() : Json()},
                {"certificates", certs},
                {"percentile_labels", percentile_labels}};
  }

  static AICard from_json(const Json& j) {
    AICard c;
    c.system_id = j.at("system_id").get<std::string>();
    for (const auto& [id, mj] : j.at("measures").items()) {
      c.measures[id] = MeasureValue::from_json(mj);
    }
    for (const auto& ej : j.at("local_explanations"))
      c.local_explanations.push_back(InfluenceExplanation::from_json(ej));
    if (!j.at("global_explanation").is_null())
      c.global_explanation = GlobalInfluence::from_json(j.at("global_explanation"));
    for (const auto& cj : j.at("certificates"))
      c.certificates.push_back(Certificate::from_json(cj));
    c.percentile_labels =
        j.value("percentile_labels", std::map<std::string, std::string>{});
    return c;
  }
};

struct SystemRecord {
  std::string system_id;
  std::string name;
  std::string provider;
  std::string intended_use;
  std::string deployment_type_id;
  RiskLevel risk_level = RiskLevel::Limited;
  std::int64_t registered_at = 0;
  AICard card;

  Json to_json() const {
    return Json{{"system_id", system_id},
                {"name", name},
                {"provider", provider},
                {"intended_use", intended_use},
                {"deployment_type_id", deployment_type_id},
                {"risk_level", to_string(risk_level)},
                {"registered_at", registered_at},
                {"card", card.to_json()}};
  }

  static SystemRecord from_json(const Json& j) {
    SystemRecord s;
    s.system_id = j.at("system_id").get<std::string>();
    s.name = j.at("name").get<std::string>();
    s.provider = j.at("provider").get<std::string>();
    s.intended_use = j.at("intended_use").get<std::string>();
    s.deployment_type_id = j.at("deployment_type_id").get<std::string>();
    s.risk_level = risk_from_string(j.at("risk_level").get<std::string>());
    s.registered_at = j.at("registered_at").get<std::int64_t>();
    s.card = AICard::from_json(j.at("card"));
    return s;
  }
};

struct RegistrationOutcome {
  enum class Status { Registered, AlreadyRegistered, Refused };
  Status status = Status::Registered;
  SystemRecord record;
  std::string reason;
};

// ---------------------------------------------------------------------------
// Registry

class Registry {
 public:
  explicit Registry(Store& store) : store_(store) {
    if (!store_.get_json("risk_rules.json")) {
      store_.put_json("risk_rules.json", RiskRuleTable::defaults().to_json());
    }
  }

  Store& store() { return store_; }

  RiskRuleTable risk_rules() const {
    return RiskRuleTable::from_json(*store_.get_json("risk_rules.json"));
  }
  void put_risk_rules(const RiskRuleTable& t) { store_.put_json("risk_rules.json", t.to_json()); }

  // --- ontologies, templates, deployment types ---

  void add_ontology(const FeatureOntology& ont) {
    ont.validate();
    store_.put_json("ontologies/" + ont.ontology_id + ".json", ont.to_json());
  }

  std::optional<FeatureOntology> ontology(const std::string& id) const {
    const auto j = store_.get_json("ontologies/" + id + ".json");
    if (!j) return std::nullopt;
    return FeatureOntology::from_json(*j);
  }

  FeatureOntology require_ontology(const std::string& id) const {
    auto o = ontology(id);
    if (!o) throw Error("unknown_ontology", "ontology not found: " + id);
    return *o;
  }

  void add_template(const RenderTemplate& t) {
    validate_template(t, require_ontology(t.ontology_id));
    store_.put_json("templates/" + t.template_id + ".json", t.to_json());
  }

  std::vector<RenderTemplate> templates_for(const std::string& ontology_id) const {
    std::vector<RenderTemplate> out;
    for (const auto& f : store_.list_dir("templates")) {
      const auto t = RenderTemplate::from_json(*store_.get_json("templates/" + f));
      if (t.ontology_id == ontology_id) out.push_back(t);
    }
    return out;
  }

  void add_deployment_type(const DeploymentType& dt) {
    if (dt.deployment_type_id.empty())
      throw Error("bad_deployment_type", "deployment_type_id missing");
    if (std::find(known_sectors().begin(), known_sectors().end(), dt.sector) ==
        known_sectors().end())
      throw Error("bad_deployment_type", "unknown sector: " + dt.sector);
    const FeatureOntology ont = require_ontology(dt.ontology_id);
    const bool fairness = std::find(dt.measure_set.begin(), dt.measure_set.end(),
                                    kMeasureImpactRatio) != dt.measure_set.end();
    ont.validate(fairness);
    for (const auto& id : dt.measure_set) {
      if (!find_measure(id))
        throw Error("bad_deployment_type", "unknown measure id in measure_set: " + id);
    }
    store_.put_json("deployment_types/" + dt.deployment_type_id + ".json", dt.to_json());
  }

  std::optional<DeploymentType> deployment_type(const std::string& id) const {
    const auto j = store_.get_json("deployment_types/" + id + ".json");
    if (!j) return std::nullopt;
    return DeploymentType::from_json(*j);
  }

  DeploymentType require_deployment_type(const std::string& id) const {
    auto dt = deployment_type(id);
    if (!dt) throw Error("unknown_deployment_type", "deployment type not found: " + id);
    return *dt;
  }

  // --- risk classification ---

  // Deterministic in (arguments, rule table version). Total: always returns
  // a level.
  RiskLevel classify_risk(const std::string& intended_use,
                          const std::string& deployment_type_id) const {
    const RiskRuleTable table = risk_rules();
    const std::string use = lowercase(intended_use);
    for (const auto& rule : table.rules) {
      if (rule.kind == "keyword") {
        if (use.find(lowercase(rule.pattern)) != std::string::npos) return rule.risk;
      } else if (rule.kind == "deployment_type") {
        if (rule.pattern == deployment_type_id) return rule.risk;
      }
    }
    return table.default_risk;
  }

  // --- registration ---

  RegistrationOutcome register_system(const std::string& name, const std::string& provider,
                                      const std::string& intended_use,
                                      const std::string& deployment_type_id) {
    RegistrationOutcome out;
    const RiskLevel risk = classify_risk(intended_use, deployment_type_id);
    if (risk == RiskLevel::Unacceptable) {
      out.status = RegistrationOutcome::Status::Refused;
      out.reason = "intended use maps to the Unacceptable risk tier; registration refused";
      return out;
    }
    const auto dt = deployment_type(deployment_type_id);
    if (!dt && risk != RiskLevel::Minimal) {
      throw Error("unknown_deployment_type",
                  "deployment type not found: " + deployment_type_id);
    }
    if (dt && risk == RiskLevel::High && dt->measure_set.empty()) {
      throw Error("bad_deployment_type",
                  "High-risk deployment type has an empty measure set");
    }

    const std::string id =
        "sys-" + short_digest(name + "\x1f" + provider + "\x1f" + deployment_type_id);
    if (auto existing = system(id)) {
      out.status = RegistrationOutcome::Status::AlreadyRegistered;
      out.record = *existing;
      return out;
    }

    SystemRecord rec;
    rec.system_id = id;
    rec.name = name;
    rec.provider = provider;
    rec.intended_use = intended_use;
    rec.deployment_type_id = deployment_type_id;
    rec.risk_level = risk;
    rec.registered_at = now_epoch_seconds();
    rec.card.system_id = id;
    put_system(rec);
    out.status = RegistrationOutcome::Status::Registered;
    out.record = rec;
    return out;
  }

  std::optional<SystemRecord> system(const std::string& id) const {
    for (const auto& dt : store_.list_subdirs("systems")) {
      const auto j = store_.get_json("systems/" + dt + "/" + id + ".json");
      if (j) return SystemRecord::from_json(*j);
    }
    return std::nullopt;
  }

  SystemRecord require_system(const std::string& id) const {
    auto s = system(id);
    if (!s) throw Error("unknown_system", "system not found: " + id);
    return *s;
  }

  // Writes the current record version; card measures must stay within the
  // deployment type's standardized set.
  void put_system(const SystemRecord& rec) {
    if (const auto dt = deployment_type(rec.deployment_type_id)) {
      for (const auto& [id, m] : rec.card.measures) {
        if (std::find(dt->measure_set.begin(), dt->measure_set.end(), id) ==
            dt->measure_set.end()) {
          throw Error("nonstandard_measure",
                      "card measure not in deployment type's measure set: " + id);
        }
      }
    } else if (!rec.card.measures.empty()) {
      throw Error("nonstandard_measure",
                  "card carries measures but the deployment type is not defined");
    }
    store_.put_json("systems/" + rec.deployment_type_id + "/" + rec.system_id + ".json",
                    rec.to_json());
  }

  // Stable ordering: registration time, then system id.
  std::vector<SystemRecord> list_systems(
      const std::optional<std::string>& deployment_type_id = std::nullopt) const {
    std::vector<SystemRecord> out;
    for (const auto& dt : store_.list_subdirs("systems")) {
      if (deployment_type_id && dt != *deployment_type_id) continue;
      for (const auto& f : store_.list_dir("systems/" + dt)) {
        out.push_back(SystemRecord::from_json(*store_.get_json("systems/" + dt + "/" + f)));
      }
    }
    std::sort(out.begin(), out.end(), [](const SystemRecord& a, const SystemRecord& b) {
      if (a.registered_at != b.registered_at) return a.registered_at < b.registered_at;
      return a.system_id < b.system_id;
    });
    return out;
  }

  // --- percentile labels ---

  // "top ceil(100*rank/n)% <measure name>" among same-deployment-type peers
  // carrying the measure; rank 1 is best, ties share the better rank.
  std::string percentile_label(const std::string& system_id,
                               const std::string& measure_id) const {
    const SystemRecord sys = require_system(system_id);
    const MeasureDef* def = find_measure(measure_id);
    if (!def) throw Error("unknown_measure", "unknown measure id: " + measure_id);
    const auto self_it = sys.card.measures.find(measure_id);
    if (self_it == sys.card.measures.end() || !self_it->second.defined())
      throw Error("no_comparable_data", "no comparable data for measure " + measure_id);
    const double self_value = *self_it->second.value;

    std::size_t n = 0;
    std::size_t better = 0;
    for (const auto& peer : list_systems(sys.deployment_type_id)) {
      const auto it = peer.card.measures.find(measure_id);
      if (it == peer.card.measures.end() || !it->second.defined()) continue;
      ++n;
      if (measure_better(*def, *it->second.value, self_value)) ++better;
    }
    const std::size_t rank = better + 1;
    const auto pct = static_cast<int>(
        std::ceil(100.0 * static_cast<double>(rank) / static_cast<double>(n)));
    return "top " + std::to_string(pct) + "% " + def->display_name;
  }

  // --- card export / import ---

  Json export_card(const std::string& system_id) const {
    SystemRecord sys = require_system(system_id);
    for (const auto& [id, m] : sys.card.measures) {
      if (m.defined()) sys.card.percentile_labels[id] = percentile_label(system_id, id);
    }
    return sys.to_json();
  }

  std::string export_card_text(const std::string& system_id) const {
    SystemRecord sys = require_system(system_id);
    std::ostringstream out;
    out << "AI card: " << sys.name << " (" << sys.system_id << ")\n";
    out << "provider: " << sys.provider << "\n";
    out << "intended use: " << sys.intended_use << "\n";
    out << "deployment type: " << sys.deployment_type_id << "\n";
    out << "risk level: " << to_string(sys.risk_level) << "\n";
    out << "registered at: " << sys.registered_at << "\n";
    if (sys.card.measures.empty()) {
      out << "measures: none reported\n";
    } else {
      out << "measures:\n";
      for (const auto& [id, m] : sys.card.measures) {
        out << "  " << id << ": ";
        if (m.defined()) {
          out << Json(*m.value).dump() << " (n=" << m.sample_size << ", "
              << to_string(m.provenance) << ", " << percentile_label(system_id, id) << ")";
        } else {
          out << "undefined: " << m.undefined_reason;
        }
        out << "\n";
      }
    }
    if (sys.card.global_explanation) {
      out << "global influence (mean absolute, fold "
          << sys.card.global_explanation->context_fold_ref << "):\n";
      for (const auto& [f, v] : sys.card.global_explanation->mean_abs) {
        out << "  " << f << ": " << Json(v).dump() << "\n";
      }
    }
    out << "local explanations: " << sys.card.local_explanations.size() << "\n";
    if (sys.card.certificates.empty()) {
      out << "certificates: none\n";
    } else {
      out << "certificates:\n";
      for (const auto& c : sys.card.certificates) {
        out << "  [" << c.status << "] " << c.claim_text() << " (transcript "
            << c.transcript_hash << ")\n";
      }
    }
    return out.str();
  }

  // Idempotent restore of an exported card document. Re-importing a
  // document exported from this store leaves the store unchanged.
  SystemRecord import_card(const Json& doc) {
    SystemRecord incoming = SystemRecord::from_json(doc);
    if (const auto existing = system(incoming.system_id)) {
      const Json current = export_card(incoming.system_id);
      if (canonical_dump(current) != canonical_dump(doc)) {
        throw Error("card_conflict",
                    "imported card conflicts with the stored record for " +
                        incoming.system_id);
      }
      return *existing;
    }
    incoming.card.percentile_labels.clear();  // derived, not state
    put_system(incoming);
    return incoming;
  }

 private:
  static std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  }

  Store& store_;
};

}  // namespace aap
