#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aap/common.hpp"
#include "aap/csv.hpp"

namespace aap {

enum class FeatureKind { Categorical, Numeric, Text };

inline std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Categorical: return "categorical";
    case FeatureKind::Numeric: return "numeric";
    case FeatureKind::Text: return "text";
  }
  return "categorical";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "categorical") return FeatureKind::Categorical;
  if (s == "numeric") return FeatureKind::Numeric;
  if (s == "text") return FeatureKind::Text;
  throw Error("bad_ontology", "unknown feature kind: " + s);
}

// Marker appended to text values by novelty injection; a text value is
// out-of-domain exactly when it carries this token.
inline constexpr const char* kOovMarker = "__OOV__";

// Reserved decision token for "unable to decide".
inline constexpr const char* kAbstain = "ABSTAIN";

// Label given to injected novel records: the desired response is ABSTAIN.
inline constexpr const char* kAbstainExpectedLabel = "abstain-expected";

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Categorical;
  std::vector<std::string> categories;  // categorical domain
  double min = 0.0;                     // numeric domain
  double max = 0.0;
  bool protected_feature = false;

  Json to_json() const {
    Json j{{"name", name}, {"kind", to_string(kind)}, {"protected", protected_feature}};
    if (kind == FeatureKind::Categorical) j["values"] = categories;
    if (kind == FeatureKind::Numeric) {
      j["min"] = min;
      j["max"] = max;
    }
    return j;
  }

  static FeatureSpec from_json(const Json& j) {
    FeatureSpec f;
    f.name = j.at("name").get<std::string>();
    f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
    f.protected_feature = j.value("protected", false);
    if (f.kind == FeatureKind::Categorical) {
      f.categories = j.at("values").get<std::vector<std::string>>();
    } else if (f.kind == FeatureKind::Numeric) {
      f.min = j.at("min").get<double>();
      f.max = j.at("max").get<double>();
    }
    return f;
  }
};

// Deployment-type-specific feature schema: ordered features with domains,
// the label domain, and which label value counts as the desired outcome.
struct FeatureOntology {
  std::string ontology_id;
  std::vector<FeatureSpec> features;
  std::string label_name;
  std::vector<std::string> label_domain;
  std::string positive_label;

  std::optional<std::size_t> feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].name == name) return i;
    }
    return std::nullopt;
  }

  bool label_in_domain(const std::string& l) const {
    return std::find(label_domain.begin(), label_domain.end(), l) != label_domain.end();
  }

  bool value_in_domain(std::size_t fi, const Value& v) const {
    const FeatureSpec& f = features[fi];
    switch (f.kind) {
      case FeatureKind::Numeric:
        return v.is_number() && v.number() >= f.min && v.number() <= f.max;
      case FeatureKind::Categorical:
        return !v.is_number() &&
               std::find(f.categories.begin(), f.categories.end(), v.str()) !=
                   f.categories.end();
      case FeatureKind::Text:
        return !v.is_number() && v.str().find(kOovMarker) == std::string::npos;
    }
    return false;
  }

  std::vector<std::size_t> protected_feature_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].protected_feature) out.push_back(i);
    }
    return out;
  }

  void validate(bool require_protected = false) const {
    if (ontology_id.empty()) throw Error("bad_ontology", "ontology_id missing");
    std::map<std::string, int> seen;
    for (const auto& f : features) {
      if (++seen[f.name] > 1) throw Error("bad_ontology", "duplicate feature name: " + f.name);
      if (f.kind == FeatureKind::Numeric && !(f.min <= f.max))
        throw Error("bad_ontology", "numeric range inverted for " + f.name);
      if (f.kind == FeatureKind::Categorical && f.categories.empty())
        throw Error("bad_ontology", "empty categorical domain for " + f.name);
    }
    if (features.empty()) throw Error("bad_ontology", "ontology has no features");
    if (label_domain.empty()) throw Error("bad_ontology", "label domain empty");
    if (!label_in_domain(positive_label))
      throw Error("bad_ontology", "positive_label not in label domain");
    for (const auto& l : label_domain) {
      if (l == "ABSTAIN" || l == kAbstainExpectedLabel)
        throw Error("bad_ontology", "label domain uses a reserved token: " + l);
    }
    if (require_protected && protected_feature_indices().empty())
      throw Error("bad_ontology", "fairness-audited ontology needs a protected feature");
  }

  Json to_json() const {
    Json feats = Json::array();
    for (const auto& f : features) feats.push_back(f.to_json());
    return Json{{"ontology_id", ontology_id},
                {"features", feats},
                {"label_name", label_name},
                {"label_domain", label_domain},
                {"positive_label", positive_label}};
  }

  static FeatureOntology from_json(const Json& j) {
    FeatureOntology o;
    o.ontology_id = j.at("ontology_id").get<std::string>();
    for (const auto& fj : j.at("features")) o.features.push_back(FeatureSpec::from_json(fj));
    o.label_name = j.at("label_name").get<std::string>();
    o.label_domain = j.at("label_domain").get<std::vector<std::string>>();
    o.positive_label = j.at("positive_label").get<std::string>();
    return o;
  }
};

// One labeled sample. values is aligned with ontology.features.
struct Record {
  std::vector<Value> values;
  std::string label;
  bool novelty_flag = false;

  bool operator==(const Record& o) const = default;
};

inline bool record_values_conform(const FeatureOntology& ont, const Record& r) {
  if (r.values.size() != ont.features.size()) return false;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    if (!ont.value_in_domain(i, r.values[i])) return false;
  }
  return true;
}

// Replace one feature value; the novelty flag is recomputed from the
// resulting values.
inline Record intervene(const FeatureOntology& ont, const Record& r,
                        const std::string& feature, const Value& new_value) {
  const auto fi = ont.feature_index(feature);
  if (!fi) throw Error("unknown_feature", "feature not in ontology: " + feature);
  Record out = r;
  out.values[*fi] = new_value;
  out.novelty_flag = !record_values_conform(ont, out);
  return out;
}

// Named-object JSON form of a record's values, optionally restricted to a
// feature subset. This is the exact shape sent on the wire and the exact
// serialization memorizer-style clients key on.
inline Json record_values_json(const FeatureOntology& ont, const Record& r,
                               const std::vector<std::string>* subset = nullptr) {
  Json obj = Json::object();
  if (subset) {
    for (const auto& name : *subset) {
      const auto fi = ont.feature_index(name);
      if (!fi) throw Error("unknown_feature", "feature not in ontology: " + name);
      obj[name] = r.values[*fi].to_json();
    }
  } else {
    for (std::size_t i = 0; i < ont.features.size(); ++i) {
      obj[ont.features[i].name] = r.values[i].to_json();
    }
  }
  return obj;
}

struct ValidationIssue {
  std::size_t record_index = 0;
  std::string field;  // feature name or "label"
  std::string message;

  Json to_json() const {
    return Json{{"record_index", record_index}, {"field", field}, {"message", message}};
  }
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }

  Json to_json() const {
    Json arr = Json::array();
    for (const auto& i : issues) arr.push_back(i.to_json());
    return Json{{"ok", ok()}, {"issues", arr}};
  }
};

// Domain and label conformance for every non-novel record.
inline ValidationReport validate_dataset(const std::vector<Record>& records,
                                         const FeatureOntology& ont) {
  ValidationReport rep;
  for (std::size_t idx = 0; idx < records.size(); ++idx) {
    const Record& r = records[idx];
    if (r.novelty_flag) continue;  // novel records are out-of-domain by construction
    if (r.values.size() != ont.features.size()) {
      rep.issues.push_back({idx, "", "record has " + std::to_string(r.values.size()) +
                                         " values, ontology has " +
                                         std::to_string(ont.features.size())});
      continue;
    }
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      if (!ont.value_in_domain(i, r.values[i])) {
        rep.issues.push_back({idx, ont.features[i].name,
                              "value " + r.values[i].display() + " outside domain"});
      }
    }
    if (!ont.label_in_domain(r.label)) {
      rep.issues.push_back({idx, "label", "label " + r.label + " not in label domain"});
    }
  }
  return rep;
}

// Text rendering of structured records for text-input models.
struct RenderTemplate {
  std::string template_id;
  std::string ontology_id;
  std::string body;  // named placeholders like {age}

  Json to_json() const {
    return Json{{"template_id", template_id}, {"ontology_id", ontology_id}, {"body", body}};
  }
  static RenderTemplate from_json(const Json& j) {
    return RenderTemplate{j.at("template_id").get<std::string>(),
                          j.at("ontology_id").get<std::string>(),
                          j.at("body").get<std::string>()};
  }
};

inline std::vector<std::string> template_placeholders(const std::string& body) {
  std::vector<std::string> names;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      const std::size_t close = body.find('}', i + 1);
      if (close == std::string::npos) throw Error("bad_template", "unterminated placeholder");
      names.push_back(body.substr(i + 1, close - i - 1));
      i = close + 1;
    } else {
      ++i;
    }
  }
  return names;
}

inline void validate_template(const RenderTemplate& t, const FeatureOntology& ont) {
  if (t.ontology_id != ont.ontology_id)
    throw Error("bad_template", "template bound to a different ontology");
  for (const auto& name : template_placeholders(t.body)) {
    if (!ont.feature_index(name))
      throw Error("bad_template", "placeholder names unknown feature: " + name);
  }
}

// Deterministic substitution of every placeholder.
inline std::string render_text(const FeatureOntology& ont, const Record& r,
                               const RenderTemplate& t) {
  if (r.values.size() != ont.features.size())
    throw Error("missing_value", "record does not carry a value for every feature");
  std::string out;
  out.reserve(t.body.size());
  std::size_t i = 0;
  while (i < t.body.size()) {
    if (t.body[i] == '{') {
      const std::size_t close = t.body.find('}', i + 1);
      if (close == std::string::npos) throw Error("bad_template", "unterminated placeholder");
      const std::string name = t.body.substr(i + 1, close - i - 1);
      const auto fi = ont.feature_index(name);
      if (!fi) throw Error("bad_template", "placeholder names unknown feature: " + name);
      out += r.values[*fi].display();
      i = close + 1;
    } else {
      out += t.body[i];
      ++i;
    }
  }
  return out;
}

// CSV ingestion: header row names every ontology feature, label column last.
inline std::vector<Record> load_records_csv(const std::string& text,
                                            const FeatureOntology& ont) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw Error("bad_csv", "empty CSV");
  const auto& header = rows.front();
  if (header.size() != ont.features.size() + 1)
    throw Error("bad_csv", "expected " + std::to_string(ont.features.size() + 1) +
                               " columns, got " + std::to_string(header.size()));
  if (header.back() != ont.label_name)
    throw Error("bad_csv", "last column must be the label: " + ont.label_name);
  std::vector<std::size_t> col_to_feature(header.size() - 1);
  for (std::size_t c = 0; c + 1 < header.size(); ++c) {
    const auto fi = ont.feature_index(header[c]);
    if (!fi) throw Error("bad_csv", "unknown feature column: " + header[c]);
    col_to_feature[c] = *fi;
  }

  std::vector<Record> records;
  records.reserve(rows.size() - 1);
  for (std::size_t ri = 1; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    if (row.size() != header.size())
      throw Error("bad_csv", "row " + std::to_string(ri) + " has " +
                                 std::to_string(row.size()) + " fields");
    Record rec;
    rec.values.resize(ont.features.size());
    for (std::size_t c = 0; c + 1 < row.size(); ++c) {
      const std::size_t fi = col_to_feature[c];
      if (ont.features[fi].kind == FeatureKind::Numeric) {
        const std::string& cell = row[c];
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (cell.empty() || end != cell.c_str() + cell.size())
          throw Error("bad_csv", "row " + std::to_string(ri) + ": not a number: " + cell);
        rec.values[fi] = Value(v);
      } else {
        rec.values[fi] = Value(row[c]);
      }
    }
    rec.label = row.back();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace aap
