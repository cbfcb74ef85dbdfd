#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aap/canonical.hpp"
#include "aap/common.hpp"
#include "aap/hash.hpp"
#include "aap/ontology.hpp"
#include "aap/rng.hpp"

namespace aap {

enum class Visibility { Public, Airgapped };

inline std::string to_string(Visibility v) {
  return v == Visibility::Public ? "public" : "airgapped";
}
inline Visibility visibility_from_string(const std::string& s) {
  if (s == "public") return Visibility::Public;
  if (s == "airgapped") return Visibility::Airgapped;
  throw Error("bad_fold", "unknown visibility: " + s);
}

// Immutable labeled dataset partition. A new version is a new fold; the
// (fold_id, version) pair is rendered as "fold_id@version" in references.
struct BenchmarkFold {
  std::string fold_id;
  std::string ontology_id;
  Visibility visibility = Visibility::Public;
  std::vector<Record> records;
  int version = 1;
  std::uint64_t seed = 0;
  std::string paired_with;  // ref of the sibling fold from the same split, if any

  std::string ref() const { return fold_id + "@" + std::to_string(version); }

  Json record_to_json(const Record& r) const {
    Json vals = Json::array();
    for (const auto& v : r.values) vals.push_back(v.to_json());
    return Json{{"label", r.label}, {"novelty_flag", r.novelty_flag}, {"values", vals}};
  }

  Json to_json(const FeatureOntology& ont) const {
    Json names = Json::array();
    for (const auto& f : ont.features) names.push_back(f.name);
    Json recs = Json::array();
    for (const auto& r : records) recs.push_back(record_to_json(r));
    Json j{{"fold_id", fold_id},
           {"version", version},
           {"ontology_id", ontology_id},
           {"visibility", to_string(visibility)},
           {"seed", seed},
           {"features", names},
           {"records", recs}};
    if (!paired_with.empty()) j["paired_with"] = paired_with;
    j["content_digest"] = content_digest();
    return j;
  }

  static BenchmarkFold from_json(const Json& j) {
    BenchmarkFold f;
    f.fold_id = j.at("fold_id").get<std::string>();
    f.version = j.at("version").get<int>();
    f.ontology_id = j.at("ontology_id").get<std::string>();
    f.visibility = visibility_from_string(j.at("visibility").get<std::string>());
    f.seed = j.at("seed").get<std::uint64_t>();
    f.paired_with = j.value("paired_with", "");
    for (const auto& rj : j.at("records")) {
      Record r;
      for (const auto& vj : rj.at("values")) r.values.push_back(Value::from_json(vj));
      r.label = rj.at("label").get<std::string>();
      r.novelty_flag = rj.at("novelty_flag").get<bool>();
      f.records.push_back(std::move(r));
    }
    return f;
  }

  // Digest over identity and full record content; stable across runs.
  std::string content_digest() const {
    std::string body = fold_id + "|" + std::to_string(version) + "|" + ontology_id + "|" +
                       to_string(visibility) + "\n";
    for (const auto& r : records) body += canonical_dump(record_to_json(r)) + "\n";
    return sha256_hex(body);
  }
};

inline std::pair<std::string, int> parse_fold_ref(const std::string& ref) {
  const auto at = ref.rfind('@');
  if (at == std::string::npos)
    throw Error("bad_fold_ref", "fold reference must look like id@version: " + ref);
  return {ref.substr(0, at), std::stoi(ref.substr(at + 1))};
}

struct SplitWarning {
  std::string stratum;
  std::string message;
};

struct SplitResult {
  BenchmarkFold public_fold;
  BenchmarkFold airgapped_fold;
  std::vector<SplitWarning> warnings;
};

// Joint stratification key: label plus every protected feature value.
inline std::string stratum_key(const FeatureOntology& ont, const Record& r) {
  std::string key = "label=" + r.label;
  for (std::size_t fi : ont.protected_feature_indices()) {
    key += "|" + ont.features[fi].name + "=" + r.values[fi].display();
  }
  return key;
}

// Two similarly distributed folds: stratified on (label x protected values)
// where the stratum allows it, deterministic in the seed, disjoint and
// exhaustive. Strata of one record are assigned by a seeded coin flip and
// reported as warnings.
inline SplitResult split_benchmark(const std::vector<Record>& records,
                                   const FeatureOntology& ont, std::uint64_t seed,
                                   double public_fraction, const std::string& id_prefix) {
  if (records.empty()) throw Error("bad_split", "no records to split");
  if (!(public_fraction > 0.0 && public_fraction < 1.0))
    throw Error("bad_split", "public_fraction must be strictly between 0 and 1");

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) {
    strata[stratum_key(ont, records[i])].push_back(i);
  }

  SplitResult out;
  std::vector<bool> to_public(records.size(), false);
  SeededRng rng(seed);
  // Cascade rounding: each stratum's public share stays within one record of
  // the fraction while the running total tracks fraction * n overall.
  double cumulative_target = 0.0;
  std::size_t taken = 0;
  for (auto& [key, members] : strata) {
    if (members.size() < 2) {
      const bool heads = rng.coin();
      for (std::size_t idx : members) to_public[idx] = heads;
      out.warnings.push_back({key, "stratum has fewer than 2 records; assigned by coin flip"});
      continue;
    }
    rng.shuffle(members);
    cumulative_target += public_fraction * static_cast<double>(members.size());
    const auto cum_take =
        static_cast<std::size_t>(std::max(0.0, std::floor(cumulative_target + 0.5)));
    const std::size_t take = std::min(cum_take > taken ? cum_take - taken : 0, members.size());
    taken += take;
    for (std::size_t k = 0; k < members.size(); ++k) to_public[members[k]] = k < take;
  }

  BenchmarkFold pub, air;
  pub.fold_id = id_prefix + "-public";
  air.fold_id = id_prefix + "-airgapped";
  pub.ontology_id = air.ontology_id = ont.ontology_id;
  pub.visibility = Visibility::Public;
  air.visibility = Visibility::Airgapped;
  pub.version = air.version = 1;
  pub.seed = air.seed = seed;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (to_public[i] ? pub.records : air.records).push_back(records[i]);
  }
  pub.paired_with = air.ref();
  air.paired_with = pub.ref();
  out.public_fold = std::move(pub);
  out.airgapped_fold = std::move(air);
  return out;
}

// New fold version with floor(fraction * n) appended synthetic records, each
// with at least one value outside its domain (numeric: beyond the range by
// at least half the range width; categorical: a fresh token; text: an
// out-of-vocabulary marker). Injected records expect abstention.
inline BenchmarkFold inject_novelty(const BenchmarkFold& fold, const FeatureOntology& ont,
                                    double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 0.5)
    throw Error("bad_novelty", "novelty fraction must be in [0, 0.5]");
  BenchmarkFold out = fold;
  out.version = fold.version + 1;
  out.seed = seed;
  const std::size_t n = fold.records.size();
  const auto added = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  SeededRng rng(seed);
  for (std::size_t k = 0; k < added; ++k) {
    Record synth = fold.records[rng.below(n)];
    const std::size_t fi = rng.below(ont.features.size());
    const FeatureSpec& f = ont.features[fi];
    switch (f.kind) {
      case FeatureKind::Numeric: {
        const double width = std::max(f.max - f.min, 1.0);
        const double offset = width * (0.5 + 0.5 * rng.unit());
        synth.values[fi] = Value(rng.coin() ? f.max + offset : f.min - offset);
        break;
      }
      case FeatureKind::Categorical:
        synth.values[fi] = Value("__novel_" + std::to_string(k) + "__");
        break;
      case FeatureKind::Text:
        synth.values[fi] =
            Value(synth.values[fi].str() + " " + kOovMarker + std::to_string(k));
        break;
    }
    synth.label = kAbstainExpectedLabel;
    synth.novelty_flag = true;
    out.records.push_back(std::move(synth));
  }
  return out;
}

}  // namespace aap
