#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aap/benchmark.hpp"
#include "aap/ontology.hpp"
#include "aap/store.hpp"

namespace aap {

// Fold persistence. Public folds live in the public tree; air-gapped folds
// only ever touch the sealed area, and the public loader cannot return them.

inline std::string fold_file_name(const std::string& fold_id, int version) {
  return fold_id + ".v" + std::to_string(version) + ".json";
}

// Folds are immutable once stored: re-putting identical content is a no-op,
// anything else must become a new version.
inline void put_fold(Store& store, const BenchmarkFold& fold, const FeatureOntology& ont) {
  const std::string name = "folds/" + fold_file_name(fold.fold_id, fold.version);
  const bool sealed = fold.visibility != Visibility::Public;
  if (const auto existing = sealed ? store.get_sealed(name) : store.get_json(name)) {
    if (existing->value("content_digest", "") == fold.content_digest()) return;
    throw Error("fold_immutable",
                "fold " + fold.ref() + " already exists with different content");
  }
  if (sealed) {
    store.put_sealed(name, fold.to_json(ont));
  } else {
    store.put_json(name, fold.to_json(ont));
  }
}

inline std::optional<BenchmarkFold> load_public_fold(const Store& store,
                                                     const std::string& ref) {
  const auto [id, version] = parse_fold_ref(ref);
  const auto j = store.get_json("folds/" + fold_file_name(id, version));
  if (!j) return std::nullopt;
  BenchmarkFold f = BenchmarkFold::from_json(*j);
  if (f.visibility != Visibility::Public) return std::nullopt;
  return f;
}

inline BenchmarkFold require_public_fold(const Store& store, const std::string& ref) {
  auto f = load_public_fold(store, ref);
  if (!f) throw Error("unknown_fold", "public fold not found: " + ref);
  return *f;
}

inline std::optional<BenchmarkFold> load_sealed_fold(const Store& store,
                                                     const std::string& ref) {
  const auto [id, version] = parse_fold_ref(ref);
  const auto j = store.get_sealed("folds/" + fold_file_name(id, version));
  if (!j) return std::nullopt;
  return BenchmarkFold::from_json(*j);
}

inline BenchmarkFold require_sealed_fold(const Store& store, const std::string& ref) {
  auto f = load_sealed_fold(store, ref);
  if (!f) throw Error("unknown_fold", "air-gapped fold not found: " + ref);
  return *f;
}

inline bool sealed_fold_exists(const Store& store, const std::string& ref) {
  const auto [id, version] = parse_fold_ref(ref);
  return store.get_sealed("folds/" + fold_file_name(id, version)).has_value();
}

inline std::vector<std::string> list_public_fold_refs(const Store& store) {
  std::vector<std::string> refs;
  for (const auto& f : store.list_dir("folds")) {
    const auto j = store.get_json("folds/" + f);
    if (!j) continue;
    refs.push_back(j->at("fold_id").get<std::string>() + "@" +
                   std::to_string(j->at("version").get<int>()));
  }
  return refs;
}

}  // namespace aap
