#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aap/aap.hpp"

namespace testutil {

using namespace aap;

inline FeatureOntology small_ontology() {
  FeatureOntology o;
  o.ontology_id = "hire-test";
  o.features = {
      {"gender", FeatureKind::Categorical, {"F", "M"}, 0.0, 0.0, true},
      {"age", FeatureKind::Numeric, {}, 18.0, 70.0, false},
      {"skill", FeatureKind::Numeric, {}, 0.0, 100.0, false},
  };
  o.label_name = "hired";
  o.label_domain = {"no", "yes"};
  o.positive_label = "yes";
  return o;
}

// Deterministic synthetic applicants with noisy labels: the hire rate rises
// with skill, so reference models can do well but not perfectly. Feature
// tuples are unique, so no record serializes identically to another (folds
// from a split then share no serialized bytes).
inline std::vector<Record> gen_records(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Record> out;
  out.reserve(n);
  std::set<std::string> seen;
  while (out.size() < n) {
    const bool female = rng.coin();
    const double age = 18.0 + static_cast<double>(rng.below(53));
    const double skill = static_cast<double>(rng.below(1001)) / 10.0;
    const std::string key = (female ? "F" : "M") + std::to_string(age) + ":" +
                            std::to_string(skill);
    if (!seen.insert(key).second) continue;
    Record r;
    r.values = {Value(female ? "F" : "M"), Value(age), Value(skill)};
    const double p = 0.1 + 0.8 * skill / 100.0;
    r.label = rng.unit() < p ? "yes" : "no";
    out.push_back(std::move(r));
  }
  return out;
}

inline BenchmarkFold make_fold(std::string id, const FeatureOntology& ont,
                               std::vector<Record> records,
                               Visibility vis = Visibility::Public, int version = 1,
                               std::uint64_t seed = 0) {
  BenchmarkFold f;
  f.fold_id = std::move(id);
  f.ontology_id = ont.ontology_id;
  f.visibility = vis;
  f.records = std::move(records);
  f.version = version;
  f.seed = seed;
  return f;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("aap-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// A hard-decision scorer: skill-weighted with a small gender offset.
inline ModelBehavior make_additive(const std::string& system_id = "sys-unregistered",
                                   double gender_offset = 0.0) {
  ModelBehavior b;
  b.kind = "additive-scorer";
  b.system_id = system_id;
  b.expected_features = {{"gender", FeatureKind::Categorical},
                         {"age", FeatureKind::Numeric},
                         {"skill", FeatureKind::Numeric}};
  b.intercept = 0.1;
  b.threshold = 0.5;
  b.positive_label = "yes";
  b.negative_label = "no";
  b.numeric_terms["skill"] = {0.8, 0.0, 100.0};
  b.categorical_terms["gender"] = {{"F", gender_offset}, {"M", 0.0}};
  return b;
}

inline ModelBehavior make_constant(const std::string& decision,
                                   std::optional<double> score = std::nullopt,
                                   const std::string& system_id = "sys-unregistered") {
  ModelBehavior b;
  b.kind = "constant";
  b.system_id = system_id;
  b.expected_features = {{"gender", FeatureKind::Categorical},
                         {"age", FeatureKind::Numeric},
                         {"skill", FeatureKind::Numeric}};
  b.constant_decision = decision;
  b.constant_score = score;
  return b;
}

inline ModelBehavior make_abstainer(const FeatureOntology& ont, ModelBehavior inner) {
  ModelBehavior b;
  b.kind = "abstainer";
  b.system_id = inner.system_id;
  b.expected_features = inner.expected_features;
  b.domains = ont.features;
  b.inner = std::make_shared<ModelBehavior>(std::move(inner));
  return b;
}

struct PipeRun {
  SessionResult server;
  ClientOutcome client;
};

inline PipeRun run_pipe_session(const ModelBehavior& behavior, const FeatureOntology& ont,
                                const BenchmarkFold& fold,
                                const std::vector<RenderTemplate>& templates,
                                SessionOptions opts) {
  auto [server_end, client_end] = connection_pair();
  PipeRun out;
  std::thread client_thread(
      [&, ce = std::move(client_end)] { out.client = serve_model(behavior, *ce); });
  out.server = run_session(*server_end, ont, fold, templates, opts);
  server_end->shutdown();
  client_thread.join();
  return out;
}

// Registered world: one store, the test ontology, and a hiring-style
// deployment type with the full standardized measure set.
struct TestWorld {
  TempDir dir;
  Store store;
  Registry reg;
  Config cfg;

  TestWorld() : store(dir.path / "store"), reg(store) {
    reg.add_ontology(small_ontology());
    DeploymentType dt;
    dt.deployment_type_id = "hiring";
    dt.sector = "hiring";
    dt.description = "resume screening";
    dt.ontology_id = "hire-test";
    dt.measure_set = {kMeasureAccuracy, kMeasureImpactRatio, kMeasureType1, kMeasureType2,
                      kMeasureAbstention};
    reg.add_deployment_type(dt);
    cfg = store.config();
  }

  SystemRecord register_system(const std::string& name) {
    const auto out = reg.register_system(name, "ACME", "resume screening for hiring", "hiring");
    return out.record;
  }
};

inline AuditReport audit_over_pipe(AuditEngine& engine, const std::string& system_id,
                                   const ModelBehavior& behavior, const std::string& fold_ref,
                                   std::uint64_t seed, bool external = false) {
  auto [server_end, client_end] = connection_pair();
  ClientOutcome client_out;
  std::thread client_thread(
      [&, ce = std::move(client_end)] { client_out = serve_model(behavior, *ce); });
  try {
    AuditReport rep = external
                          ? engine.run_external_audit(system_id, *server_end, fold_ref, seed)
                          : engine.run_automated_audit(system_id, *server_end, fold_ref, seed);
    server_end->shutdown();
    client_thread.join();
    return rep;
  } catch (...) {
    server_end->shutdown();
    client_thread.join();
    throw;
  }
}

}  // namespace testutil
