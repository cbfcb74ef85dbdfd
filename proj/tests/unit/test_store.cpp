#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "helpers.hpp"

using namespace aap;
using testutil::gen_records;
using testutil::make_fold;
using testutil::small_ontology;
using testutil::TempDir;

TEST_CASE("store writes canonical files and an append-only log") {
  TempDir dir;
  Store store(dir.path / "s");

  store.put_json("reports/a.json", Json{{"b", 1}, {"a", 2}});
  const auto body = read_text_file(dir.path / "s" / "reports" / "a.json");
  CHECK(body == "{\"a\":2,\"b\":1}\n");

  store.put_json("reports/a.json", Json{{"a", 3}});
  const auto log = read_text_file(dir.path / "s" / "log" / "registry.ndjson");
  // both versions remain in the log
  CHECK(log.find("\"b\":1") != std::string::npos);
  CHECK(log.find("\"a\":3") != std::string::npos);

  CHECK(store.get_json("reports/a.json"));
  CHECK_FALSE(store.get_json("reports/missing.json"));
  CHECK(store.list_dir("reports") == std::vector<std::string>{"a.json"});
}

TEST_CASE("sealed data never enters the public tree or its log") {
  TempDir dir;
  Store store(dir.path / "s");
  store.put_sealed("folds/secret.v1.json", Json{{"token", "SEALED-SECRET-TOKEN"}});
  CHECK(store.get_sealed("folds/secret.v1.json"));
  CHECK_FALSE(store.get_json("folds/secret.v1.json"));
  CHECK(store.scan_public_for({"SEALED-SECRET-TOKEN"}).empty());

  store.put_json("reports/leaky.json", Json{{"oops", "SEALED-SECRET-TOKEN"}});
  CHECK_FALSE(store.scan_public_for({"SEALED-SECRET-TOKEN"}).empty());
}

TEST_CASE("public fold loader refuses air-gapped folds") {
  TempDir dir;
  Store store(dir.path / "s");
  const auto ont = small_ontology();
  const auto split = split_benchmark(gen_records(30, 61), ont, 2, 0.5, "vis");
  put_fold(store, split.public_fold, ont);
  put_fold(store, split.airgapped_fold, ont);

  CHECK(load_public_fold(store, split.public_fold.ref()));
  CHECK_FALSE(load_public_fold(store, split.airgapped_fold.ref()));
  CHECK(load_sealed_fold(store, split.airgapped_fold.ref()));
  CHECK(sealed_fold_exists(store, split.airgapped_fold.ref()));
  CHECK(list_public_fold_refs(store) == std::vector<std::string>{split.public_fold.ref()});

  // even a mislabeled file in the public tree is rejected by visibility
  auto forged = split.airgapped_fold;
  store.put_json("folds/" + fold_file_name(forged.fold_id, forged.version) + "",
                 forged.to_json(ont));
  CHECK_FALSE(load_public_fold(store, forged.ref()));
}

TEST_CASE("folds are immutable once stored") {
  TempDir dir;
  Store store(dir.path / "s");
  const auto ont = small_ontology();
  auto fold = make_fold("frozen", ont, gen_records(10, 62));
  put_fold(store, fold, ont);
  CHECK_NOTHROW(put_fold(store, fold, ont));  // identical content re-put is a no-op
  auto tampered = fold;
  tampered.records[0].label = tampered.records[0].label == "yes" ? "no" : "yes";
  CHECK_THROWS_AS(put_fold(store, tampered, ont), Error);
  const auto next = inject_novelty(fold, ont, 0.2, 3);
  CHECK_NOTHROW(put_fold(store, next, ont));  // new version, new fold
}

TEST_CASE("exclusive lock is reentrant across scopes") {
  TempDir dir;
  Store store(dir.path / "s");
  {
    const auto lock = store.exclusive_lock();
  }
  const auto lock2 = store.exclusive_lock();
  SUCCEED();
}

TEST_CASE("config round-trips through the store") {
  TempDir dir;
  Store store(dir.path / "s");
  const Config def = store.config();
  CHECK(def.alpha == 0.01);
  CHECK(def.min_group_size == 20);
  CHECK(def.batch_size == 64);

  Config tweaked = def;
  tweaked.alpha = 0.05;
  write_canonical_file(dir.path / "s" / "config.json", tweaked.to_json());
  CHECK(store.config().alpha == 0.05);
}
