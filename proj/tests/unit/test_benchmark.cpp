#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "helpers.hpp"

using namespace aap;
using testutil::gen_records;
using testutil::make_fold;
using testutil::small_ontology;

namespace {

// Independent stratum counter used as the oracle for stratification quality.
std::map<std::string, std::pair<int, int>> stratum_counts(const FeatureOntology& ont,
                                                          const BenchmarkFold& pub,
                                                          const BenchmarkFold& air) {
  std::map<std::string, std::pair<int, int>> counts;  // key -> (public, airgapped)
  for (const auto& r : pub.records) counts[r.label + "|" + r.values[0].str()].first++;
  for (const auto& r : air.records) counts[r.label + "|" + r.values[0].str()].second++;
  return counts;
}

}  // namespace

TEST_CASE("split is stratified, disjoint, exhaustive, deterministic") {
  const auto ont = small_ontology();

  SECTION("balanced strata stay within one record of the fraction") {
    // 100 records, 25 in each (label x gender) stratum.
    std::vector<Record> recs;
    for (int i = 0; i < 100; ++i) {
      Record r;
      const bool female = i % 2 == 0;
      const bool hired = (i / 2) % 2 == 0;
      r.values = {Value(female ? "F" : "M"), Value(20.0 + i % 40),
                  Value(static_cast<double>(i))};
      r.label = hired ? "yes" : "no";
      recs.push_back(r);
    }
    const auto split = split_benchmark(recs, ont, 11, 0.5, "t");
    CHECK(split.public_fold.records.size() == 50);
    CHECK(split.airgapped_fold.records.size() == 50);
    CHECK(split.warnings.empty());
    for (const auto& [key, c] : stratum_counts(ont, split.public_fold, split.airgapped_fold)) {
      const double expected = 0.5 * (c.first + c.second);
      INFO(key);
      CHECK(std::fabs(c.first - expected) <= 1.0);
    }
  }

  SECTION("disjoint and exhaustive on noisy data") {
    const auto recs = gen_records(333, 5);
    const auto split = split_benchmark(recs, ont, 12, 0.7, "t");
    CHECK(split.public_fold.records.size() + split.airgapped_fold.records.size() ==
          recs.size());
    // Every input record appears exactly once across the two folds.
    std::multiset<std::string> in, out;
    auto key = [&](const Record& r) {
      return canonical_dump(make_fold("x", ont, {r}).record_to_json(r));
    };
    for (const auto& r : recs) in.insert(key(r));
    for (const auto& r : split.public_fold.records) out.insert(key(r));
    for (const auto& r : split.airgapped_fold.records) out.insert(key(r));
    CHECK(in == out);
  }

  SECTION("same seed, same folds; different seed differs") {
    const auto recs = gen_records(200, 6);
    const auto a = split_benchmark(recs, ont, 42, 0.5, "t");
    const auto b = split_benchmark(recs, ont, 42, 0.5, "t");
    CHECK(a.public_fold.content_digest() == b.public_fold.content_digest());
    CHECK(a.airgapped_fold.content_digest() == b.airgapped_fold.content_digest());
    const auto c = split_benchmark(recs, ont, 43, 0.5, "t");
    CHECK(a.public_fold.content_digest() != c.public_fold.content_digest());
  }

  SECTION("visibility, pairing and preconditions") {
    const auto recs = gen_records(40, 7);
    const auto split = split_benchmark(recs, ont, 1, 0.5, "demo");
    CHECK(split.public_fold.visibility == Visibility::Public);
    CHECK(split.airgapped_fold.visibility == Visibility::Airgapped);
    CHECK(split.public_fold.paired_with == split.airgapped_fold.ref());
    CHECK(split.airgapped_fold.paired_with == split.public_fold.ref());
    CHECK_THROWS_AS(split_benchmark(recs, ont, 1, 1.0, "x"), Error);
    CHECK_THROWS_AS(split_benchmark(recs, ont, 1, 0.0, "x"), Error);
    CHECK_THROWS_AS(split_benchmark({}, ont, 1, 0.5, "x"), Error);
  }

  SECTION("singleton stratum triggers a warning and a coin flip") {
    // one (yes, F) record plus two (no, M) records: the first stratum has a
    // single member
    Record lone;
    lone.values = {Value("F"), Value(21.0), Value(3.0)};
    lone.label = "yes";
    Record pair_a;
    pair_a.values = {Value("M"), Value(30.0), Value(9.0)};
    pair_a.label = "no";
    Record pair_b = pair_a;
    pair_b.values[2] = Value(10.0);
    const auto split = split_benchmark({lone, pair_a, pair_b}, ont, 3, 0.5, "t");
    REQUIRE(split.warnings.size() == 1);
    CHECK(split.warnings[0].stratum.find("label=yes") != std::string::npos);
    CHECK(split.public_fold.records.size() + split.airgapped_fold.records.size() == 3);
  }
}

TEST_CASE("novelty injection") {
  const auto ont = small_ontology();
  auto fold = make_fold("base", ont, gen_records(100, 9));

  SECTION("fraction zero only bumps the version") {
    const auto next = inject_novelty(fold, ont, 0.0, 5);
    CHECK(next.version == 2);
    CHECK(next.records.size() == fold.records.size());
    CHECK(next.fold_id == fold.fold_id);
  }

  SECTION("ten percent of 100 yields exactly 10 flagged records") {
    const auto next = inject_novelty(fold, ont, 0.1, 5);
    CHECK(next.records.size() == 110);
    std::size_t flagged = 0;
    for (const auto& r : next.records) {
      if (r.novelty_flag) {
        ++flagged;
        CHECK(r.label == kAbstainExpectedLabel);
        CHECK_FALSE(record_values_conform(ont, r));
      }
    }
    CHECK(flagged == 10);
  }

  SECTION("numeric novelty lands at least half a range-width outside") {
    const auto next = inject_novelty(fold, ont, 0.3, 6);
    for (const auto& r : next.records) {
      if (!r.novelty_flag) continue;
      for (std::size_t fi = 0; fi < ont.features.size(); ++fi) {
        const auto& f = ont.features[fi];
        if (f.kind != FeatureKind::Numeric || ont.value_in_domain(fi, r.values[fi])) continue;
        const double v = r.values[fi].number();
        const double width = std::max(f.max - f.min, 1.0);
        CHECK((v >= f.max + 0.5 * width || v <= f.min - 0.5 * width));
      }
    }
  }

  SECTION("text-only ontologies get an out-of-vocabulary marker") {
    FeatureOntology text_ont;
    text_ont.ontology_id = "docs";
    text_ont.features = {{"body", FeatureKind::Text, {}, 0.0, 0.0, false}};
    text_ont.label_name = "class";
    text_ont.label_domain = {"spam", "ham"};
    text_ont.positive_label = "ham";
    std::vector<Record> recs;
    for (int i = 0; i < 10; ++i) {
      Record r;
      r.values = {Value("hello world " + std::to_string(i))};
      r.label = i % 2 == 0 ? "ham" : "spam";
      recs.push_back(r);
    }
    auto tf = make_fold("texts", text_ont, recs);
    const auto next = inject_novelty(tf, text_ont, 0.5, 7);
    CHECK(next.records.size() == 15);
    for (std::size_t i = 10; i < next.records.size(); ++i) {
      CHECK(next.records[i].novelty_flag);
      CHECK(next.records[i].values[0].str().find(kOovMarker) != std::string::npos);
    }
  }

  SECTION("fraction out of range") {
    CHECK_THROWS_AS(inject_novelty(fold, ont, 0.6, 1), Error);
    CHECK_THROWS_AS(inject_novelty(fold, ont, -0.1, 1), Error);
  }
}

TEST_CASE("fold json round-trip and digest sensitivity") {
  const auto ont = small_ontology();
  auto fold = make_fold("rt", ont, gen_records(20, 10));
  const auto back = BenchmarkFold::from_json(fold.to_json(ont));
  CHECK(back.content_digest() == fold.content_digest());
  CHECK(canonical_dump(back.to_json(ont)) == canonical_dump(fold.to_json(ont)));

  auto tweaked = fold;
  tweaked.records[0].label = tweaked.records[0].label == "yes" ? "no" : "yes";
  CHECK(tweaked.content_digest() != fold.content_digest());

  CHECK(parse_fold_ref("abc@3") == std::pair<std::string, int>{"abc", 3});
  CHECK_THROWS_AS(parse_fold_ref("abc"), Error);
}
