#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "helpers.hpp"

using namespace aap;
using testutil::TestWorld;

namespace {

void set_clock(std::int64_t t) { ::setenv("AAP_NOW", std::to_string(t).c_str(), 1); }
void clear_clock() { ::unsetenv("AAP_NOW"); }

MeasureValue accuracy_value(double v, std::int64_t n = 200) {
  MeasureValue m;
  m.measure_id = kMeasureAccuracy;
  m.value = v;
  m.polarity = Polarity::HigherBetter;
  m.sample_size = n;
  m.provenance = Provenance::Automated;
  return m;
}

}  // namespace

TEST_CASE("risk classification follows the rule table") {
  TestWorld world;

  SECTION("default rule table mappings") {
    CHECK(world.reg.classify_risk("criminal recidivism prediction", "criminal-justice") ==
          RiskLevel::High);
    CHECK(world.reg.classify_risk("spam filtering for internal mail", "other") ==
          RiskLevel::Limited);
    CHECK(world.reg.classify_risk("recreational enhancement of personal photos", "other") ==
          RiskLevel::Minimal);
    CHECK(world.reg.classify_risk("real-time biometric identification in public spaces",
                                  "biometric") == RiskLevel::Unacceptable);
    CHECK(world.reg.classify_risk("resume screening for hiring", "hiring") == RiskLevel::High);
  }

  SECTION("pure function of arguments and table version") {
    const auto a = world.reg.classify_risk("some use", "other");
    const auto b = world.reg.classify_risk("some use", "other");
    CHECK(a == b);
  }

  SECTION("the table is data: editing it changes the mapping") {
    CHECK(world.reg.classify_risk("horoscope drafting", "other") == RiskLevel::Limited);
    auto table = world.reg.risk_rules();
    table.version = 2;
    table.rules.insert(table.rules.begin(), {"keyword", "horoscope", RiskLevel::Minimal});
    world.reg.put_risk_rules(table);
    CHECK(world.reg.classify_risk("horoscope drafting", "other") == RiskLevel::Minimal);
  }

  SECTION("risk levels are totally ordered") {
    CHECK(RiskLevel::Minimal < RiskLevel::Limited);
    CHECK(RiskLevel::Limited < RiskLevel::High);
    CHECK(RiskLevel::High < RiskLevel::Unacceptable);
  }
}

TEST_CASE("registration") {
  TestWorld world;

  SECTION("unacceptable uses are refused, not stored") {
    const auto out = world.reg.register_system(
        "FaceGate", "ACME", "real-time biometric identification in public spaces", "hiring");
    CHECK(out.status == RegistrationOutcome::Status::Refused);
    CHECK_FALSE(out.reason.empty());
    CHECK(world.reg.list_systems().empty());
  }

  SECTION("minimal-risk systems register without a deployment type record") {
    const auto out = world.reg.register_system(
        "PhotoFun", "ACME", "recreational enhancement of personal photos", "other");
    CHECK(out.status == RegistrationOutcome::Status::Registered);
    CHECK(out.record.risk_level == RiskLevel::Minimal);
    CHECK(out.record.card.empty());
  }

  SECTION("high-risk registration works against a defined deployment type") {
    const auto out =
        world.reg.register_system("HireScore", "ACME", "resume screening for hiring", "hiring");
    CHECK(out.status == RegistrationOutcome::Status::Registered);
    CHECK(out.record.risk_level == RiskLevel::High);
  }

  SECTION("non-minimal registration needs an existing deployment type") {
    CHECK_THROWS_AS(
        world.reg.register_system("Ghost", "ACME", "loan scoring", "lending-unknown"), Error);
  }

  SECTION("re-registration is idempotent") {
    const auto a =
        world.reg.register_system("HireScore", "ACME", "resume screening for hiring", "hiring");
    const auto b =
        world.reg.register_system("HireScore", "ACME", "resume screening for hiring", "hiring");
    CHECK(a.status == RegistrationOutcome::Status::Registered);
    CHECK(b.status == RegistrationOutcome::Status::AlreadyRegistered);
    CHECK(a.record.system_id == b.record.system_id);
    CHECK(world.reg.list_systems("hiring").size() == 1);
  }
}

TEST_CASE("listing is ordered and filterable") {
  TestWorld world;
  CHECK(world.reg.list_systems().empty());
  set_clock(100);
  const auto a = world.register_system("Alpha");
  set_clock(200);
  const auto b = world.register_system("Beta");
  set_clock(300);
  world.reg.register_system("Photo", "ACME", "recreational photo fun", "other");
  clear_clock();

  const auto hiring = world.reg.list_systems("hiring");
  REQUIRE(hiring.size() == 2);
  CHECK(hiring[0].system_id == a.system_id);
  CHECK(hiring[1].system_id == b.system_id);
  CHECK(world.reg.list_systems().size() == 3);
}

TEST_CASE("percentile labels") {
  TestWorld world;

  SECTION("best accuracy among 20 peers reads top 5%") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
      auto rec = world.register_system("Sys" + std::to_string(i));
      rec.card.measures[kMeasureAccuracy] = accuracy_value(0.5 + 0.02 * i);
      world.reg.put_system(rec);
      ids.push_back(rec.system_id);
    }
    CHECK(world.reg.percentile_label(ids.back(), kMeasureAccuracy) == "top 5% accuracy");
    CHECK(world.reg.percentile_label(ids.front(), kMeasureAccuracy) == "top 100% accuracy");

    SECTION("monotone: better value never gets a worse label") {
      auto pct = [&](const std::string& id) {
        const std::string label = world.reg.percentile_label(id, kMeasureAccuracy);
        return std::stoi(label.substr(4, label.find('%') - 4));
      };
      for (std::size_t i = 1; i < ids.size(); ++i) {
        CHECK(pct(ids[i]) <= pct(ids[i - 1]));
      }
    }
  }

  SECTION("a sole system is top 100%") {
    auto rec = world.register_system("Loner");
    rec.card.measures[kMeasureAccuracy] = accuracy_value(0.9);
    world.reg.put_system(rec);
    CHECK(world.reg.percentile_label(rec.system_id, kMeasureAccuracy) == "top 100% accuracy");
  }

  SECTION("middle of {0.9, 0.8, 0.7} is top 67%") {
    std::vector<std::string> ids;
    for (const double v : {0.9, 0.8, 0.7}) {
      auto rec = world.register_system("S" + std::to_string(v));
      rec.card.measures[kMeasureAccuracy] = accuracy_value(v);
      world.reg.put_system(rec);
      ids.push_back(rec.system_id);
    }
    CHECK(world.reg.percentile_label(ids[1], kMeasureAccuracy) == "top 67% accuracy");
  }

  SECTION("ties share the better rank") {
    std::vector<std::string> ids;
    for (const double v : {0.9, 0.9, 0.7}) {
      auto rec = world.register_system("T" + std::to_string(ids.size()));
      rec.card.measures[kMeasureAccuracy] = accuracy_value(v);
      world.reg.put_system(rec);
      ids.push_back(rec.system_id);
    }
    CHECK(world.reg.percentile_label(ids[0], kMeasureAccuracy) == "top 34% accuracy");
    CHECK(world.reg.percentile_label(ids[1], kMeasureAccuracy) == "top 34% accuracy");
  }

  SECTION("absent measure has no comparable data") {
    const auto rec = world.register_system("Empty");
    CHECK_THROWS_WITH(world.reg.percentile_label(rec.system_id, kMeasureAccuracy),
                      Catch::Matchers::ContainsSubstring("no comparable data"));
  }
}

TEST_CASE("cards stay within the standardized measure set") {
  TestWorld world;
  auto rec = world.register_system("Strict");
  MeasureValue rogue;
  rogue.measure_id = "vibes";
  rogue.value = 1.0;
  rogue.sample_size = 10;
  rec.card.measures["vibes"] = rogue;
  CHECK_THROWS_AS(world.reg.put_system(rec), Error);
}

TEST_CASE("card export and import") {
  TestWorld world;
  auto rec = world.register_system("Exportee");
  rec.card.measures[kMeasureAccuracy] = accuracy_value(0.88);
  world.reg.put_system(rec);

  SECTION("json export round-trips byte-identically") {
    const Json doc = world.reg.export_card(rec.system_id);
    const Json reparsed = Json::parse(canonical_dump(doc));
    CHECK(canonical_dump(world.reg.export_card(rec.system_id)) == canonical_dump(reparsed));
  }

  SECTION("empty cards export with an empty measures section") {
    const auto fresh = world.register_system("Fresh");
    const Json doc = world.reg.export_card(fresh.system_id);
    CHECK(doc.at("card").at("measures").empty());
    CHECK(world.reg.export_card_text(fresh.system_id).find("none reported") !=
          std::string::npos);
  }

  SECTION("text export carries percentile labels") {
    const std::string text = world.reg.export_card_text(rec.system_id);
    CHECK(text.find("top 100% accuracy") != std::string::npos);
  }

  SECTION("import of an exported card is a no-op") {
    const Json doc = world.reg.export_card(rec.system_id);
    const std::string before = canonical_dump(world.reg.export_card(rec.system_id));
    world.reg.import_card(doc);
    CHECK(canonical_dump(world.reg.export_card(rec.system_id)) == before);
  }

  SECTION("conflicting import is rejected") {
    Json doc = world.reg.export_card(rec.system_id);
    doc["card"]["measures"][kMeasureAccuracy]["value"] = 0.99;
    CHECK_THROWS_AS(world.reg.import_card(doc), Error);
  }

  SECTION("unknown system export errors") {
    CHECK_THROWS_AS(world.reg.export_card("sys-nope"), Error);
  }
}

TEST_CASE("certificate claim rendering") {
  Certificate c;
  c.claim_template = "certifies {measure} = {value} ({percentile})";
  c.claim_params = {{"measure", "accuracy"}, {"value", "0.95"}, {"percentile", "top 5% accuracy"}};
  CHECK(c.claim_text() == "certifies accuracy = 0.95 (top 5% accuracy)");
  const auto back = Certificate::from_json(c.to_json());
  CHECK(back.claim_text() == c.claim_text());
}
