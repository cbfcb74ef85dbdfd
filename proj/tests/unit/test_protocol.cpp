#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <thread>

#include "helpers.hpp"

using namespace aap;
using testutil::gen_records;
using testutil::make_additive;
using testutil::make_constant;
using testutil::make_fold;
using testutil::run_pipe_session;
using testutil::small_ontology;

namespace {

std::vector<SchemaFeature> full_schema() {
  return {{"gender", FeatureKind::Categorical},
          {"age", FeatureKind::Numeric},
          {"skill", FeatureKind::Numeric}};
}

int count_entries(const SessionTranscript& t, const std::string& dir,
                  const std::string& type) {
  int n = 0;
  for (const auto& e : t.entries) {
    if (e.dir == dir && message_type(e.msg) == type) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("schema negotiation") {
  const auto ont = small_ontology();
  RenderTemplate tpl{"cv", ont.ontology_id, "g={gender} a={age} s={skill}"};

  SECTION("exact ontology features give a tabular plan") {
    const auto r = negotiate_schema(full_schema(), ont, {});
    REQUIRE(r.ok);
    CHECK(r.plan.mode == InputPlan::Mode::Tabular);
    CHECK(r.plan.features == std::vector<std::string>{"gender", "age", "skill"});
  }
  SECTION("a subset of features is still tabular, in client order") {
    const auto r = negotiate_schema({{"skill", FeatureKind::Numeric}}, ont, {});
    REQUIRE(r.ok);
    CHECK(r.plan.features == std::vector<std::string>{"skill"});
  }
  SECTION("single text field with a bound template gives a render plan") {
    const auto r = negotiate_schema({{"document", FeatureKind::Text}}, ont, {tpl});
    REQUIRE(r.ok);
    CHECK(r.plan.mode == InputPlan::Mode::Text);
    REQUIRE(r.plan.render);
    CHECK(r.plan.render->template_id == "cv");
  }
  SECTION("text field without a template is refused") {
    const auto r = negotiate_schema({{"document", FeatureKind::Text}}, ont, {});
    CHECK_FALSE(r.ok);
  }
  SECTION("unknown feature is refused") {
    const auto r = negotiate_schema({{"zipcode", FeatureKind::Numeric}}, ont, {});
    CHECK_FALSE(r.ok);
    CHECK(r.reason.find("zipcode") != std::string::npos);
  }
  SECTION("kind mismatch is refused") {
    const auto r = negotiate_schema({{"age", FeatureKind::Categorical}}, ont, {});
    CHECK_FALSE(r.ok);
  }
}

TEST_CASE("a 10-row fold with batch size 4 takes 3 query batches") {
  const auto ont = small_ontology();
  const auto fold = make_fold("tenrows", ont, gen_records(10, 21));
  SessionOptions opts;
  opts.batch_size = 4;
  opts.seed = 3;
  const auto run = run_pipe_session(make_constant("yes"), ont, fold, {}, opts);
  REQUIRE(run.server.complete);
  CHECK(run.client.completed);
  CHECK(count_entries(run.server.transcript, "out", kMsgQueryBatch) == 3);
  CHECK(count_entries(run.server.transcript, "in", kMsgResponseBatch) == 3);

  // batch sizes 4, 4, 2 in order
  std::vector<std::size_t> sizes;
  for (const auto& e : run.server.transcript.entries) {
    if (e.dir == "out" && message_type(e.msg) == kMsgQueryBatch)
      sizes.push_back(e.msg.at("rows").size());
  }
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
}

TEST_CASE("completed sessions answer every fold row exactly once") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(57, 22));
  SessionOptions opts;
  opts.batch_size = 16;
  opts.seed = 4;
  const auto run = run_pipe_session(make_additive(), ont, fold, {}, opts);
  REQUIRE(run.server.complete);
  CHECK(run.server.answers.size() == fold.records.size());

  std::size_t query_rows = 0;
  std::set<std::string> nonces;
  for (const auto& e : run.server.transcript.entries) {
    if (e.dir == "out" && message_type(e.msg) == kMsgQueryBatch) {
      for (const auto& row : e.msg.at("rows")) {
        ++query_rows;
        nonces.insert(row.at("row_id").get<std::string>());
      }
    }
  }
  CHECK(query_rows == fold.records.size());
  CHECK(nonces.size() == query_rows);  // opaque nonces never repeat

  // sequence numbers strictly increase
  std::uint64_t last = 0;
  for (const auto& e : run.server.transcript.entries) {
    CHECK(e.seq > last);
    last = e.seq;
  }
}

TEST_CASE("transcript hashes are deterministic in fold, seed and behavior") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(30, 23));
  SessionOptions opts;
  opts.seed = 11;
  const auto a = run_pipe_session(make_additive(), ont, fold, {}, opts);
  const auto b = run_pipe_session(make_additive(), ont, fold, {}, opts);
  REQUIRE(a.server.complete);
  REQUIRE(b.server.complete);
  CHECK(a.server.transcript.hash() == b.server.transcript.hash());

  SessionOptions other = opts;
  other.seed = 12;
  const auto c = run_pipe_session(make_additive(), ont, fold, {}, other);
  CHECK(a.server.transcript.hash() != c.server.transcript.hash());
}

TEST_CASE("transcript hash changes on any message change") {
  SessionTranscript t;
  t.session_id = "s";
  t.mode = "automated";
  t.fold_ref = "f@1";
  CHECK(t.hash() ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");  // empty form

  t.entries.push_back({"out", 1, msg::session_open("s", "automated", 4)});
  t.entries.push_back(
      {"in", 2, msg::response_batch("b1", Json::array({Json{{"row_id", "r"}, {"decision", "yes"}}}))});
  const auto h1 = t.hash();
  auto flipped = t;
  flipped.entries[1].msg.at("rows")[0]["decision"] = "no";
  CHECK(flipped.hash() != h1);

  // timestamps and abort markers do not affect the hash
  auto stamped = t;
  stamped.started_at = 999;
  stamped.complete = true;
  CHECK(stamped.hash() == h1);
}

TEST_CASE("transcript json round-trip preserves the hash") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(12, 24));
  SessionOptions opts;
  opts.seed = 7;
  const auto run = run_pipe_session(make_additive(), ont, fold, {}, opts);
  const auto back = SessionTranscript::from_json(run.server.transcript.to_json());
  CHECK(back.hash() == run.server.transcript.hash());
  CHECK(transcript_hash(back) == back.hash());
}

TEST_CASE("black-box scan finds nothing in honest sessions") {
  const auto ont = small_ontology();
  RenderTemplate tpl{"cv", ont.ontology_id, "g={gender} a={age} s={skill}"};
  auto fold = make_fold("leakcheck", ont, gen_records(25, 25));
  fold = inject_novelty(fold, ont, 0.2, 9);
  SessionOptions opts;
  opts.seed = 5;
  const auto run = run_pipe_session(make_additive(), ont, fold, {tpl}, opts);
  REQUIRE(run.server.complete);
  const auto findings = scan_transcript_for_leaks(run.server.transcript);
  CHECK(findings.empty());
}

TEST_CASE("black-box scan catches planted leaks") {
  SessionTranscript t;
  t.session_id = "s";
  t.fold_ref = "secret-fold@1";
  t.mode = "automated";
  Json bad_row = Json{{"row_id", "r1"}, {"values", Json{{"age", 30}}}, {"label", "yes"}};
  t.entries.push_back({"out", 1, msg::query_batch("b1", Json::array({bad_row}))});
  t.entries.push_back({"out", 2, Json{{"type", kMsgQueryBatch},
                                      {"batch_id", "b2"},
                                      {"rows", Json::array()},
                                      {"fold_id", "secret-fold"}}});
  t.entries.push_back({"out", 3, msg::hello("sys-x")});  // wrong direction type
  const auto findings = scan_transcript_for_leaks(t);
  CHECK(findings.size() >= 3);
}

TEST_CASE("row id mismatch aborts the session") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(8, 26));
  auto [server_end, client_end] = connection_pair();

  std::thread client([&, ce = std::move(client_end)] {
    ce->send_line(canonical_dump(msg::hello("sys-x")));
    ce->send_line(canonical_dump(msg::schema(full_schema())));
    for (;;) {
      const auto r = ce->recv_line(2000);
      if (r.status != RecvOutcome::Status::Line) return;
      const Json m = Json::parse(r.line, nullptr, false);
      if (message_type(m) == kMsgQueryBatch) {
        Json rows = Json::array();
        for (const auto& row : m.at("rows")) {
          rows.push_back(Json{{"row_id", row.at("row_id").get<std::string>() + "-wrong"},
                              {"decision", "yes"}});
        }
        // answer with a stale batch id as well
        ce->send_line(canonical_dump(msg::response_batch("b999", rows)));
        return;
      }
    }
  });

  SessionOptions opts;
  opts.batch_size = 4;
  const auto result = run_session(*server_end, ont, fold, {}, opts);
  server_end->shutdown();
  client.join();
  CHECK_FALSE(result.complete);
  CHECK(result.abort_reason.find("row_id_mismatch") != std::string::npos);
}

TEST_CASE("unexpected inbound types abort after session open") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(8, 27));
  auto [server_end, client_end] = connection_pair();

  std::thread client([&, ce = std::move(client_end)] {
    ce->send_line(canonical_dump(msg::hello("sys-x")));
    ce->send_line(canonical_dump(msg::schema(full_schema())));
    const auto open = ce->recv_line(2000);
    (void)open;
    const auto batch = ce->recv_line(2000);
    (void)batch;
    // a client-initiated SCHEMA mid-session violates containment
    ce->send_line(canonical_dump(msg::schema(full_schema())));
  });

  SessionOptions opts;
  opts.mode = "external";
  const auto result = run_session(*server_end, ont, fold, {}, opts);
  server_end->shutdown();
  client.join();
  CHECK_FALSE(result.complete);
  CHECK(result.abort_reason.find("unexpected_message") != std::string::npos);
}

TEST_CASE("malformed lines and bad decisions abort") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(4, 28));

  SECTION("non-json line") {
    auto [server_end, client_end] = connection_pair();
    std::thread client([&, ce = std::move(client_end)] {
      ce->send_line("this is not json");
    });
    const auto result = run_session(*server_end, ont, fold, {}, SessionOptions{});
    server_end->shutdown();
    client.join();
    CHECK_FALSE(result.complete);
    CHECK(result.abort_reason.find("malformed_message") != std::string::npos);
  }

  SECTION("decision outside the label domain") {
    auto [server_end, client_end] = connection_pair();
    std::thread client([&, ce = std::move(client_end)] {
      ce->send_line(canonical_dump(msg::hello("sys-x")));
      ce->send_line(canonical_dump(msg::schema(full_schema())));
      for (;;) {
        const auto r = ce->recv_line(2000);
        if (r.status != RecvOutcome::Status::Line) return;
        const Json m = Json::parse(r.line, nullptr, false);
        if (message_type(m) == kMsgQueryBatch) {
          Json rows = Json::array();
          for (const auto& row : m.at("rows")) {
            rows.push_back(Json{{"row_id", row.at("row_id")}, {"decision", "perhaps"}});
          }
          ce->send_line(canonical_dump(msg::response_batch(m.value("batch_id", ""), rows)));
          return;
        }
      }
    });
    const auto result = run_session(*server_end, ont, fold, {}, SessionOptions{});
    server_end->shutdown();
    client.join();
    CHECK_FALSE(result.complete);
    CHECK(result.abort_reason.find("bad_decision") != std::string::npos);
  }

  SECTION("wrong protocol version is refused") {
    auto [server_end, client_end] = connection_pair();
    std::thread client([&, ce = std::move(client_end)] {
      ce->send_line(canonical_dump(
          Json{{"type", kMsgHello}, {"system_id", "sys-x"}, {"protocol_version", "aap/0"}}));
    });
    const auto result = run_session(*server_end, ont, fold, {}, SessionOptions{});
    server_end->shutdown();
    client.join();
    CHECK_FALSE(result.complete);
    CHECK(result.abort_reason.find("unsupported_version") != std::string::npos);
  }
}

TEST_CASE("client timeout aborts with an incomplete transcript") {
  const auto ont = small_ontology();
  const auto fold = make_fold("protofold", ont, gen_records(4, 29));
  auto [server_end, client_end] = connection_pair();
  std::thread client([&, ce = std::move(client_end)] {
    ce->send_line(canonical_dump(msg::hello("sys-x")));
    ce->send_line(canonical_dump(msg::schema(full_schema())));
    // stall: never answer the query batch
    const auto r = ce->recv_line(5000);
    (void)r;
    const auto r2 = ce->recv_line(5000);
    (void)r2;
  });
  SessionOptions opts;
  opts.timeout_ms = 50;
  const auto result = run_session(*server_end, ont, fold, {}, opts);
  server_end->shutdown();
  client.join();
  CHECK_FALSE(result.complete);
  CHECK(result.abort_reason.find("timeout") != std::string::npos);
}

TEST_CASE("render plan sessions send text only") {
  const auto ont = small_ontology();
  RenderTemplate tpl{"cv", ont.ontology_id, "candidate {gender} aged {age} scoring {skill}"};
  const auto fold = make_fold("protofold", ont, gen_records(6, 30));

  ModelBehavior text_model;
  text_model.kind = "rule-based";
  text_model.system_id = "sys-text";
  text_model.expected_features = {{"document", FeatureKind::Text}};
  text_model.rules = {{"document", "contains", Value("scoring 9"), "yes"}};
  text_model.default_decision = "no";

  SessionOptions opts;
  opts.seed = 2;
  const auto run = run_pipe_session(text_model, ont, fold, {tpl}, opts);
  REQUIRE(run.server.complete);
  CHECK(run.server.plan.mode == InputPlan::Mode::Text);
  for (const auto& e : run.server.transcript.entries) {
    if (e.dir == "out" && message_type(e.msg) == kMsgQueryBatch) {
      for (const auto& row : e.msg.at("rows")) {
        CHECK(row.contains("text"));
        CHECK_FALSE(row.contains("values"));
      }
    }
  }
  CHECK(scan_transcript_for_leaks(run.server.transcript).empty());
}

TEST_CASE("tcp transport carries a full session") {
  const auto ont = small_ontology();
  const auto fold = make_fold("tcpfold", ont, gen_records(15, 31));
  TcpListener listener(0);
  const std::uint16_t port = listener.port();

  ClientOutcome client_out;
  std::thread client([&] {
    auto conn = TcpConnection::connect("127.0.0.1", port);
    client_out = serve_model(make_additive(), *conn);
  });
  auto server_conn = listener.accept(5000);
  REQUIRE(server_conn);
  SessionOptions opts;
  opts.seed = 8;
  const auto result = run_session(*server_conn, ont, fold, {}, opts);
  client.join();
  CHECK(result.complete);
  CHECK(client_out.completed);
  CHECK(result.answers.size() == fold.records.size());

  // identical pipe-transport session hashes identically
  const auto pipe_run = run_pipe_session(make_additive(), ont, fold, {}, opts);
  CHECK(pipe_run.server.transcript.hash() == result.transcript.hash());
}
