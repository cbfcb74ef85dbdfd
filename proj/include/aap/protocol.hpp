#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aap/benchmark.hpp"
#include "aap/canonical.hpp"
#include "aap/common.hpp"
#include "aap/hash.hpp"
#include "aap/ontology.hpp"
#include "aap/rng.hpp"

namespace aap {

inline constexpr const char* kProtocolVersion = "aap/1";

inline constexpr const char* kMsgHello = "HELLO";
inline constexpr const char* kMsgSchema = "SCHEMA";
inline constexpr const char* kMsgSessionOpen = "SESSION_OPEN";
inline constexpr const char* kMsgQueryBatch = "QUERY_BATCH";
inline constexpr const char* kMsgResponseBatch = "RESPONSE_BATCH";
inline constexpr const char* kMsgSessionClose = "SESSION_CLOSE";
inline constexpr const char* kMsgError = "ERROR";

// ---------------------------------------------------------------------------
// Byte-stream connections carrying newline-delimited canonical JSON

struct RecvOutcome {
  enum class Status { Line, Timeout, Closed };
  Status status = Status::Closed;
  std::string line;
};

class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send_line(const std::string& line) = 0;   // '\n' appended here
  virtual RecvOutcome recv_line(int timeout_ms) = 0;     // timeout_ms < 0 blocks
  virtual void shutdown() = 0;
};

namespace detail {

struct PipeChannel {
  std::mutex m;
  std::condition_variable cv;
  std::deque<std::string> lines;
  bool closed = false;

  void push(std::string s) {
    {
      std::lock_guard<std::mutex> lk(m);
      if (closed) return;
      lines.push_back(std::move(s));
    }
    cv.notify_all();
  }

  RecvOutcome pop(int timeout_ms) {
    std::unique_lock<std::mutex> lk(m);
    auto ready = [&] { return !lines.empty() || closed; };
    if (timeout_ms < 0) {
      cv.wait(lk, ready);
    } else if (!cv.wait_for(lk, std::chrono::milliseconds(timeout_ms), ready)) {
      return {RecvOutcome::Status::Timeout, {}};
    }
    if (lines.empty()) return {RecvOutcome::Status::Closed, {}};
    RecvOutcome out{RecvOutcome::Status::Line, std::move(lines.front())};
    lines.pop_front();
    return out;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lk(m);
      closed = true;
    }
    cv.notify_all();
  }
};

}  // namespace detail

// In-memory duplex connection; the deterministic transport for tests.
class PipeConnection : public Connection {
 public:
  PipeConnection(std::shared_ptr<detail::PipeChannel> out,
                 std::shared_ptr<detail::PipeChannel> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  void send_line(const std::string& line) override { out_->push(line); }
  RecvOutcome recv_line(int timeout_ms) override { return in_->pop(timeout_ms); }
  void shutdown() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<detail::PipeChannel> out_;
  std::shared_ptr<detail::PipeChannel> in_;
};

inline std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> connection_pair() {
  auto a = std::make_shared<detail::PipeChannel>();
  auto b = std::make_shared<detail::PipeChannel>();
  return {std::make_unique<PipeConnection>(a, b), std::make_unique<PipeConnection>(b, a)};
}

class TcpConnection : public Connection {
 public:
  explicit TcpConnection(int fd) : fd_(fd) {}
  TcpConnection(const TcpConnection&) = delete;
  TcpConnection& operator=(const TcpConnection&) = delete;
  ~TcpConnection() override {
    if (fd_ >= 0) ::close(fd_);
  }

  static std::unique_ptr<TcpConnection> connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res)
      throw Error("connect_failed", "cannot resolve " + host);
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0)
      throw Error("connect_failed", "cannot connect to " + host + ":" + service);
    return std::make_unique<TcpConnection>(fd);
  }

  void send_line(const std::string& line) override {
    std::string framed = line + "\n";
    std::size_t sent = 0;
    while (sent < framed.size()) {
      const ssize_t n =
          ::send(fd_, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) throw Error("io", "connection write failed");
      sent += static_cast<std::size_t>(n);
    }
  }

  RecvOutcome recv_line(int timeout_ms) override {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::milliseconds(timeout_ms < 0 ? 0 : timeout_ms);
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return {RecvOutcome::Status::Line, std::move(line)};
      }
      int wait_ms = -1;
      if (timeout_ms >= 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                              deadline - std::chrono::steady_clock::now())
                              .count();
        if (left <= 0) return {RecvOutcome::Status::Timeout, {}};
        wait_ms = static_cast<int>(left);
      }
      pollfd pfd{fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, wait_ms);
      if (pr == 0) return {RecvOutcome::Status::Timeout, {}};
      if (pr < 0) return {RecvOutcome::Status::Closed, {}};
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n <= 0) return {RecvOutcome::Status::Closed, {}};
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void shutdown() override { ::shutdown(fd_, SHUT_RDWR); }

 private:
  int fd_ = -1;
  std::string buf_;
};

class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error("listen_failed", "cannot create socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(fd_, 16) != 0) {
      ::close(fd_);
      throw Error("listen_failed", "cannot bind port " + std::to_string(port));
    }
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  std::unique_ptr<TcpConnection> accept(int timeout_ms = -1) {
    pollfd pfd{fd_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, timeout_ms);
    if (pr <= 0) return nullptr;
    const int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) return nullptr;
    return std::make_unique<TcpConnection>(cfd);
  }

 private:
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Messages

struct SchemaFeature {
  std::string name;
  FeatureKind kind = FeatureKind::Categorical;

  Json to_json() const { return Json{{"name", name}, {"kind", to_string(kind)}}; }
  static SchemaFeature from_json(const Json& j) {
    return SchemaFeature{j.at("name").get<std::string>(),
                         feature_kind_from_string(j.at("kind").get<std::string>())};
  }
};

struct ModelAnswer {
  std::string decision;          // label-domain value or ABSTAIN
  std::optional<double> score;   // positive-outcome score in [0,1]

  bool operator==(const ModelAnswer&) const = default;
};

namespace msg {

inline Json hello(const std::string& system_id) {
  return Json{{"type", kMsgHello}, {"system_id", system_id},
              {"protocol_version", kProtocolVersion}};
}

inline Json schema(const std::vector<SchemaFeature>& features) {
  Json arr = Json::array();
  for (const auto& f : features) arr.push_back(f.to_json());
  return Json{{"type", kMsgSchema}, {"features", arr}};
}

inline Json session_open(const std::string& session_id, const std::string& mode,
                         int batch_size) {
  return Json{{"type", kMsgSessionOpen}, {"session_id", session_id}, {"mode", mode},
              {"batch_size", batch_size}};
}

inline Json query_batch(const std::string& batch_id, Json rows) {
  return Json{{"type", kMsgQueryBatch}, {"batch_id", batch_id}, {"rows", std::move(rows)}};
}

inline Json response_batch(const std::string& batch_id, Json rows) {
  return Json{{"type", kMsgResponseBatch}, {"batch_id", batch_id}, {"rows", std::move(rows)}};
}

inline Json session_close(const std::string& summary_digest) {
  return Json{{"type", kMsgSessionClose}, {"summary_digest", summary_digest}};
}

inline Json error(const std::string& code, const std::string& detail) {
  return Json{{"type", kMsgError}, {"code", code}, {"detail", detail}};
}

}  // namespace msg

inline std::string message_type(const Json& m) {
  if (!m.is_object() || !m.contains("type") || !m.at("type").is_string()) return "";
  return m.at("type").get<std::string>();
}

// ---------------------------------------------------------------------------
// Transcripts

struct TranscriptEntry {
  std::string dir;  // "out" = auditor to model, "in" = model to auditor
  std::uint64_t seq = 0;
  Json msg;

  Json to_json() const { return Json{{"dir", dir}, {"msg", msg}, {"seq", seq}}; }
};

struct SessionTranscript {
  std::string session_id;
  std::string mode;
  std::string fold_ref;   // server-side record; never put on the wire
  std::string system_id;
  std::int64_t started_at = 0;
  std::vector<TranscriptEntry> entries;
  bool complete = false;
  std::string abort_reason;

  Json to_json() const {
    Json arr = Json::array();
    for (const auto& e : entries) arr.push_back(e.to_json());
    return Json{{"session_id", session_id},
                {"mode", mode},
                {"fold_ref", fold_ref},
                {"system_id", system_id},
                {"started_at", started_at},
                {"entries", arr},
                {"complete", complete},
                {"abort_reason", abort_reason},
                {"transcript_hash", hash()}};
  }

  static SessionTranscript from_json(const Json& j) {
    SessionTranscript t;
    t.session_id = j.at("session_id").get<std::string>();
    t.mode = j.at("mode").get<std::string>();
    t.fold_ref = j.at("fold_ref").get<std::string>();
    t.system_id = j.value("system_id", "");
    t.started_at = j.at("started_at").get<std::int64_t>();
    for (const auto& ej : j.at("entries")) {
      t.entries.push_back({ej.at("dir").get<std::string>(),
                           ej.at("seq").get<std::uint64_t>(), ej.at("msg")});
    }
    t.complete = j.at("complete").get<bool>();
    t.abort_reason = j.value("abort_reason", "");
    return t;
  }

  // Digest over the canonical serialization of all messages. Timestamps are
  // not part of the hashed content, so identical exchanges hash identically.
  std::string hash() const {
    std::string body;
    for (const auto& e : entries) body += canonical_dump(e.to_json()) + "\n";
    return sha256_hex(body);
  }
};

inline std::string transcript_hash(const SessionTranscript& t) { return t.hash(); }

// ---------------------------------------------------------------------------
// Schema negotiation

struct InputPlan {
  enum class Mode { Tabular, Text };
  Mode mode = Mode::Tabular;
  std::vector<std::string> features;       // tabular: features to send, client order
  std::optional<RenderTemplate> render;    // text: how to serialize a record

  Json to_json() const {
    Json j{{"mode", mode == Mode::Tabular ? "tabular" : "text"}, {"features", features}};
    if (render) j["template_id"] = render->template_id;
    return j;
  }
};

struct NegotiationResult {
  bool ok = false;
  InputPlan plan;
  std::string reason;
};

// Tabular when every expected feature exists with the expected kind; text
// rendering when the client expects a single text field and a template is
// bound to the ontology; refused otherwise.
inline NegotiationResult negotiate_schema(const std::vector<SchemaFeature>& client_features,
                                          const FeatureOntology& ont,
                                          const std::vector<RenderTemplate>& templates) {
  NegotiationResult out;
  if (client_features.empty()) {
    out.reason = "client declared no expected features";
    return out;
  }

  bool all_known = true;
  std::string first_problem;
  for (const auto& cf : client_features) {
    const auto fi = ont.feature_index(cf.name);
    if (!fi) {
      all_known = false;
      first_problem = "unknown feature: " + cf.name;
      break;
    }
    if (ont.features[*fi].kind != cf.kind) {
      all_known = false;
      first_problem = "feature " + cf.name + " has kind " +
                      to_string(ont.features[*fi].kind) + ", client expects " +
                      to_string(cf.kind);
      break;
    }
  }
  if (all_known) {
    out.ok = true;
    out.plan.mode = InputPlan::Mode::Tabular;
    for (const auto& cf : client_features) out.plan.features.push_back(cf.name);
    return out;
  }

  if (client_features.size() == 1 && client_features.front().kind == FeatureKind::Text) {
    for (const auto& t : templates) {
      if (t.ontology_id == ont.ontology_id) {
        out.ok = true;
        out.plan.mode = InputPlan::Mode::Text;
        out.plan.render = t;
        return out;
      }
    }
    out.reason = "client expects text input but no render template is bound to ontology " +
                 ont.ontology_id;
    return out;
  }

  out.reason = "schema incompatible: " + first_problem;
  return out;
}

// The exact payload a query row carries for a record under a plan.
inline Json plan_row_payload(const FeatureOntology& ont, const Record& r,
                             const InputPlan& plan) {
  if (plan.mode == InputPlan::Mode::Tabular) {
    return Json{{"values", record_values_json(ont, r, &plan.features)}};
  }
  return Json{{"text", render_text(ont, r, *plan.render)}};
}

// ---------------------------------------------------------------------------
// Auditor-side session state machine

struct SessionOptions {
  std::string mode = "automated";  // "automated" | "external"
  int batch_size = 64;
  int timeout_ms = 30000;
  std::uint64_t seed = 0;
};

// One QA session, driven by the auditing side. The model client is a black
// box: outbound traffic carries opaque row nonces and feature payloads only
// (no labels, fold identifiers, novelty flags, or group annotations).
class AuditorSession {
 public:
  AuditorSession(Connection& conn, const FeatureOntology& ont, const BenchmarkFold& fold,
                 std::vector<RenderTemplate> templates, SessionOptions opts)
      : conn_(conn), ont_(ont), fold_(fold), templates_(std::move(templates)), opts_(opts) {
    transcript_.mode = opts_.mode;
    transcript_.fold_ref = fold_.ref();
    transcript_.started_at = now_epoch_seconds();
  }

  // HELLO + SCHEMA + negotiation + SESSION_OPEN. False means refused or
  // aborted; the transcript records why.
  bool open() {
    const auto hello = recv_expected(kMsgHello);
    if (!hello) return false;
    if (!hello->contains("system_id") || !hello->at("system_id").is_string()) {
      abort("malformed_message", "HELLO lacks system_id");
      return false;
    }
    if (hello->value("protocol_version", "") != kProtocolVersion) {
      abort("unsupported_version", "expected protocol_version " +
                                       std::string(kProtocolVersion));
      return false;
    }
    transcript_.system_id = hello->at("system_id").get<std::string>();

    const auto schema = recv_expected(kMsgSchema);
    if (!schema) return false;
    std::vector<SchemaFeature> client_features;
    if (!schema->contains("features") || !schema->at("features").is_array()) {
      abort("malformed_message", "SCHEMA lacks a features array");
      return false;
    }
    try {
      for (const auto& fj : schema->at("features"))
        client_features.push_back(SchemaFeature::from_json(fj));
    } catch (const std::exception& e) {
      abort("malformed_message", std::string("bad SCHEMA feature: ") + e.what());
      return false;
    }

    const NegotiationResult neg = negotiate_schema(client_features, ont_, templates_);
    if (!neg.ok) {
      abort("schema_incompatible", neg.reason);
      return false;
    }
    plan_ = neg.plan;

    session_id_ = "ses-" + short_digest(fold_.content_digest() + "|" + transcript_.system_id +
                                            "|" + opts_.mode + "|" +
                                            std::to_string(opts_.seed),
                                        16);
    transcript_.session_id = session_id_;
    send(msg::session_open(session_id_, opts_.mode, opts_.batch_size));
    opened_ = true;
    return true;
  }

  const std::string& session_id() const { return session_id_; }
  const std::string& client_system_id() const { return transcript_.system_id; }
  const InputPlan& plan() const { return plan_; }
  bool aborted() const { return aborted_; }
  const std::string& abort_reason() const { return transcript_.abort_reason; }

  // Sends records in batches, one RESPONSE_BATCH expected per QUERY_BATCH.
  // Answers come back aligned with the input order. nullopt on abort.
  std::optional<std::vector<ModelAnswer>> query_records(const std::vector<Record>& records) {
    if (!opened_ || aborted_) return std::nullopt;
    std::vector<ModelAnswer> answers;
    answers.reserve(records.size());
    std::size_t at = 0;
    while (at < records.size()) {
      const std::size_t take =
          std::min(records.size() - at, static_cast<std::size_t>(opts_.batch_size));
      const std::string batch_id = "b" + std::to_string(++batch_counter_);
      Json rows = Json::array();
      std::vector<std::string> nonces;
      nonces.reserve(take);
      for (std::size_t k = 0; k < take; ++k) {
        Json row = plan_row_payload(ont_, records[at + k], plan_);
        const std::string nonce = next_nonce();
        row["row_id"] = nonce;
        nonces.push_back(nonce);
        rows.push_back(std::move(row));
      }
      send(msg::query_batch(batch_id, std::move(rows)));

      const auto reply = recv_expected(kMsgResponseBatch);
      if (!reply) return std::nullopt;
      if (reply->value("batch_id", "") != batch_id) {
        abort("row_id_mismatch", "response batch id does not match query batch " + batch_id);
        return std::nullopt;
      }
      if (!reply->contains("rows") || !reply->at("rows").is_array() ||
          reply->at("rows").size() != take) {
        abort("row_id_mismatch", "response row count does not match query batch " + batch_id);
        return std::nullopt;
      }
      for (std::size_t k = 0; k < take; ++k) {
        const Json& row = reply->at("rows")[k];
        if (!row.is_object() || row.value("row_id", "") != nonces[k]) {
          abort("row_id_mismatch", "response row ids do not match query batch " + batch_id);
          return std::nullopt;
        }
        if (!row.contains("decision") || !row.at("decision").is_string()) {
          abort("malformed_message", "response row lacks a decision");
          return std::nullopt;
        }
        ModelAnswer a;
        a.decision = row.at("decision").get<std::string>();
        if (a.decision != kAbstain && !ont_.label_in_domain(a.decision)) {
          abort("bad_decision", "decision outside label domain: " + a.decision);
          return std::nullopt;
        }
        if (row.contains("score") && !row.at("score").is_null()) {
          if (!row.at("score").is_number()) {
            abort("malformed_message", "score must be a number");
            return std::nullopt;
          }
          const double s = row.at("score").get<double>();
          if (s < 0.0 || s > 1.0) {
            abort("bad_score", "score outside [0,1]");
            return std::nullopt;
          }
          a.score = s;
        }
        answers.push_back(std::move(a));
      }
      response_digest_material_ += canonical_dump(*reply) + "\n";
      at += take;
    }
    return answers;
  }

  bool finish() {
    if (!opened_ || aborted_) return false;
    send(msg::session_close(sha256_hex(response_digest_material_)));
    transcript_.complete = true;
    return true;
  }

  void abort(const std::string& code, const std::string& detail) {
    if (aborted_) return;
    aborted_ = true;
    transcript_.abort_reason = code + ": " + detail;
    try {
      send(msg::error(code, detail));
    } catch (const Error&) {
      // connection already gone; the transcript still records the abort
    }
  }

  SessionTranscript take_transcript() { return std::move(transcript_); }
  const SessionTranscript& transcript() const { return transcript_; }

 private:
  void send(const Json& m) {
    transcript_.entries.push_back({"out", ++seq_, m});
    conn_.send_line(canonical_dump(m));
  }

  // Receives one message of the expected type. Anything else aborts: after
  // SESSION_OPEN the only acceptable inbound types are RESPONSE_BATCH and
  // ERROR, which keeps external-mode sessions contained at protocol level.
  std::optional<Json> recv_expected(const std::string& expected_type) {
    const RecvOutcome r = conn_.recv_line(opts_.timeout_ms);
    if (r.status == RecvOutcome::Status::Timeout) {
      abort("timeout", "no response within " + std::to_string(opts_.timeout_ms) + " ms");
      return std::nullopt;
    }
    if (r.status == RecvOutcome::Status::Closed) {
      abort("connection_closed", "client closed the connection");
      return std::nullopt;
    }
    Json m = Json::parse(r.line, nullptr, false);
    if (m.is_discarded() || !m.is_object()) {
      transcript_.entries.push_back({"in", ++seq_, Json{{"type", "MALFORMED"}, {"raw", r.line}}});
      abort("malformed_message", "line is not a JSON object");
      return std::nullopt;
    }
    transcript_.entries.push_back({"in", ++seq_, m});
    const std::string type = message_type(m);
    if (type == kMsgError) {
      aborted_ = true;
      transcript_.abort_reason =
          "client_error: " + m.value("code", "") + ": " + m.value("detail", "");
      return std::nullopt;
    }
    if (type != expected_type) {
      abort("unexpected_message", "expected " + expected_type + ", got " + type);
      return std::nullopt;
    }
    return m;
  }

  std::string next_nonce() {
    return short_digest(session_id_ + ":" + std::to_string(++nonce_counter_), 16);
  }

  Connection& conn_;
  const FeatureOntology& ont_;
  const BenchmarkFold& fold_;
  std::vector<RenderTemplate> templates_;
  SessionOptions opts_;
  SessionTranscript transcript_;
  InputPlan plan_;
  std::string session_id_;
  std::string response_digest_material_;
  std::uint64_t seq_ = 0;
  std::uint64_t batch_counter_ = 0;
  std::uint64_t nonce_counter_ = 0;
  bool opened_ = false;
  bool aborted_ = false;
};

struct SessionResult {
  SessionTranscript transcript;
  std::vector<ModelAnswer> answers;  // aligned with fold.records when complete
  std::string system_id;
  InputPlan plan;
  bool complete = false;
  std::string abort_reason;
};

// Seed-determined shuffled order of fold rows; a pure function of fold
// content and seed.
inline std::vector<std::size_t> session_row_order(const BenchmarkFold& fold,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> order(fold.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SeededRng rng(mix_seed(seed, digest_to_seed(fold.content_digest())));
  rng.shuffle(order);
  return order;
}

// Full QA pass over a fold: handshake, all rows in shuffled batches, close.
inline SessionResult run_session(Connection& conn, const FeatureOntology& ont,
                                 const BenchmarkFold& fold,
                                 const std::vector<RenderTemplate>& templates,
                                 const SessionOptions& opts) {
  AuditorSession session(conn, ont, fold, templates, opts);
  SessionResult out;
  if (!session.open()) {
    out.transcript = session.take_transcript();
    out.abort_reason = out.transcript.abort_reason;
    return out;
  }
  out.system_id = session.client_system_id();
  out.plan = session.plan();

  const auto order = session_row_order(fold, opts.seed);
  std::vector<Record> shuffled;
  shuffled.reserve(order.size());
  for (const std::size_t i : order) shuffled.push_back(fold.records[i]);

  const auto answers = session.query_records(shuffled);
  if (!answers) {
    out.transcript = session.take_transcript();
    out.abort_reason = out.transcript.abort_reason;
    return out;
  }
  session.finish();
  out.answers.resize(fold.records.size());
  for (std::size_t k = 0; k < order.size(); ++k) out.answers[order[k]] = (*answers)[k];
  out.complete = true;
  out.transcript = session.take_transcript();
  return out;
}

// ---------------------------------------------------------------------------
// Black-box audit of a transcript itself

struct LeakFinding {
  std::uint64_t seq = 0;
  std::string what;
};

namespace detail {

inline void scan_json_keys(const Json& j, std::uint64_t seq,
                           std::vector<LeakFinding>& findings) {
  if (j.is_object()) {
    for (const auto& [key, val] : j.items()) {
      for (const char* bad : {"label", "novelty", "group", "fold"}) {
        if (key.find(bad) != std::string::npos) {
          findings.push_back({seq, "outbound message carries key '" + key + "'"});
        }
      }
      scan_json_keys(val, seq, findings);
    }
  } else if (j.is_array()) {
    for (const auto& el : j) scan_json_keys(el, seq, findings);
  }
}

inline void scan_string_values(const Json& j, const std::string& needle, std::uint64_t seq,
                               std::vector<LeakFinding>& findings) {
  if (j.is_string()) {
    if (j.get<std::string>().find(needle) != std::string::npos) {
      findings.push_back({seq, "outbound value mentions the fold identifier"});
    }
  } else if (j.is_object() || j.is_array()) {
    for (const auto& el : j) scan_string_values(el, needle, seq, findings);
  }
}

}  // namespace detail

// Asserts the black-box property on a finished transcript: outbound traffic
// is restricted to auditor message types, carries no label/novelty/group/fold
// keys anywhere, query rows hold only row_id plus the input payload, and the
// fold identifier never appears in any outbound byte sequence.
inline std::vector<LeakFinding> scan_transcript_for_leaks(const SessionTranscript& t) {
  std::vector<LeakFinding> findings;
  const std::string fold_id = t.fold_ref.substr(0, t.fold_ref.rfind('@'));
  for (const auto& e : t.entries) {
    if (e.dir != "out") continue;
    const std::string type = message_type(e.msg);
    if (type != kMsgSessionOpen && type != kMsgQueryBatch && type != kMsgSessionClose &&
        type != kMsgError) {
      findings.push_back({e.seq, "unexpected outbound message type: " + type});
    }
    Json body = e.msg;
    body.erase("type");
    detail::scan_json_keys(body, e.seq, findings);
    if (type == kMsgQueryBatch && e.msg.contains("rows")) {
      for (const auto& row : e.msg.at("rows")) {
        for (const auto& [key, val] : row.items()) {
          (void)val;
          if (key != "row_id" && key != "values" && key != "text") {
            findings.push_back({e.seq, "query row carries unexpected key '" + key + "'"});
          }
        }
      }
    }
    if (!fold_id.empty()) detail::scan_string_values(e.msg, fold_id, e.seq, findings);
  }
  return findings;
}

}  // namespace aap
