// aap: operator CLI for the AI accountability registry and audit platform.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <atomic>
#include <csignal>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "aap/aap.hpp"

namespace {

struct GlobalOpts {
  std::string store_dir;
  std::string config_file;
  std::uint64_t seed = 0;
  bool json = false;
};

void emit(const GlobalOpts& g, const aap::Json& doc, const std::string& text) {
  if (g.json) {
    std::cout << aap::canonical_dump(doc) << "\n";
  } else {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
  }
}

aap::Store open_store(const GlobalOpts& g) {
  if (g.store_dir.empty())
    throw aap::Error("usage", "no store directory (use --store or AAP_STORE)");
  return aap::Store(g.store_dir);
}

aap::Config load_config(const GlobalOpts& g, const aap::Store& store) {
  if (!g.config_file.empty()) return aap::Config::load_or_default(g.config_file);
  return store.config();
}

std::pair<std::string, std::uint16_t> parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos)
    throw aap::Error("usage", "expected HOST:PORT, got " + s);
  return {s.substr(0, colon),
          static_cast<std::uint16_t>(std::stoi(s.substr(colon + 1)))};
}

aap::BenchmarkFold load_fold_any(const aap::Store& store, const std::string& ref) {
  if (auto f = aap::load_public_fold(store, ref)) return *f;
  if (auto f = aap::load_sealed_fold(store, ref)) return *f;
  throw aap::Error("unknown_fold", "fold not found: " + ref);
}

aap::Json measures_json(const aap::AuditReport& rep) {
  aap::Json arr = aap::Json::array();
  for (const auto& m : rep.measures) arr.push_back(m.to_json());
  return arr;
}

std::string report_text(const aap::AuditReport& rep) {
  std::string out = "report " + rep.report_id + " (" + rep.tier + ", fold " + rep.fold_ref +
                    ", system " + rep.system_id + ")\n";
  for (const auto& m : rep.measures) {
    out += "  " + m.measure_id + ": ";
    out += m.defined() ? aap::Json(*m.value).dump() + " (n=" + std::to_string(m.sample_size) + ")"
                       : "undefined: " + m.undefined_reason;
    out += "\n";
  }
  if (!rep.transcript_hash.empty()) out += "  transcript: " + rep.transcript_hash + "\n";
  return out;
}

// Internal-audit submission payload from a local oracle run, restricted to
// the deployment type's standardized measure set.
aap::Json submission_from_oracle(const aap::AuditComputation& comp,
                                 const std::vector<std::string>& measure_set) {
  aap::Json meas = aap::Json::object();
  for (const auto& id : measure_set) {
    const auto it = comp.measures.find(id);
    if (it == comp.measures.end()) continue;
    aap::Json mj{{"sample_size", it->second.sample_size}};
    if (it->second.defined()) {
      mj["value"] = *it->second.value;
    } else {
      mj["value"] = nullptr;
      mj["undefined_reason"] = it->second.undefined_reason;
    }
    meas[id] = mj;
  }
  aap::Json sub{{"measures", meas}};
  if (!comp.explanations.empty()) {
    aap::Json expl = aap::Json::array();
    for (const auto& e : comp.explanations) expl.push_back(e.to_json());
    sub["explanations"] = expl;
    sub["global_explanation"] = comp.global->to_json();
  }
  return sub;
}

int run_cli(int argc, char** argv) {
  GlobalOpts g;
  if (const char* env = std::getenv("AAP_STORE")) g.store_dir = env;

  CLI::App app{"AI accountability registry and audit platform"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--store", g.store_dir, "registry store directory (env: AAP_STORE)");
  app.add_option("--config", g.config_file, "config JSON overriding the store config");
  app.add_option("--seed", g.seed, "seed for seeded operations");
  app.add_flag("--json", g.json, "machine-readable JSON output");

  // --- register ---
  auto* reg_cmd = app.add_subcommand("register", "register an AI system");
  std::string r_name, r_provider, r_use, r_dt;
  reg_cmd->add_option("--name", r_name, "system name")->required();
  reg_cmd->add_option("--provider", r_provider, "provider name")->required();
  reg_cmd->add_option("--intended-use", r_use, "declared intended use")->required();
  reg_cmd->add_option("--deployment-type", r_dt, "deployment type id")->required();
  reg_cmd->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const auto out = reg.register_system(r_name, r_provider, r_use, r_dt);
    if (out.status == aap::RegistrationOutcome::Status::Refused)
      throw aap::Error("refused", out.reason);
    const bool fresh = out.status == aap::RegistrationOutcome::Status::Registered;
    emit(g,
         aap::Json{{"status", fresh ? "registered" : "already-registered"},
                   {"system", out.record.to_json()}},
         out.record.system_id + " (" + aap::to_string(out.record.risk_level) + ", " +
             (fresh ? "registered" : "already registered") + ")");
  });

  // --- ontology add ---
  auto* ont_cmd = app.add_subcommand("ontology", "feature ontology management");
  auto* ont_add = ont_cmd->add_subcommand("add", "add an ontology bundle");
  std::string o_file;
  ont_add->add_option("--file", o_file, "bundle JSON: {ontology, deployment_type?, templates?}")
      ->required();
  ont_add->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const aap::Json bundle = aap::read_json_file(o_file);
    aap::Json added = aap::Json::array();
    if (bundle.contains("ontology_id")) {  // bare ontology file
      reg.add_ontology(aap::FeatureOntology::from_json(bundle));
      added.push_back(bundle.at("ontology_id"));
    } else {
      reg.add_ontology(aap::FeatureOntology::from_json(bundle.at("ontology")));
      added.push_back(bundle.at("ontology").at("ontology_id"));
      if (bundle.contains("templates")) {
        for (const auto& tj : bundle.at("templates")) {
          reg.add_template(aap::RenderTemplate::from_json(tj));
          added.push_back(tj.at("template_id"));
        }
      }
      if (bundle.contains("deployment_type")) {
        reg.add_deployment_type(aap::DeploymentType::from_json(bundle.at("deployment_type")));
        added.push_back(bundle.at("deployment_type").at("deployment_type_id"));
      }
    }
    emit(g, aap::Json{{"added", added}}, "added " + aap::canonical_dump(added));
  });

  // --- benchmark ---
  auto* bench = app.add_subcommand("benchmark", "benchmark fold management");

  auto* b_split = bench->add_subcommand("split", "split a CSV dataset into two folds");
  std::string b_csv, b_ont, b_prefix;
  double b_fraction = 0.5;
  b_split->add_option("--csv", b_csv, "dataset CSV (header row, label last)")->required();
  b_split->add_option("--ontology", b_ont, "ontology id")->required();
  b_split->add_option("--prefix", b_prefix, "fold id prefix")->required();
  b_split->add_option("--public-fraction", b_fraction, "public fold share (0,1)");
  b_split->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const auto ont = reg.require_ontology(b_ont);
    const auto records = aap::load_records_csv(aap::read_text_file(b_csv), ont);
    const auto report = aap::validate_dataset(records, ont);
    if (!report.ok())
      throw aap::Error("invalid_dataset", "dataset fails validation: " +
                                              aap::canonical_dump(report.to_json()));
    auto split = aap::split_benchmark(records, ont, g.seed, b_fraction, b_prefix);
    aap::put_fold(store, split.public_fold, ont);
    aap::put_fold(store, split.airgapped_fold, ont);
    aap::Json warns = aap::Json::array();
    for (const auto& w : split.warnings)
      warns.push_back(aap::Json{{"stratum", w.stratum}, {"message", w.message}});
    emit(g,
         aap::Json{{"public", split.public_fold.ref()},
                   {"public_size", split.public_fold.records.size()},
                   {"airgapped", split.airgapped_fold.ref()},
                   {"airgapped_size", split.airgapped_fold.records.size()},
                   {"warnings", warns}},
         split.public_fold.ref() + " (" + std::to_string(split.public_fold.records.size()) +
             " records), " + split.airgapped_fold.ref() + " (" +
             std::to_string(split.airgapped_fold.records.size()) + " records), " +
             std::to_string(split.warnings.size()) + " warnings");
  });

  auto* b_inject = bench->add_subcommand("inject-novelty", "new fold version with novel records");
  std::string bi_fold;
  double bi_fraction = -1.0;
  b_inject->add_option("--fold", bi_fold, "fold reference id@version")->required();
  b_inject->add_option("--fraction", bi_fraction, "novelty fraction [0, 0.5]");
  b_inject->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const auto cfg = load_config(g, store);
    const auto fold = load_fold_any(store, bi_fold);
    const auto ont = reg.require_ontology(fold.ontology_id);
    const double fraction = bi_fraction < 0.0 ? cfg.novelty_fraction : bi_fraction;
    const auto next = aap::inject_novelty(fold, ont, fraction, g.seed);
    aap::put_fold(store, next, ont);
    emit(g,
         aap::Json{{"fold", next.ref()},
                   {"records", next.records.size()},
                   {"injected", next.records.size() - fold.records.size()}},
         next.ref() + ": " + std::to_string(next.records.size() - fold.records.size()) +
             " novel records injected");
  });

  auto* b_validate = bench->add_subcommand("validate", "validate a CSV dataset");
  std::string bv_csv, bv_ont;
  b_validate->add_option("--csv", bv_csv, "dataset CSV")->required();
  b_validate->add_option("--ontology", bv_ont, "ontology id")->required();
  b_validate->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    const auto ont = reg.require_ontology(bv_ont);
    const auto records = aap::load_records_csv(aap::read_text_file(bv_csv), ont);
    const auto report = aap::validate_dataset(records, ont);
    std::string text = report.ok() ? "ok: " + std::to_string(records.size()) + " records"
                                   : std::to_string(report.issues.size()) + " issues:";
    for (const auto& i : report.issues) {
      text += "\n  record " + std::to_string(i.record_index) + " " + i.field + ": " + i.message;
    }
    emit(g, report.to_json(), text);
  });

  // --- serve (audit endpoint) ---
  auto* serve_cmd = app.add_subcommand("serve", "run the automated-audit endpoint");
  std::uint16_t s_port = 7410;
  std::string s_fold;
  bool s_once = false;
  serve_cmd->add_option("--port", s_port, "TCP port");
  serve_cmd->add_option("--fold", s_fold, "public fold audited per session")->required();
  serve_cmd->add_flag("--once", s_once, "exit after one session");
  serve_cmd->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    aap::AuditEngine engine(reg, load_config(g, store));
    aap::TcpListener listener(s_port);
    if (!g.json)
      std::cout << "audit endpoint on port " << listener.port() << ", fold " << s_fold << "\n";
    std::atomic<std::uint64_t> session_index{0};
    for (;;) {
      auto conn = listener.accept();
      if (!conn) continue;
      const std::uint64_t idx = session_index++;
      auto handle = [&, idx](std::unique_ptr<aap::Connection> c) {
        try {
          const auto rep =
              engine.run_automated_audit_inbound(*c, s_fold, aap::mix_seed(g.seed, idx));
          emit(g, aap::Json{{"report", rep.to_json()}}, report_text(rep));
        } catch (const aap::Error& e) {
          emit(g, aap::Json{{"error", e.code}, {"detail", e.what()}},
               std::string("session failed: ") + e.what());
        }
      };
      if (s_once) {
        handle(std::move(conn));
        break;
      }
      std::thread(handle, std::move(conn)).detach();
    }
  });

  // --- client ---
  auto* client = app.add_subcommand("client", "reference model clients");

  auto* c_run = client->add_subcommand("run", "speak the model side of the protocol");
  std::string c_behavior, c_connect, c_system;
  std::uint16_t c_listen = 0;
  int c_sessions = 1;
  c_run->add_option("--behavior", c_behavior, "behavior JSON file")->required();
  c_run->add_option("--connect", c_connect, "dial an auditor at HOST:PORT");
  c_run->add_option("--listen", c_listen, "listen for the auditor on PORT");
  c_run->add_option("--sessions", c_sessions, "sessions to serve when listening");
  c_run->add_option("--system", c_system, "override the behavior's system id");
  c_run->callback([&] {
    auto behavior = aap::ModelBehavior::from_json(aap::read_json_file(c_behavior));
    if (!c_system.empty()) behavior.system_id = c_system;
    if (!c_connect.empty()) {
      const auto [host, port] = parse_host_port(c_connect);
      auto conn = aap::TcpConnection::connect(host, port);
      const auto out = aap::serve_model(behavior, *conn);
      emit(g,
           aap::Json{{"completed", out.completed},
                     {"rows_answered", out.rows_answered},
                     {"detail", out.detail}},
           out.completed ? "session complete (" + std::to_string(out.rows_answered) + " rows)"
                         : "session failed: " + out.detail);
      if (!out.completed) throw aap::Error("session_failed", out.detail);
      return;
    }
    if (c_listen == 0) throw aap::Error("usage", "client run needs --connect or --listen");
    aap::TcpListener listener(c_listen);
    if (!g.json) std::cout << "model client listening on port " << listener.port() << "\n";
    for (int i = 0; i < c_sessions; ++i) {
      auto conn = listener.accept();
      if (!conn) {
        --i;
        continue;
      }
      const auto out = aap::serve_model(behavior, *conn);
      emit(g,
           aap::Json{{"completed", out.completed},
                     {"rows_answered", out.rows_answered},
                     {"detail", out.detail}},
           out.completed ? "session complete (" + std::to_string(out.rows_answered) + " rows)"
                         : "session failed: " + out.detail);
    }
  });

  auto* c_oracle = client->add_subcommand(
      "oracle", "run the audit computation locally against a behavior");
  std::string co_behavior, co_fold, co_system;
  bool co_submit = false;
  c_oracle->add_option("--behavior", co_behavior, "behavior JSON file")->required();
  c_oracle->add_option("--fold", co_fold, "public fold reference")->required();
  c_oracle->add_option("--system", co_system, "system id (for --submit)");
  c_oracle->add_flag("--submit", co_submit, "submit the result as an internal audit");
  c_oracle->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const auto cfg = load_config(g, store);
    const auto behavior = aap::ModelBehavior::from_json(aap::read_json_file(co_behavior));
    const auto fold = aap::require_public_fold(store, co_fold);
    const auto ont = reg.require_ontology(fold.ontology_id);
    const auto comp = aap::local_oracle_audit(behavior, ont, fold,
                                              reg.templates_for(ont.ontology_id), cfg, g.seed);
    if (co_submit) {
      if (co_system.empty()) throw aap::Error("usage", "--submit requires --system");
      aap::AuditEngine engine(reg, cfg);
      const auto dt =
          reg.require_deployment_type(reg.require_system(co_system).deployment_type_id);
      const auto rep = engine.ingest_internal_audit(
          co_system, submission_from_oracle(comp, dt.measure_set), co_fold);
      emit(g, aap::Json{{"report", rep.to_json()}}, report_text(rep));
      return;
    }
    aap::Json meas = aap::Json::object();
    for (const auto& [id, m] : comp.measures) meas[id] = m.to_json();
    std::string text = "local oracle on " + co_fold + ":\n";
    for (const auto& [id, m] : comp.measures) {
      text += "  " + id + ": " +
              (m.defined() ? aap::Json(*m.value).dump() : "undefined: " + m.undefined_reason) +
              "\n";
    }
    emit(g, aap::Json{{"measures", meas}}, text);
  });

  auto* c_mem = client->add_subcommand("build-memorizer",
                                       "behavior memorizing a public fold's answers");
  std::string cm_fold, cm_out, cm_system = "sys-unregistered";
  c_mem->add_option("--fold", cm_fold, "public fold reference")->required();
  c_mem->add_option("--out", cm_out, "output behavior JSON file")->required();
  c_mem->add_option("--system", cm_system, "system id the client will claim");
  c_mem->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    const auto fold = aap::require_public_fold(store, cm_fold);
    const auto ont = reg.require_ontology(fold.ontology_id);
    const auto behavior = aap::build_memorizer(fold, ont, cm_system);
    aap::write_canonical_file(cm_out, behavior.to_json());
    emit(g, aap::Json{{"out", cm_out}, {"answers", behavior.answers.size()}},
         cm_out + ": memorizer over " + std::to_string(behavior.answers.size()) + " rows");
  });

  // --- audit ---
  auto* audit = app.add_subcommand("audit", "run or ingest audits");

  auto* a_internal = audit->add_subcommand("internal-submit", "ingest a self-reported audit");
  std::string ai_system, ai_fold, ai_measures, ai_behavior;
  a_internal->add_option("--system", ai_system, "system id")->required();
  a_internal->add_option("--fold", ai_fold, "public fold reference")->required();
  a_internal->add_option("--measures", ai_measures, "submission JSON file");
  a_internal->add_option("--behavior", ai_behavior,
                         "compute the submission locally from a behavior file");
  a_internal->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    const auto cfg = load_config(g, store);
    aap::AuditEngine engine(reg, cfg);
    aap::Json submission;
    if (!ai_measures.empty()) {
      submission = aap::read_json_file(ai_measures);
    } else if (!ai_behavior.empty()) {
      const auto behavior = aap::ModelBehavior::from_json(aap::read_json_file(ai_behavior));
      const auto fold = aap::require_public_fold(store, ai_fold);
      const auto ont = reg.require_ontology(fold.ontology_id);
      const auto comp = aap::local_oracle_audit(behavior, ont, fold,
                                                reg.templates_for(ont.ontology_id), cfg, g.seed);
      const auto dt =
          reg.require_deployment_type(reg.require_system(ai_system).deployment_type_id);
      submission = submission_from_oracle(comp, dt.measure_set);
    } else {
      throw aap::Error("usage", "internal-submit needs --measures or --behavior");
    }
    const auto rep = engine.ingest_internal_audit(ai_system, submission, ai_fold);
    emit(g, aap::Json{{"report", rep.to_json()}}, report_text(rep));
  });

  auto* a_auto = audit->add_subcommand("automated", "run an automated audit over the protocol");
  std::string aa_system, aa_fold, aa_connect;
  a_auto->add_option("--system", aa_system, "system id")->required();
  a_auto->add_option("--fold", aa_fold, "public fold reference")->required();
  a_auto->add_option("--connect", aa_connect, "model client at HOST:PORT")->required();
  a_auto->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    aap::AuditEngine engine(reg, load_config(g, store));
    const auto [host, port] = parse_host_port(aa_connect);
    auto conn = aap::TcpConnection::connect(host, port);
    const auto rep = engine.run_automated_audit(aa_system, *conn, aa_fold, g.seed);
    emit(g, aap::Json{{"report", rep.to_json()}}, report_text(rep));
  });

  auto* a_ext = audit->add_subcommand("external", "run an external audit on an air-gapped fold");
  std::string ae_system, ae_fold, ae_connect;
  a_ext->add_option("--system", ae_system, "system id")->required();
  a_ext->add_option("--fold", ae_fold, "air-gapped fold reference")->required();
  a_ext->add_option("--connect", ae_connect, "model client at HOST:PORT")->required();
  a_ext->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    aap::AuditEngine engine(reg, load_config(g, store));
    const auto [host, port] = parse_host_port(ae_connect);
    auto conn = aap::TcpConnection::connect(host, port);
    const auto rep = engine.run_external_audit(ae_system, *conn, ae_fold, g.seed);
    emit(g, aap::Json{{"report", rep.to_json()}}, report_text(rep));
  });

  // --- findings ---
  auto* find_cmd = app.add_subcommand("findings", "compare audit tiers and record findings");
  std::string f_system;
  double f_alpha = -1.0;
  find_cmd->add_option("--system", f_system, "system id")->required();
  find_cmd->add_option("--alpha", f_alpha, "significance level override");
  find_cmd->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    aap::AuditEngine engine(reg, load_config(g, store));
    const auto f = engine.run_findings(
        f_system, f_alpha > 0.0 ? std::optional<double>(f_alpha) : std::nullopt);
    emit(g, f.to_json(),
         f.kind + (f.measure_id.empty() ? "" : " (measure " + f.measure_id + ", p = " +
                                                   aap::Json(f.p_value).dump() + ")") +
             "\n" + f.narrative);
  });

  // --- certify ---
  auto* cert_cmd = app.add_subcommand("certify", "issue or revoke certificates");
  std::string ce_system, ce_measure, ce_template, ce_cert, ce_reason = "revoked by operator";
  bool ce_revoke = false;
  cert_cmd->add_option("--system", ce_system, "system id")->required();
  cert_cmd->add_option("--measure", ce_measure, "measure id backing the claim");
  cert_cmd->add_option("--template", ce_template, "claim template with {placeholders}");
  cert_cmd->add_flag("--revoke", ce_revoke, "revoke instead of issue");
  cert_cmd->add_option("--certificate", ce_cert, "certificate id (for --revoke)");
  cert_cmd->add_option("--reason", ce_reason, "revocation reason");
  cert_cmd->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    aap::AuditEngine engine(reg, load_config(g, store));
    if (ce_revoke) {
      if (ce_cert.empty()) throw aap::Error("usage", "--revoke requires --certificate");
      const auto c = engine.revoke_certificate(ce_system, ce_cert, ce_reason);
      emit(g, c.to_json(), c.certificate_id + " revoked");
      return;
    }
    if (ce_measure.empty()) throw aap::Error("usage", "certify requires --measure");
    const auto c = engine.issue_certificate(ce_system, ce_measure, ce_template);
    emit(g, c.to_json(), c.certificate_id + ": " + c.claim_text());
  });

  // --- card ---
  auto* card = app.add_subcommand("card", "AI card export and import");

  auto* card_export = card->add_subcommand("export", "export a system's AI card");
  std::string cx_system, cx_format = "json", cx_out;
  card_export->add_option("--system", cx_system, "system id")->required();
  card_export->add_option("--format", cx_format, "json | text");
  card_export->add_option("--out", cx_out, "output file (default stdout)");
  card_export->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    std::string body;
    if (cx_format == "json") {
      body = aap::canonical_line(reg.export_card(cx_system));
    } else if (cx_format == "text") {
      body = reg.export_card_text(cx_system);
    } else {
      throw aap::Error("usage", "unknown format: " + cx_format);
    }
    if (cx_out.empty()) {
      std::cout << body;
    } else {
      aap::write_text_file(cx_out, body);
    }
  });

  auto* card_import = card->add_subcommand("import", "import an exported card document");
  std::string ci_file;
  card_import->add_option("--file", ci_file, "card JSON (default stdin)");
  card_import->callback([&] {
    auto store = open_store(g);
    const auto lock = store.exclusive_lock();
    aap::Registry reg(store);
    aap::Json doc;
    if (ci_file.empty()) {
      std::string body((std::istreambuf_iterator<char>(std::cin)),
                       std::istreambuf_iterator<char>());
      doc = aap::Json::parse(body);
    } else {
      doc = aap::read_json_file(ci_file);
    }
    const auto rec = reg.import_card(doc);
    emit(g, aap::Json{{"system", rec.system_id}}, rec.system_id + " imported");
  });

  // --- compare ---
  auto* cmp_cmd = app.add_subcommand("compare", "compare feature influence across systems");
  std::string cp_dt, cp_feature;
  cmp_cmd->add_option("--deployment-type", cp_dt, "deployment type id")->required();
  cmp_cmd->add_option("--feature", cp_feature, "feature name")->required();
  cmp_cmd->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    const auto cfg = load_config(g, store);
    std::vector<std::pair<std::string, aap::GlobalInfluence>> systems;
    for (const auto& sys : reg.list_systems(cp_dt)) {
      if (sys.card.global_explanation)
        systems.emplace_back(sys.system_id, *sys.card.global_explanation);
    }
    const auto rows = aap::compare_influence(systems, cp_feature, cfg.influence_flag_factor);
    aap::Json arr = aap::Json::array();
    std::string text = "influence of " + cp_feature + " across " + cp_dt + ":\n";
    for (const auto& r : rows) {
      arr.push_back(r.to_json());
      text += "  " + r.system_id + ": " + aap::Json(r.mean_abs).dump() +
              (r.flagged ? "  << exceeds peer median" : "") + "\n";
    }
    emit(g, aap::Json{{"feature", cp_feature}, {"systems", arr}}, text);
  });

  // --- list (plumbing) ---
  auto* list_cmd = app.add_subcommand("list", "list registered systems");
  std::string l_dt;
  list_cmd->add_option("--deployment-type", l_dt, "filter by deployment type");
  list_cmd->callback([&] {
    auto store = open_store(g);
    aap::Registry reg(store);
    const auto systems =
        reg.list_systems(l_dt.empty() ? std::nullopt : std::optional<std::string>(l_dt));
    aap::Json arr = aap::Json::array();
    std::string text;
    for (const auto& s : systems) {
      arr.push_back(s.to_json());
      text += s.system_id + "  " + s.name + "  " + aap::to_string(s.risk_level) + "\n";
    }
    emit(g, aap::Json{{"systems", arr}}, text.empty() ? "no systems registered" : text);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints the offending flag or help text
    return rc == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const aap::Error& e) {
    std::cerr << "error (" << e.code << "): " << e.what() << "\n";
    return e.code == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
