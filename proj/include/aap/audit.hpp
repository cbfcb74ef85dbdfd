#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aap/clients.hpp"
#include "aap/common.hpp"
#include "aap/config.hpp"
#include "aap/fold_store.hpp"
#include "aap/measures.hpp"
#include "aap/protocol.hpp"
#include "aap/registry.hpp"
#include "aap/stats.hpp"
#include "aap/store.hpp"

namespace aap {

inline constexpr const char* kTierInternal = "internal";
inline constexpr const char* kTierAutomated = "automated";
inline constexpr const char* kTierExternal = "external";

struct AuditReport {
  std::string report_id;
  std::string system_id;
  std::string tier;  // internal | automated | external
  std::string fold_ref;
  std::vector<MeasureValue> measures;  // sorted by measure_id
  Json group_performance = Json();     // object, or null for summary-only reports
  std::vector<InfluenceExplanation> explanations;
  std::optional<GlobalInfluence> global_explanation;
  std::string transcript_hash;  // automated and external tiers
  std::int64_t submitted_at = 0;

  const MeasureValue* find(const std::string& id) const {
    for (const auto& m : measures) {
      if (m.measure_id == id) return &m;
    }
    return nullptr;
  }

  Json to_json() const {
    Json meas = Json::array();
    for (const auto& m : measures) meas.push_back(m.to_json());
    Json expl = Json::array();
    for (const auto& e : explanations) expl.push_back(e.to_json());
    return Json{{"report_id", report_id},
                {"system_id", system_id},
                {"tier", tier},
                {"fold_ref", fold_ref},
                {"measures", meas},
                {"group_performance", group_performance},
                {"explanations", expl},
                {"global_explanation",
                 global_explanation ? global_explanation->to_json() : Json()},
                {"transcript_hash", transcript_hash},
                {"submitted_at", submitted_at}};
  }

  static AuditReport from_json(const Json& j) {
    AuditReport r;
    r.report_id = j.at("report_id").get<std::string>();
    r.system_id = j.at("system_id").get<std::string>();
    r.tier = j.at("tier").get<std::string>();
    r.fold_ref = j.at("fold_ref").get<std::string>();
    for (const auto& mj : j.at("measures")) r.measures.push_back(MeasureValue::from_json(mj));
    r.group_performance = j.at("group_performance");
    for (const auto& ej : j.at("explanations"))
      r.explanations.push_back(InfluenceExplanation::from_json(ej));
    if (!j.at("global_explanation").is_null())
      r.global_explanation = GlobalInfluence::from_json(j.at("global_explanation"));
    r.transcript_hash = j.value("transcript_hash", "");
    r.submitted_at = j.at("submitted_at").get<std::int64_t>();
    return r;
  }
};

inline constexpr const char* kFindingNone = "NONE";
inline constexpr const char* kFindingFabricated = "IRREPRODUCIBLE_OR_FABRICATED";
inline constexpr const char* kFindingAdaptation = "BENCHMARK_ADAPTATION";

struct DiscrepancyFinding {
  std::string system_id;
  std::string kind = kFindingNone;
  double statistic = 0.0;  // z of the most significant comparison
  double p_value = 1.0;    // Bonferroni-adjusted
  std::string measure_id;
  std::vector<std::string> compared_reports;
  std::string narrative;
  double alpha = 0.0;
  std::int64_t found_at = 0;

  Json to_json() const {
    return Json{{"system_id", system_id},   {"kind", kind},
                {"statistic", statistic},   {"p_value", p_value},
                {"measure_id", measure_id}, {"compared_reports", compared_reports},
                {"narrative", narrative},   {"alpha", alpha},
                {"found_at", found_at}};
  }

  static DiscrepancyFinding from_json(const Json& j) {
    DiscrepancyFinding f;
    f.system_id = j.at("system_id").get<std::string>();
    f.kind = j.at("kind").get<std::string>();
    f.statistic = j.at("statistic").get<double>();
    f.p_value = j.at("p_value").get<double>();
    f.measure_id = j.value("measure_id", "");
    f.compared_reports = j.at("compared_reports").get<std::vector<std::string>>();
    f.narrative = j.value("narrative", "");
    f.alpha = j.value("alpha", 0.0);
    f.found_at = j.at("found_at").get<std::int64_t>();
    return f;
  }
};

// Orchestrates the three audit tiers, compares their reports, and issues
// certificates grounded in automated-audit transcripts.
class AuditEngine {
 public:
  AuditEngine(Registry& registry, Config cfg)
      : reg_(registry), store_(registry.store()), cfg_(cfg) {}

  const Config& config() const { return cfg_; }

  // --- internal audits (self-reported) ---
  //
  // submission: {"measures": {id: {"value": v|null, "sample_size": n}},
  //              "explanations": [...], "global_explanation": {...}}
  // The engine never trusts these numbers beyond using them as comparison
  // inputs.
  AuditReport ingest_internal_audit(const std::string& system_id, const Json& submission,
                                    const std::string& fold_ref) {
    const SystemRecord sys = reg_.require_system(system_id);
    const DeploymentType dt = reg_.require_deployment_type(sys.deployment_type_id);
    if (!load_public_fold(store_, fold_ref)) {
      if (sealed_fold_exists(store_, fold_ref))
        throw Error("airgapped_fold", "internal audits must cite a public fold: " + fold_ref);
      throw Error("unknown_fold", "fold not found: " + fold_ref);
    }

    if (!submission.contains("measures") || !submission.at("measures").is_object())
      throw Error("bad_submission", "submission lacks a measures object");
    std::vector<std::string> offenders;
    for (const auto& [id, mj] : submission.at("measures").items()) {
      (void)mj;
      if (std::find(dt.measure_set.begin(), dt.measure_set.end(), id) == dt.measure_set.end())
        offenders.push_back(id);
    }
    if (!offenders.empty()) {
      std::string list;
      for (const auto& o : offenders) list += (list.empty() ? "" : ", ") + o;
      throw Error("nonstandard_measure", "measures outside the standardized set: " + list);
    }
    for (const auto& id : dt.measure_set) {
      if (!submission.at("measures").contains(id))
        throw Error("missing_measure", "missing required measure: " + id);
    }

    AuditReport rep;
    rep.system_id = system_id;
    rep.tier = kTierInternal;
    rep.fold_ref = fold_ref;
    for (const auto& id : dt.measure_set) {
      const Json& mj = submission.at("measures").at(id);
      MeasureValue m;
      m.measure_id = id;
      if (mj.contains("value") && !mj.at("value").is_null()) m.value = mj.at("value").get<double>();
      m.undefined_reason = mj.value("undefined_reason", m.value ? "" : "not reported");
      m.polarity = find_measure(id)->polarity;
      m.sample_size = mj.value("sample_size", static_cast<std::int64_t>(0));
      m.provenance = Provenance::Internal;
      rep.measures.push_back(std::move(m));
    }
    if (submission.contains("explanations")) {
      for (const auto& ej : submission.at("explanations"))
        rep.explanations.push_back(InfluenceExplanation::from_json(ej));
    }
    if (submission.contains("global_explanation") &&
        !submission.at("global_explanation").is_null()) {
      rep.global_explanation = GlobalInfluence::from_json(submission.at("global_explanation"));
    }
    rep.submitted_at = now_epoch_seconds();
    rep.report_id = "rep-" + short_digest(system_id + "|internal|" + fold_ref + "|" +
                                          canonical_dump(submission));
    store_report(rep, /*sealed=*/false);
    update_card(sys, dt, rep);
    return rep;
  }

  // --- automated audits (protocol QA session, public fold) ---

  AuditReport run_automated_audit(const std::string& system_id, Connection& conn,
                                  const std::string& fold_ref, std::uint64_t seed) {
    reg_.require_system(system_id);
    return automated_audit_impl(system_id, conn, fold_ref, seed);
  }

  // Inbound variant for the serve endpoint: the audited system is whatever
  // the HELLO names, as long as it is registered.
  AuditReport run_automated_audit_inbound(Connection& conn, const std::string& fold_ref,
                                          std::uint64_t seed) {
    return automated_audit_impl("", conn, fold_ref, seed);
  }

  // --- external audits (protocol QA session, air-gapped fold) ---
  //
  // Full results (explanations included) are sealed; the public registry
  // only ever sees aggregate measures.
  AuditReport run_external_audit(const std::string& system_id, Connection& conn,
                                 const std::string& fold_ref, std::uint64_t seed) {
    const SystemRecord sys = reg_.require_system(system_id);
    const DeploymentType dt = reg_.require_deployment_type(sys.deployment_type_id);
    const FeatureOntology ont = reg_.require_ontology(dt.ontology_id);
    const BenchmarkFold fold = require_sealed_fold(store_, fold_ref);
    if (fold.visibility != Visibility::Airgapped)
      throw Error("bad_fold", "external audits run on air-gapped folds");
    if (dt.ontology_id != fold.ontology_id)
      throw Error("ontology_mismatch", "fold ontology " + fold.ontology_id +
                                           " does not match deployment type " +
                                           dt.deployment_type_id);

    ProtocolRun run = run_protocol_audit(system_id, conn, ont, fold, seed, "external");

    AuditReport full = build_report(system_id, kTierExternal, fold, ont, run);
    for (auto& m : full.measures) m.provenance = Provenance::ExternalSummary;
    store_.put_sealed("reports/" + full.report_id + ".json", full.to_json());

    AuditReport summary = full;
    summary.explanations.clear();
    summary.global_explanation.reset();
    summary.group_performance = Json();
    store_report(summary, /*sealed=*/false);
    update_card(sys, dt, summary);
    return summary;
  }

  // --- discrepancy detection (cross-audit comparisons) ---
  //
  // (1) internal vs automated on the shared public fold: a significant
  // two-sided difference on any proportion measure means the self-reported
  // numbers do not reproduce. (2) automated (public) vs external
  // (air-gapped): a significant one-sided performance drop means the model
  // is tuned to the public benchmark. Bonferroni across the measures
  // compared in each step.
  DiscrepancyFinding detect_discrepancies(const std::optional<AuditReport>& internal,
                                          const std::optional<AuditReport>& automated,
                                          const std::optional<AuditReport>& external,
                                          double alpha) const {
    DiscrepancyFinding f;
    f.alpha = alpha;
    f.found_at = now_epoch_seconds();
    std::string narrative;

    if (internal && automated) {
      if (internal->fold_ref != automated->fold_ref)
        throw Error("fold_mismatch",
                    "internal and automated reports cite different folds: " +
                        internal->fold_ref + " vs " + automated->fold_ref);
      f.system_id = automated->system_id;
      const auto worst = worst_pair(*internal, *automated, /*one_sided_drop=*/false);
      if (worst.compared > 0) {
        narrative += "internal vs automated on " + internal->fold_ref + ": min adjusted p = " +
                     Json(worst.adjusted_p).dump() + " on " + worst.measure_id + ". ";
        if (worst.adjusted_p < alpha) {
          f.kind = kFindingFabricated;
          f.statistic = worst.z;
          f.p_value = worst.adjusted_p;
          f.measure_id = worst.measure_id;
          f.compared_reports = {internal->report_id, automated->report_id};
          f.narrative = narrative +
                        "Self-reported results do not reproduce over the protocol; "
                        "irreproducibility or fabrication.";
          return f;
        }
      } else {
        narrative += "internal vs automated: no comparable proportion measures. ";
      }
      narrative += nonproportion_notes(*internal, *automated);
    } else {
      narrative += "internal/automated comparison unavailable (missing report). ";
    }

    if (automated && external) {
      const auto pub = load_public_fold(store_, automated->fold_ref);
      if (!pub || pub->paired_with != external->fold_ref)
        throw Error("fold_mismatch", "external report does not cite the fold paired with " +
                                         automated->fold_ref);
      f.system_id = automated->system_id;
      const auto worst = worst_pair(*automated, *external, /*one_sided_drop=*/true);
      if (worst.compared > 0) {
        narrative += "automated (public) vs external (air-gapped): min adjusted p = " +
                     Json(worst.adjusted_p).dump() + " on " + worst.measure_id + ". ";
        if (worst.adjusted_p < alpha) {
          f.kind = kFindingAdaptation;
          f.statistic = worst.z;
          f.p_value = worst.adjusted_p;
          f.measure_id = worst.measure_id;
          f.compared_reports = {automated->report_id, external->report_id};
          f.narrative = narrative +
                        "Performance drops significantly on never-seen data; benchmark "
                        "data were likely used in training or the model was adapted to them.";
          return f;
        }
      } else {
        narrative += "automated vs external: no comparable proportion measures. ";
      }
    } else {
      narrative += "automated/external comparison unavailable (missing report). ";
    }

    if (f.system_id.empty()) {
      for (const auto& r : {internal, automated, external}) {
        if (r) {
          f.system_id = r->system_id;
          break;
        }
      }
    }
    f.kind = kFindingNone;
    f.narrative = narrative + "No significant discrepancy.";
    return f;
  }

  // Runs detection over the latest report of each tier, stores the finding,
  // and revokes outstanding certificates when something is flagged.
  DiscrepancyFinding run_findings(const std::string& system_id,
                                  std::optional<double> alpha_override = std::nullopt) {
    SystemRecord sys = reg_.require_system(system_id);
    const auto internal = latest_report(system_id, kTierInternal);
    const auto automated = latest_report(system_id, kTierAutomated);
    const auto external = latest_report(system_id, kTierExternal);
    if (!internal && !automated && !external)
      throw Error("no_reports", "no audit reports stored for " + system_id);

    DiscrepancyFinding f =
        detect_discrepancies(internal, automated, external, alpha_override.value_or(cfg_.alpha));
    f.system_id = system_id;

    Json list = Json::array();
    if (const auto existing = store_.get_json("findings/" + system_id + ".json"))
      list = existing->at("findings");
    list.push_back(f.to_json());
    store_.put_json("findings/" + system_id + ".json",
                    Json{{"system_id", system_id}, {"findings", list}});

    if (f.kind != kFindingNone) {
      bool changed = false;
      for (auto& c : sys.card.certificates) {
        if (c.status == "valid") {
          c.status = "revoked";
          c.revoked_reason = "finding " + f.kind + " on " + f.measure_id;
          changed = true;
        }
      }
      if (changed) reg_.put_system(sys);
    }
    return f;
  }

  std::vector<DiscrepancyFinding> findings_for(const std::string& system_id) const {
    std::vector<DiscrepancyFinding> out;
    if (const auto j = store_.get_json("findings/" + system_id + ".json")) {
      for (const auto& fj : j->at("findings")) out.push_back(DiscrepancyFinding::from_json(fj));
    }
    return out;
  }

  bool has_open_finding(const std::string& system_id) const {
    for (const auto& f : findings_for(system_id)) {
      if (f.kind != kFindingNone) return true;
    }
    return false;
  }

  // --- certificates ---

  Certificate issue_certificate(const std::string& system_id, const std::string& measure_id,
                                std::string claim_template = "") {
    SystemRecord sys = reg_.require_system(system_id);
    if (has_open_finding(system_id)) {
      throw Error("open_finding",
                  "certificate refused: system has an open discrepancy finding");
    }
    const auto rep = latest_report(system_id, kTierAutomated);
    if (!rep) throw Error("no_automated_report", "no automated audit report for " + system_id);
    const MeasureValue* m = rep->find(measure_id);
    if (!m || !m->defined())
      throw Error("measure_absent",
                  "automated report does not carry a defined value for " + measure_id);

    if (claim_template.empty()) {
      claim_template =
          "Automated audit certifies {measure} = {value} ({percentile}) for deployment "
          "type {deployment_type}";
    }
    Certificate cert;
    cert.certificate_id = "cert-" + short_digest(system_id + "|" + measure_id + "|" +
                                                 rep->transcript_hash);
    cert.system_id = system_id;
    cert.deployment_type_id = sys.deployment_type_id;
    cert.claim_template = std::move(claim_template);
    cert.claim_params = {{"measure", find_measure(measure_id)->display_name},
                         {"measure_id", measure_id},
                         {"value", Json(*m->value).dump()},
                         {"percentile", reg_.percentile_label(system_id, measure_id)},
                         {"deployment_type", sys.deployment_type_id},
                         {"fold", rep->fold_ref}};
    cert.issued_at = now_epoch_seconds();
    cert.transcript_hash = rep->transcript_hash;
    cert.status = "valid";

    auto& certs = sys.card.certificates;
    const auto it = std::find_if(certs.begin(), certs.end(), [&](const Certificate& c) {
      return c.certificate_id == cert.certificate_id;
    });
    if (it != certs.end()) {
      *it = cert;
    } else {
      certs.push_back(cert);
    }
    reg_.put_system(sys);
    return cert;
  }

  Certificate revoke_certificate(const std::string& system_id,
                                 const std::string& certificate_id,
                                 const std::string& reason) {
    SystemRecord sys = reg_.require_system(system_id);
    for (auto& c : sys.card.certificates) {
      if (c.certificate_id == certificate_id) {
        c.status = "revoked";
        c.revoked_reason = reason;
        reg_.put_system(sys);
        return c;
      }
    }
    throw Error("unknown_certificate", "certificate not found: " + certificate_id);
  }

  // Recomputes the hash of the stored session transcript backing this
  // certificate and checks it matches.
  bool verify_certificate(const std::string& system_id,
                          const std::string& certificate_id) const {
    const SystemRecord sys = reg_.require_system(system_id);
    const Certificate* cert = nullptr;
    for (const auto& c : sys.card.certificates) {
      if (c.certificate_id == certificate_id) cert = &c;
    }
    if (!cert) throw Error("unknown_certificate", "certificate not found: " + certificate_id);
    for (const auto& f : store_.list_dir("transcripts")) {
      const auto j = store_.get_json("transcripts/" + f);
      if (!j) continue;
      const SessionTranscript t = SessionTranscript::from_json(*j);
      if (t.hash() == cert->transcript_hash) return true;
    }
    return false;
  }

  // --- report access ---

  std::optional<AuditReport> latest_report(const std::string& system_id,
                                           const std::string& tier) const {
    std::optional<AuditReport> best;
    for (const auto& f : store_.list_dir("reports")) {
      const auto j = store_.get_json("reports/" + f);
      if (!j) continue;
      AuditReport r = AuditReport::from_json(*j);
      if (r.system_id != system_id || r.tier != tier) continue;
      if (!best || r.submitted_at > best->submitted_at ||
          (r.submitted_at == best->submitted_at && r.report_id > best->report_id)) {
        best = std::move(r);
      }
    }
    return best;
  }

  std::optional<SessionTranscript> sealed_transcript(const std::string& session_id) const {
    const auto j = store_.get_sealed("transcripts/" + session_id + ".json");
    if (!j) return std::nullopt;
    return SessionTranscript::from_json(*j);
  }

 private:
  struct ProtocolRun {
    SessionTranscript transcript;
    std::vector<ModelAnswer> answers;  // aligned with fold records
    std::vector<InfluenceExplanation> explanations;
  };

  AuditReport automated_audit_impl(const std::string& expected_system, Connection& conn,
                                   const std::string& fold_ref, std::uint64_t seed) {
    const BenchmarkFold fold = require_public_fold(store_, fold_ref);
    const FeatureOntology ont = reg_.require_ontology(fold.ontology_id);

    ProtocolRun run = run_protocol_audit(expected_system, conn, ont, fold, seed, "automated");
    const std::string system_id = run.transcript.system_id;
    const SystemRecord sys = reg_.require_system(system_id);
    const DeploymentType dt = reg_.require_deployment_type(sys.deployment_type_id);
    if (dt.ontology_id != fold.ontology_id)
      throw Error("ontology_mismatch", "fold ontology " + fold.ontology_id +
                                           " does not match deployment type " +
                                           dt.deployment_type_id);

    AuditReport rep = build_report(system_id, kTierAutomated, fold, ont, run);
    store_report(rep, /*sealed=*/false);
    update_card(sys, dt, rep);
    return rep;
  }

  // The shared QA flow for automated and external audits: full fold pass in
  // a seed-shuffled order, then sequential influence queries for the
  // explained records, all within one session and one transcript. An empty
  // expected system accepts any registered system's HELLO.
  ProtocolRun run_protocol_audit(const std::string& system_id, Connection& conn,
                                 const FeatureOntology& ont, const BenchmarkFold& fold,
                                 std::uint64_t seed, const std::string& mode) {
    SessionOptions opts;
    opts.mode = mode;
    opts.batch_size = cfg_.batch_size;
    opts.timeout_ms = cfg_.timeout_ms;
    opts.seed = seed;
    AuditorSession session(conn, ont, fold, reg_.templates_for(ont.ontology_id), opts);

    const bool sealed = mode == "external";
    auto fail = [&](const std::string& why) -> Error {
      SessionTranscript t = session.take_transcript();
      store_transcript(t, sealed, fold, system_id, seed);
      return Error("session_aborted", "audit session aborted: " + why);
    };

    if (!session.open()) throw fail(session.abort_reason());
    if (system_id.empty()) {
      if (!reg_.system(session.client_system_id())) {
        session.abort("unknown_system",
                      "HELLO names an unregistered system: " + session.client_system_id());
        throw fail(session.abort_reason());
      }
    } else if (session.client_system_id() != system_id) {
      session.abort("system_mismatch", "HELLO names " + session.client_system_id() +
                                           ", audit targets " + system_id);
      throw fail(session.abort_reason());
    }

    const auto order = session_row_order(fold, seed);
    std::vector<Record> shuffled;
    shuffled.reserve(order.size());
    for (const std::size_t i : order) shuffled.push_back(fold.records[i]);
    const auto answers = session.query_records(shuffled);
    if (!answers) throw fail(session.abort_reason());

    ProtocolRun run;
    run.answers.resize(fold.records.size());
    for (std::size_t k = 0; k < order.size(); ++k) run.answers[order[k]] = (*answers)[k];

    if (cfg_.influence_records > 0 && cfg_.influence_sample_count > 0) {
      for (const std::size_t idx : explained_record_indices(fold, cfg_)) {
        const std::uint64_t eseed = explanation_seed(seed, idx);
        const auto draws = influence_draws(eseed, ont.features.size(),
                                           cfg_.influence_sample_count, fold.records.size());
        const auto queries = influence_query_plan(fold.records[idx], fold, draws);
        const auto responses = session.query_records(queries);
        if (!responses) throw fail(session.abort_reason());
        std::vector<double> scores;
        scores.reserve(responses->size());
        for (const auto& a : *responses) scores.push_back(answer_score(a, ont.positive_label));
        run.explanations.push_back(influence_from_scores(ont, fold.records[idx], scores,
                                                         cfg_.influence_sample_count,
                                                         fold.ref(), eseed, idx));
      }
    }

    session.finish();
    run.transcript = session.take_transcript();
    store_transcript(run.transcript, sealed, fold, system_id, seed);
    return run;
  }

  void store_transcript(const SessionTranscript& t, bool sealed, const BenchmarkFold& fold,
                        const std::string& system_id, std::uint64_t seed) {
    std::string name = t.session_id;
    if (name.empty()) {
      name = "aborted-" + short_digest(fold.ref() + "|" + system_id + "|" +
                                       std::to_string(seed));
    }
    if (sealed) {
      store_.put_sealed("transcripts/" + name + ".json", t.to_json());
    } else {
      store_.put_json("transcripts/" + name + ".json", t.to_json());
    }
  }

  AuditReport build_report(const std::string& system_id, const std::string& tier,
                           const BenchmarkFold& fold, const FeatureOntology& ont,
                           ProtocolRun& run) {
    std::vector<std::string> decisions;
    decisions.reserve(run.answers.size());
    for (const auto& a : run.answers) decisions.push_back(a.decision);
    const OutcomeTable table = build_outcome_table(ont, fold, decisions);
    auto computed = compute_standard_measures(table, cfg_);

    AuditReport rep;
    rep.system_id = system_id;
    rep.tier = tier;
    rep.fold_ref = fold.ref();
    const Provenance prov =
        tier == kTierAutomated ? Provenance::Automated : Provenance::ExternalSummary;
    for (auto& [id, m] : computed) {
      m.provenance = prov;
      rep.measures.push_back(m);
    }
    std::sort(rep.measures.begin(), rep.measures.end(),
              [](const MeasureValue& a, const MeasureValue& b) {
                return a.measure_id < b.measure_id;
              });
    Json groups = Json::object();
    for (const auto& [g, perf] : group_performance(table, cfg_)) groups[g] = perf.to_json();
    rep.group_performance = groups;
    rep.explanations = std::move(run.explanations);
    if (!rep.explanations.empty()) rep.global_explanation = global_influence(rep.explanations);
    rep.transcript_hash = run.transcript.hash();
    rep.submitted_at = now_epoch_seconds();
    rep.report_id =
        "rep-" + short_digest(system_id + "|" + tier + "|" + fold.ref() + "|" +
                              rep.transcript_hash);
    return rep;
  }

  void store_report(const AuditReport& rep, bool sealed) {
    if (sealed) {
      store_.put_sealed("reports/" + rep.report_id + ".json", rep.to_json());
    } else {
      store_.put_json("reports/" + rep.report_id + ".json", rep.to_json());
    }
  }

  // Card update: only the deployment type's standardized measure set lands
  // on the card, with provenance equal to the producing tier. External
  // summaries never attach explanations.
  void update_card(SystemRecord sys, const DeploymentType& dt, const AuditReport& rep) {
    for (const auto& id : dt.measure_set) {
      if (const MeasureValue* m = rep.find(id)) sys.card.measures[id] = *m;
    }
    if (rep.tier != kTierExternal) {
      if (!rep.explanations.empty()) sys.card.local_explanations = rep.explanations;
      if (rep.global_explanation) sys.card.global_explanation = rep.global_explanation;
    }
    reg_.put_system(sys);
  }

  struct WorstPair {
    int compared = 0;
    double z = 0.0;
    double min_p = 1.0;
    double adjusted_p = 1.0;
    std::string measure_id;
  };

  // Most significant proportion-measure difference between two reports.
  // Two-sided for reproducibility checks; one-sided in the performance-drop
  // direction for public-vs-air-gapped checks.
  WorstPair worst_pair(const AuditReport& a, const AuditReport& b, bool one_sided_drop) const {
    WorstPair out;
    struct Hit {
      double p;
      double z;
      std::string id;
    };
    std::vector<Hit> hits;
    for (const auto& ma : a.measures) {
      const MeasureDef* def = find_measure(ma.measure_id);
      if (!def || !def->proportion || !ma.defined()) continue;
      const MeasureValue* mb = b.find(ma.measure_id);
      if (!mb || !mb->defined()) continue;
      if (ma.sample_size <= 0 || mb->sample_size <= 0) continue;
      const auto xa = static_cast<std::int64_t>(std::llround(*ma.value *
                                                             static_cast<double>(ma.sample_size)));
      const auto xb = static_cast<std::int64_t>(std::llround(*mb->value *
                                                             static_cast<double>(mb->sample_size)));
      const ProportionTest t = two_proportion_z(xa, ma.sample_size, xb, mb->sample_size);
      if (!t.defined) continue;
      double p;
      if (!one_sided_drop) {
        p = t.p_two_sided;
      } else if (def->polarity == Polarity::HigherBetter) {
        p = t.p_one_sided;  // drop: public value above air-gapped value
      } else {
        p = normal_sf(-t.z);  // drop: error-style rate rises on air-gapped data
      }
      hits.push_back({p, t.z, ma.measure_id});
    }
    out.compared = static_cast<int>(hits.size());
    for (const auto& h : hits) {
      if (h.p < out.min_p || out.measure_id.empty()) {
        out.min_p = h.p;
        out.z = h.z;
        out.measure_id = h.id;
      }
    }
    if (out.compared > 0) out.adjusted_p = std::min(1.0, out.min_p * out.compared);
    return out;
  }

  std::string nonproportion_notes(const AuditReport& a, const AuditReport& b) const {
    std::string notes;
    for (const auto& ma : a.measures) {
      const MeasureDef* def = find_measure(ma.measure_id);
      if (!def || def->proportion || !ma.defined()) continue;
      const MeasureValue* mb = b.find(ma.measure_id);
      if (!mb || !mb->defined()) continue;
      const double diff = std::fabs(*ma.value - *mb->value);
      if (diff > cfg_.nonproportion_tolerance) {
        notes += "Warning: " + ma.measure_id + " differs by " + Json(diff).dump() +
                 " between reports (no principled test; review manually). ";
      }
    }
    return notes;
  }

  Registry& reg_;
  Store& store_;
  Config cfg_;
};

}  // namespace aap
