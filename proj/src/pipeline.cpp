#include "theraloop/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <set>
#include <sstream>
#include <thread>

#include "theraloop/text.hpp"

namespace theraloop {

namespace {

std::string join(const std::vector<std::string>& items, std::size_t limit = 10) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) out += (i ? ", " : "") + items[i];
  if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
  return out;
}

}  // namespace

LabelMismatch::LabelMismatch(std::vector<std::string> missing, std::vector<std::string> extra)
    : DataError("predictions and labels disagree; missing predictions: [" + join(missing) + "], unlabeled: [" +
                join(extra) + "]"),
      missing_(std::move(missing)),
      extra_(std::move(extra)) {}

// ---- configuration --------------------------------------------------------

namespace {

const std::set<std::string, std::less<>> kKnownKeys{
    "gateway.backend", "gateway.endpoint", "gateway.model",      "gateway.retries", "gateway.max_inflight",
    "gateway.call_budget", "gateway.timeout_ms", "mode",          "prompts.dir",     "factors.path",
    "synth.params",    "corpus.dir",       "index.path",         "memory.path",     "memory.k",
    "memory.min_support", "evidence.top_n", "reason.lambda",     "reason.delta",    "eval.folds",
    "eval.workers",    "seed",
};

int positive_int(const Config& cfg, std::string_view key, long long fallback, long long min = 1) {
  const long long v = cfg.get_int(key, fallback);
  if (v < min || v > 1'000'000) {
    throw ConfigError("config key " + std::string(key) + " must be >= " + std::to_string(min));
  }
  return static_cast<int>(v);
}

}  // namespace

RunConfig RunConfig::from_config(const Config& cfg) {
  for (const auto& [k, v] : cfg.values()) {
    if (!kKnownKeys.contains(k) && !text::starts_with(k, "sim.")) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig rc;
  const std::string backend = cfg.get_string("gateway.backend", "stub");
  if (backend == "stub") rc.backend = BackendKind::Stub;
  else if (backend == "remote") rc.backend = BackendKind::Remote;
  else throw ConfigError("gateway.backend must be remote|stub, got '" + backend + "'");
  rc.remote.endpoint = cfg.get_string("gateway.endpoint", "");
  rc.remote.model = cfg.get_string("gateway.model", "");
  rc.remote.max_inflight = positive_int(cfg, "gateway.max_inflight", 4);
  rc.remote.timeout_ms = positive_int(cfg, "gateway.timeout_ms", 30000);
  if (const char* key = std::getenv("THERALOOP_API_KEY")) rc.remote.api_key = key;
  rc.gateway.retries = positive_int(cfg, "gateway.retries", 3);
  rc.gateway.call_budget = cfg.get_int("gateway.call_budget", rc.gateway.call_budget);
  if (rc.gateway.call_budget < 0) throw ConfigError("gateway.call_budget must be >= 0");

  const std::string mode = cfg.get_string("mode", "deterministic");
  auto m = parse_mode(mode);
  if (!m) throw ConfigError("mode must be deterministic|model, got '" + mode + "'");
  rc.mode = *m;

  rc.prompts_dir = cfg.get_string("prompts.dir", rc.prompts_dir.string());
  rc.factors_path = cfg.get_string("factors.path", rc.factors_path.string());
  rc.params_path = cfg.get_string("synth.params", rc.params_path.string());
  rc.corpus_dir = cfg.get_string("corpus.dir", rc.corpus_dir.string());
  rc.index_path = cfg.get_string("index.path", rc.index_path.string());
  rc.memory_path = cfg.get_string("memory.path", rc.memory_path.string());

  rc.k = positive_int(cfg, "memory.k", rc.k);
  rc.min_support = positive_int(cfg, "memory.min_support", rc.min_support);
  rc.top_n = positive_int(cfg, "evidence.top_n", rc.top_n);
  rc.reason.lambda = cfg.get_double("reason.lambda", rc.reason.lambda);
  rc.reason.delta = cfg.get_double("reason.delta", rc.reason.delta);
  if (!(rc.reason.lambda >= 0) || !(rc.reason.delta >= 0)) {
    throw ConfigError("reason.lambda and reason.delta must be >= 0");
  }
  rc.weights = SimilarityWeights::from_config(cfg);
  rc.folds = positive_int(cfg, "eval.folds", rc.folds, 2);
  rc.workers = positive_int(cfg, "eval.workers", rc.workers);
  const long long seed = cfg.get_int("seed", static_cast<long long>(rc.seed));
  if (seed < 0) throw ConfigError("seed must be >= 0");
  rc.seed = static_cast<std::uint64_t>(seed);
  return rc;
}

json RunConfig::to_json() const {
  const auto& w = weights;
  return {
      {"mode", to_string(mode)},
      {"backend", to_string(backend)},
      {"endpoint", remote.endpoint},
      {"model", remote.model},
      {"retries", gateway.retries},
      {"call_budget", gateway.call_budget},
      {"k", k},
      {"min_support", min_support},
      {"top_n", top_n},
      {"lambda", reason.lambda},
      {"delta", reason.delta},
      {"weights",
       {{"psma_expression", w.psma_expression}, {"liver_met", w.liver_met}, {"lung_met", w.lung_met},
        {"visceral_met", w.visceral_met}, {"prior_chemo", w.prior_chemo}, {"ecog", w.ecog},
        {"bone_met", w.bone_met}, {"tumor_burden", w.tumor_burden}, {"psa_band", w.psa_band},
        {"alp_band", w.alp_band}, {"hemoglobin_band", w.hemoglobin_band}}},
      {"ablation",
       {{"disable_multi_expert", ablation.disable_multi_expert},
        {"disable_sea_mem", ablation.disable_sea_mem},
        {"disable_evidence", ablation.disable_evidence}}},
      {"seed", seed},
      {"folds", folds},
  };
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

RunConfig resolve_paths(RunConfig cfg, const std::filesystem::path& base) {
  namespace fs = std::filesystem;
  auto fix = [&](fs::path& p) {
    std::error_code ec;
    if (p.is_relative() && !fs::exists(p, ec) && fs::exists(base / p, ec)) p = base / p;
  };
  fix(cfg.prompts_dir);
  fix(cfg.factors_path);
  fix(cfg.params_path);
  fix(cfg.corpus_dir);
  return cfg;
}

// ---- gateway --------------------------------------------------------------

namespace {

std::string between(std::string_view s, std::string_view open, std::string_view close) {
  const auto a = s.find(open);
  if (a == std::string_view::npos) return {};
  const auto start = a + open.size();
  const auto b = s.find(close, start);
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(start, b - start));
}

std::string quoted_document(std::string_view prompt) { return between(prompt, "<<<DOCUMENT\n", "\nDOCUMENT>>>"); }

// "[X:ref] rest" lines of a prompt block.
std::vector<std::pair<std::string, std::string>> tagged_lines(const std::string& block) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(block);
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 4 || line[0] != '[') continue;
    const auto close = line.find(']');
    if (close == std::string::npos) continue;
    out.emplace_back(line.substr(1, close - 1), close + 1 < line.size() ? line.substr(close + 1) : std::string{});
  }
  return out;
}

std::string stub_reasoner(std::string_view prompt) {
  const auto profile = tagged_lines(between(prompt, "<<<PROFILE\n", "PROFILE>>>"));
  const auto cases = tagged_lines(between(prompt, "<<<CASES\n", "CASES>>>"));
  const auto trials = tagged_lines(between(prompt, "<<<TRIALS\n", "TRIALS>>>"));
  json tags = json::array();
  for (const auto* block : {&profile, &cases, &trials}) {
    for (const auto& [tag, rest] : *block) tags.push_back(tag);
  }
  if (tags.empty()) tags.push_back("P:patient_id");
  json preds = json::array();
  for (Target t : kTargets) {
    const std::string key = std::string(to_string(t)) + "=";
    int pos = 0, n = 0;
    for (const auto& [tag, rest] : cases) {
      const auto at = rest.find(key);
      if (at == std::string::npos) continue;
      ++n;
      pos += rest.compare(at + key.size(), 1, "1") == 0 ? 1 : 0;
    }
    const double p = smoothed_rate(pos, n);
    preds.push_back({{"target", to_string(t)},
                     {"label", p >= 0.5},
                     {"probability", p},
                     {"citations", tags},
                     {"rationale", "smoothed case rate " + std::to_string(pos) + "/" + std::to_string(n)}});
  }
  return json{{"predictions", preds}}.dump();
}

std::string stub_integrator(std::string_view prompt) {
  json cands = json::parse(between(prompt, "<<<CANDIDATES\n", "\nCANDIDATES>>>"), nullptr, false);
  std::string field = text::trim(between(prompt, "Field: ", "\n"));
  if (!cands.is_array() || cands.empty()) return "{}";
  const json* best = &cands[0];
  for (const auto& c : cands) {
    if (c.value("confidence", 0.0) > best->value("confidence", 0.0)) best = &c;
  }
  return json{{"field", field}, {"value", best->at("value")}, {"reason", "highest confidence"}}.dump();
}

std::string stub_generalist(std::string_view prompt) {
  PatientRecord r;
  r.patient_id = "stub";
  r.pet_report = between(prompt, "<<<PET\n", "\nPET>>>");
  r.lab_report = between(prompt, "<<<LABS\n", "\nLABS>>>");
  r.clinical_notes = between(prompt, "<<<NOTES\n", "\nNOTES>>>");
  double conf = 0.0;
  UnifiedProfile p = read_combined(r, &conf);
  json fields = json::object();
  for (const auto& f : profile_fields()) {
    json v = get_field(p, f.name);
    if (!is_unknown(v)) fields[std::string(f.name)] = v;
  }
  return json{{"fields", fields}, {"confidence", conf}}.dump();
}

}  // namespace

void install_default_stub_handlers(StubBackend& stub) {
  stub.on(std::string(kRadiologistTemplate), [](std::string_view prompt) {
    return expert_output_to_response(read_radiology(quoted_document(prompt), false)).dump();
  });
  stub.on(std::string(kBiochemistTemplate), [](std::string_view prompt) {
    return expert_output_to_response(read_labs(quoted_document(prompt), false)).dump();
  });
  stub.on(std::string(kOncologistTemplate), [](std::string_view prompt) {
    return expert_output_to_response(read_clinical(quoted_document(prompt), false)).dump();
  });
  stub.on(std::string(kGeneralistTemplate), stub_generalist);
  stub.on(std::string(kIntegratorTemplate), stub_integrator);
  stub.on(std::string(kReasonerTemplate), stub_reasoner);
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg) {
  std::shared_ptr<Backend> backend;
  if (cfg.backend == BackendKind::Remote) {
    if (cfg.remote.endpoint.empty() || cfg.remote.model.empty()) {
      throw ConfigError("remote backend needs gateway.endpoint and gateway.model");
    }
    backend = std::make_shared<RemoteBackend>(cfg.remote);
  } else {
    auto stub = std::make_shared<StubBackend>();
    install_default_stub_handlers(*stub);
    backend = stub;
  }
  auto gw = std::make_unique<Gateway>(backend, cfg.gateway);
  register_extraction_schemas(gw->schemas());
  register_consensus_schemas(gw->schemas());
  register_reasoning_schemas(gw->schemas());
  return gw;
}

// ---- per-patient pipeline -------------------------------------------------

PatientResult predict_patient(const PatientRecord& record, const RunConfig& cfg, const Stores& stores) {
  PatientResult r;
  r.patient_id = record.patient_id;
  const char* stage = "extraction";
  try {
    ExtractionContext ectx;
    ectx.config.mode = cfg.mode;
    ectx.gateway = stores.gateway;
    ectx.prompts = stores.prompts;
    ectx.language_hint = record.language_hint;
    UnifiedProfile profile;
    if (cfg.ablation.disable_multi_expert) {
      profile = extract_combined(record, ectx);
    } else {
      auto ex = extract_all(record, ectx);
      stage = "integration";
      IntegrationContext ictx{cfg.mode, stores.gateway, stores.prompts};
      profile = integrate(record.patient_id, ex.outputs, ictx);
    }
    profile.patient_id = record.patient_id;
    r.profile = profile;

    ReasoningInputs in;
    in.profile = profile;
    stage = "memory";
    auto memory = std::async(std::launch::async, [&]() {
      RetrievalResult rr;
      std::array<std::pair<int, int>, 2> counts{};
      if (cfg.ablation.disable_sea_mem || !stores.memory) return std::make_pair(rr, counts);
      rr = retrieve_similar(*stores.memory, profile, cfg.k, stores.patterns, cfg.weights);
      const MemoryEntry* self = stores.memory->find(record.patient_id);
      for (Target t : kTargets) {
        auto c = stores.memory->counts(t);
        if (self && self->outcome) {
          c.first -= self->outcome->get(t) ? 1 : 0;
          c.second -= 1;
        }
        counts[static_cast<std::size_t>(t)] = c;
      }
      return std::make_pair(rr, counts);
    });
    if (!cfg.ablation.disable_evidence && stores.factors) {
      in.factors = factor_matches(*stores.factors, profile);
      if (stores.index) {
        for (auto& q : build_queries(*stores.factors, profile)) {
          auto chunks = stores.index->retrieve(q.text, cfg.top_n);
          in.evidence.push_back({std::move(q), std::move(chunks)});
        }
      }
    }
    stage = "memory";
    auto [retrieval, counts] = memory.get();
    in.retrieval = std::move(retrieval);
    in.memory_counts = counts;

    stage = "reasoning";
    r.refs = supplied_refs(in);
    if (cfg.mode == Mode::Model) {
      if (!stores.gateway || !stores.prompts) throw ConfigError("Model-mode reasoning requires a gateway and prompts");
      r.predictions = model_predict(in, *stores.gateway, *stores.prompts, cfg.reason);
    } else {
      for (Target t : kTargets) r.predictions.push_back(deterministic_score(in, t, cfg.reason));
    }
  } catch (const std::exception& e) {
    r.predictions.clear();
    r.failure = std::string(stage) + ": " + e.what();
  }
  return r;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---- metrics --------------------------------------------------------------

TargetMetrics target_metrics(int tp, int fp, int tn, int fn) {
  TargetMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.n = tp + fp + tn + fn;
  m.accuracy = m.n ? static_cast<double>(tp + tn) / m.n : 0.0;
  m.f1 = tp ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  return m;
}

double overall_mean(double a, double b) { return (a + b) / 2.0; }

double support_weighted(const std::vector<std::pair<double, int>>& values) {
  double num = 0;
  long long den = 0;
  for (const auto& [v, n] : values) {
    num += v * n;
    den += n;
  }
  return den ? num / static_cast<double>(den) : 0.0;
}

Metrics evaluate(const std::vector<Prediction>& predictions, const LabelMap& labels,
                 const std::map<std::string, Tier>* tiers) {
  std::map<std::string, std::array<std::optional<bool>, 2>> by_patient;
  for (const auto& p : predictions) by_patient[p.patient_id][static_cast<std::size_t>(p.target)] = p.label;
  std::vector<std::string> missing, extra;
  for (const auto& [id, o] : labels) {
    auto it = by_patient.find(id);
    if (it == by_patient.end() || !it->second[0] || !it->second[1]) missing.push_back(id);
  }
  for (const auto& [id, p] : by_patient) {
    if (!labels.contains(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) throw LabelMismatch(std::move(missing), std::move(extra));

  Metrics m;
  std::array<std::array<int, 4>, 2> cm{};  // tp, fp, tn, fn
  std::map<Tier, std::pair<int, int>> tier_counts;  // correct target-predictions, patients
  for (const auto& [id, preds] : by_patient) {
    const Outcome& y = labels.at(id);
    int correct = 0;
    for (Target t : kTargets) {
      const auto ti = static_cast<std::size_t>(t);
      const bool pred = *preds[ti];
      const bool truth = y.get(t);
      correct += pred == truth ? 1 : 0;
      ++cm[ti][pred ? (truth ? 0 : 1) : (truth ? 3 : 2)];
    }
    if (tiers) {
      if (auto it = tiers->find(id); it != tiers->end()) {
        auto& tc = tier_counts[it->second];
        tc.first += correct;
        tc.second += 1;
      }
    }
  }
  for (std::size_t t = 0; t < 2; ++t) m.targets[t] = target_metrics(cm[t][0], cm[t][1], cm[t][2], cm[t][3]);
  m.overall_accuracy = overall_mean(m.targets[0].accuracy, m.targets[1].accuracy);
  m.overall_f1 = overall_mean(m.targets[0].f1, m.targets[1].f1);
  if (tiers) {
    std::vector<std::pair<double, int>> weighted;
    for (Tier t : kTiers) {
      auto it = tier_counts.find(t);
      if (it == tier_counts.end()) continue;
      TierMetrics tm;
      tm.tier = t;
      tm.n = it->second.second;
      tm.accuracy = static_cast<double>(it->second.first) / (2.0 * tm.n);
      m.tiers.push_back(tm);
      weighted.emplace_back(tm.accuracy, tm.n);
    }
    if (!weighted.empty()) m.tier_weighted_accuracy = support_weighted(weighted);
  }
  return m;
}

json to_json(const Metrics& m) {
  json targets = json::object();
  for (Target t : kTargets) {
    const auto& tm = m.targets[static_cast<std::size_t>(t)];
    targets[std::string(to_string(t))] = {{"n", tm.n},          {"accuracy", tm.accuracy}, {"f1", tm.f1},
                                          {"tp", tm.tp},        {"fp", tm.fp},             {"tn", tm.tn},
                                          {"fn", tm.fn}};
  }
  json tiers = json::array();
  for (const auto& t : m.tiers) tiers.push_back({{"tier", to_string(t.tier)}, {"n", t.n}, {"accuracy", t.accuracy}});
  return {{"targets", targets},
          {"overall", {{"accuracy", m.overall_accuracy}, {"f1", m.overall_f1}}},
          {"tiers", tiers},
          {"tier_weighted_accuracy", m.tier_weighted_accuracy ? json(*m.tier_weighted_accuracy) : json(nullptr)}};
}

// ---- cohort runs ----------------------------------------------------------

int fold_of(std::string_view patient_id, int folds) {
  return static_cast<int>(fnv1a64(patient_id) % static_cast<std::uint64_t>(folds));
}

BootstrapResult bootstrap_memory(const std::vector<PatientRecord>& records, const LabelMap& labels,
                                 const RunConfig& cfg, Gateway& gateway, const PromptLibrary& prompts,
                                 const std::optional<std::filesystem::path>& journal) {
  BootstrapResult out{journal ? CaseMemory::open(*journal) : CaseMemory{}, {}, {}};
  if (records.empty()) {
    out.warnings.emplace_back("empty split: memory left empty");
    return out;
  }
  std::vector<std::optional<UnifiedProfile>> profiles(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), cfg.workers, [&](std::size_t i) {
    const auto& rec = records[i];
    if (!labels.contains(rec.patient_id)) {
      errors[i] = rec.patient_id + ": no outcome label";
      return;
    }
    try {
      ExtractionContext ectx;
      ectx.config.mode = cfg.mode;
      ectx.gateway = &gateway;
      ectx.prompts = &prompts;
      ectx.language_hint = rec.language_hint;
      auto ex = extract_all(rec, ectx);
      IntegrationContext ictx{cfg.mode, &gateway, &prompts};
      profiles[i] = integrate(rec.patient_id, ex.outputs, ictx);
    } catch (const std::exception& e) {
      errors[i] = rec.patient_id + ": " + e.what();
    }
  });
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return records[a].patient_id < records[b].patient_id; });
  for (std::size_t i : order) {
    if (!profiles[i]) {
      out.skipped.push_back(errors[i]);
      continue;
    }
    try {
      out.memory.add_case(*profiles[i], labels.at(records[i].patient_id));
    } catch (const DataError& e) {
      out.skipped.push_back(records[i].patient_id + ": " + e.what());
    }
  }
  return out;
}

namespace {

struct FoldMemory {
  std::shared_ptr<const MemorySnapshot> snapshot;
  std::vector<Pattern> patterns;
  std::vector<std::string> skipped;
};

std::vector<FoldMemory> build_fold_memories(const CohortFiles& cohort, const RunConfig& cfg, Gateway& gateway,
                                            const PromptLibrary& prompts) {
  std::vector<FoldMemory> out(static_cast<std::size_t>(cfg.folds));
  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<PatientRecord> train;
    for (const auto& r : cohort.records) {
      if (fold_of(r.patient_id, cfg.folds) != f) train.push_back(r);
    }
    RunConfig full = cfg;
    full.ablation = {};
    auto boot = bootstrap_memory(train, cohort.labels, full, gateway, prompts);
    auto& fm = out[static_cast<std::size_t>(f)];
    fm.snapshot = boot.memory.snapshot();
    fm.patterns = mine_patterns(*fm.snapshot, cfg.min_support);
    fm.skipped = std::move(boot.skipped);
  }
  return out;
}

EvaluationRun evaluate_folds(const CohortFiles& cohort, const RunConfig& cfg, const RunResources& res,
                             const std::vector<FoldMemory>& memories, Gateway& gateway,
                             const std::map<std::string, Tier>* tiers) {
  EvaluationRun run;
  run.flags = cfg.ablation;
  run.backend = gateway.backend_kind();
  const std::int64_t calls_before = gateway.calls_made();
  std::vector<PatientResult> results(cohort.records.size());
  for (int f = 0; f < cfg.folds; ++f) {
    const auto& fm = memories[static_cast<std::size_t>(f)];
    for (const auto& s : fm.skipped) run.failures.push_back("bootstrap fold " + std::to_string(f) + ": " + s);
    Stores stores{fm.snapshot, fm.patterns, res.index, res.factors, &gateway, res.prompts};
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
      if (fold_of(cohort.records[i].patient_id, cfg.folds) == f) members.push_back(i);
    }
    for (std::size_t i : members) {
      if (fm.snapshot->find(cohort.records[i].patient_id)) {
        throw DataError("evaluation patient " + cohort.records[i].patient_id + " is stored in its fold's memory");
      }
    }
    parallel_for(members.size(), cfg.workers, [&](std::size_t j) {
      const auto i = members[j];
      results[i] = predict_patient(cohort.records[i], cfg, stores);
    });
  }
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });

  std::vector<Prediction> preds;
  LabelMap labels;
  for (const auto& r : results) {
    if (r.failure) {
      run.failures.push_back(r.patient_id + ": " + *r.failure);
      continue;
    }
    auto it = cohort.labels.find(r.patient_id);
    if (it == cohort.labels.end()) {
      run.failures.push_back(r.patient_id + ": no outcome label");
      continue;
    }
    labels.emplace(it->first, it->second);
    for (const auto& p : r.predictions) {
      preds.push_back(p);
      run.unresolved_citations += static_cast<int>(validate_citations(p, r.refs).unresolved.size());
      for (const auto& c : p.citations) ++run.citations_by_kind[static_cast<std::size_t>(c.kind)];
    }
  }
  run.metrics = evaluate(preds, labels, tiers);
  run.results = std::move(results);
  run.gateway_calls = gateway.calls_made() - calls_before;
  return run;
}

std::string row_label(const AblationFlags& f) {
  if (f.disable_multi_expert && f.disable_sea_mem && f.disable_evidence) return "baseline (single extractor)";
  if (f.disable_multi_expert) return "w/o multi-expert";
  if (f.disable_sea_mem) return "w/o memory";
  if (f.disable_evidence) return "w/o evidence";
  return "full";
}

}  // namespace

EvaluationRun run_cross_validation(const CohortFiles& cohort, const RunConfig& cfg, const RunResources& res,
                                   const std::map<std::string, Tier>* tiers) {
  if (cohort.records.empty()) throw DataError("cohort has no cases");
  auto gateway = make_gateway(cfg);
  const auto memories = build_fold_memories(cohort, cfg, *gateway, *res.prompts);
  const std::int64_t bootstrap_calls = gateway->calls_made();
  EvaluationRun run = evaluate_folds(cohort, cfg, res, memories, *gateway, tiers);
  run.gateway_calls += bootstrap_calls;
  run.label = row_label(cfg.ablation);
  return run;
}

AblationTable run_ablation(const CohortFiles& cohort, const RunConfig& base, const RunResources& res,
                           const std::map<std::string, Tier>* tiers) {
  if (cohort.records.empty()) throw DataError("cohort has no cases");
  const std::array<AblationFlags, 5> rows{
      AblationFlags{false, false, false},
      AblationFlags{true, false, false},
      AblationFlags{false, true, false},
      AblationFlags{false, false, true},
      AblationFlags{true, true, true},
  };
  auto setup = make_gateway(base);
  const auto memories = build_fold_memories(cohort, base, *setup, *res.prompts);
  AblationTable table;
  for (const auto& flags : rows) {
    RunConfig cfg = base;
    cfg.ablation = flags;
    auto gateway = make_gateway(cfg);
    EvaluationRun run = evaluate_folds(cohort, cfg, res, memories, *gateway, tiers);
    run.label = row_label(flags);
    table.rows.push_back(std::move(run));
  }
  table.rows.front().gateway_calls += setup->calls_made();
  return table;
}

// ---- reports --------------------------------------------------------------

namespace {

json run_summary(const EvaluationRun& run) {
  return {{"label", run.label},
          {"ablation",
           {{"disable_multi_expert", run.flags.disable_multi_expert},
            {"disable_sea_mem", run.flags.disable_sea_mem},
            {"disable_evidence", run.flags.disable_evidence}}},
          {"metrics", to_json(run.metrics)},
          {"patients", run.results.size()},
          {"failures", run.failures},
          {"unresolved_citations", run.unresolved_citations},
          {"citations",
           {{"profile", run.citations_by_kind[0]}, {"case", run.citations_by_kind[1]}, {"trial", run.citations_by_kind[2]}}},
          {"gateway_calls", run.gateway_calls},
          {"backend", to_string(run.backend)}};
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%5.1f", 100.0 * v);
  return buf;
}

void render_metrics(std::ostringstream& o, const json& m) {
  const auto& t = m.at("targets");
  o << "  psa_response  acc " << pct(t.at("psa_response").at("accuracy").get<double>()) << "  f1 "
    << pct(t.at("psa_response").at("f1").get<double>()) << "\n";
  o << "  os_gt_12m     acc " << pct(t.at("os_gt_12m").at("accuracy").get<double>()) << "  f1 "
    << pct(t.at("os_gt_12m").at("f1").get<double>()) << "\n";
  o << "  overall       acc " << pct(m.at("overall").at("accuracy").get<double>()) << "  f1 "
    << pct(m.at("overall").at("f1").get<double>()) << "\n";
  for (const auto& tier : m.at("tiers")) {
    o << "  tier " << tier.at("tier").get<std::string>() << " (n=" << tier.at("n").get<int>() << ")  acc "
      << pct(tier.at("accuracy").get<double>()) << "\n";
  }
  if (!m.at("tier_weighted_accuracy").is_null()) {
    o << "  tiers weighted acc " << pct(m.at("tier_weighted_accuracy").get<double>()) << "\n";
  }
}

}  // namespace

json evaluation_report(const EvaluationRun& run, const RunConfig& cfg) {
  return {{"format", "theraloop-report.v1"},
          {"kind", "evaluation"},
          {"config_hash", cfg.hash()},
          {"config", cfg.to_json()},
          {"run", run_summary(run)}};
}

json ablation_report(const AblationTable& table, const RunConfig& cfg) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    RunConfig row_cfg = cfg;
    row_cfg.ablation = r.flags;
    json s = run_summary(r);
    s["config_hash"] = row_cfg.hash();
    rows.push_back(std::move(s));
  }
  return {{"format", "theraloop-report.v1"},
          {"kind", "ablation"},
          {"config_hash", cfg.hash()},
          {"config", cfg.to_json()},
          {"rows", rows}};
}

std::string render_text(const json& report) {
  std::ostringstream o;
  o << "config " << report.at("config_hash").get<std::string>() << " (mode "
    << report.at("config").at("mode").get<std::string>() << ", folds " << report.at("config").at("folds").get<int>()
    << ")\n";
  auto one = [&](const json& run) {
    o << run.at("label").get<std::string>() << "  [" << run.at("patients").get<std::size_t>() << " patients, "
      << run.at("failures").size() << " failures, " << run.at("gateway_calls").get<std::int64_t>()
      << " gateway calls, " << run.at("unresolved_citations").get<int>() << " unresolved citations]\n";
    render_metrics(o, run.at("metrics"));
    const auto& c = run.at("citations");
    o << "  citations profile " << c.at("profile").get<int>() << " case " << c.at("case").get<int>() << " trial "
      << c.at("trial").get<int>() << "\n";
  };
  if (report.at("kind") == "ablation") {
    o << "\nconfiguration                  psa acc  os acc  overall acc  overall f1\n";
    for (const auto& r : report.at("rows")) {
      const auto& m = r.at("metrics");
      char line[160];
      std::snprintf(line, sizeof line, "%-30s %6s  %6s  %11s  %10s\n", r.at("label").get<std::string>().c_str(),
                    pct(m.at("targets").at("psa_response").at("accuracy").get<double>()).c_str(),
                    pct(m.at("targets").at("os_gt_12m").at("accuracy").get<double>()).c_str(),
                    pct(m.at("overall").at("accuracy").get<double>()).c_str(),
                    pct(m.at("overall").at("f1").get<double>()).c_str());
      o << line;
    }
    o << "\n";
    for (const auto& r : report.at("rows")) one(r);
  } else {
    one(report.at("run"));
  }
  return o.str();
}

std::map<std::string, Tier> tier_map(const std::vector<LatentPatient>& latents) {
  std::map<std::string, Tier> out;
  for (const auto& l : latents) out[l.patient_id] = l.tier;
  return out;
}

}  // namespace theraloop
