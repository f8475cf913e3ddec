#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "theraloop/pipeline.hpp"

namespace fs = std::filesystem;
using namespace theraloop;

namespace {

struct GlobalOptions {
  std::string config;
  std::string data = THERALOOP_DATA_DIR;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

RunConfig load_run_config(const GlobalOptions& g) {
  Config cfg;
  fs::path path = g.config;
  if (path.empty()) {
    for (const fs::path& candidate : {fs::path("config/theraloop.conf"), fs::path(g.data) / "config/theraloop.conf"}) {
      std::error_code ec;
      if (fs::exists(candidate, ec)) {
        path = candidate;
        break;
      }
    }
  } else if (std::error_code ec; !fs::exists(path, ec)) {
    throw ConfigError("config file not found: " + path.string());
  }
  if (!path.empty()) cfg = Config::load(path.string());
  RunConfig rc = RunConfig::from_config(cfg);
  if (g.mode) {
    auto m = parse_mode(*g.mode);
    if (!m) throw ConfigError("--mode must be deterministic|model, got '" + *g.mode + "'");
    rc.mode = *m;
  }
  if (g.seed) rc.seed = *g.seed;
  return resolve_paths(std::move(rc), g.data);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

EvidenceIndex load_or_ingest_index(const RunConfig& cfg) {
  std::error_code ec;
  if (fs::exists(cfg.index_path, ec)) return EvidenceIndex::load(cfg.index_path);
  IngestReport report;
  auto index = EvidenceIndex::ingest(cfg.corpus_dir, &report);
  for (const auto& s : report.skipped) std::cerr << "warning: skipped " << s << "\n";
  return index;
}

std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- commands -------------------------------------------------------------

struct GenerateOptions {
  int n = 400;
  std::string mix = "0.5,0.3,0.2";
  std::string out;
  bool no_verify = false;
};

int cmd_generate(const GlobalOptions& g, const GenerateOptions& o) {
  const RunConfig cfg = load_run_config(g);
  if (o.n <= 0) throw ConfigError("--n must be positive");
  const auto params = SynthParams::load(cfg.params_path);
  const auto factors = FactorTable::load(cfg.factors_path);
  const Cohort cohort = generate_cohort(o.n, parse_mix(o.mix), cfg.seed, params, factors, !o.no_verify);
  write_cohort(cohort, o.out);
  const auto& m = cohort.manifest;
  std::cout << "wrote " << cohort.records.size() << " cases to " << o.out << "\n"
            << "tiers " << m.at("tier_counts").dump() << "\n"
            << "positives " << m.at("marginals").dump() << "\n"
            << "candidates drawn " << cohort.candidates << "\n";
  if (!o.no_verify) {
    const auto& v = cohort.verification;
    std::cout << "verification " << v.recovered << "/" << v.checked << " recovered\n";
    if (!v.ok()) {
      for (const auto& f : v.failures) std::cerr << "  " << f << "\n";
      throw DataError("rendered documents do not round-trip to the latent profiles");
    }
  }
  return 0;
}

struct CalibrateOptions {
  int accepted = 10000;
  double tolerance = 0.01;
  bool dry_run = false;
};

int cmd_calibrate(const GlobalOptions& g, const CalibrateOptions& o) {
  const RunConfig cfg = load_run_config(g);
  auto params = SynthParams::load(cfg.params_path);
  const auto factors = FactorTable::load(cfg.factors_path);
  const auto r = calibrate_intercepts(params, factors, cfg.seed, o.accepted, {}, o.tolerance);
  std::cout << "intercepts psa_response " << fmt(r.intercept[0], 6) << " os_gt_12m " << fmt(r.intercept[1], 6) << "\n"
            << "achieved " << fmt(r.achieved[0], 4) << " / " << fmt(r.achieved[1], 4) << " over " << o.accepted
            << " cases (" << r.candidates << " candidates)\n";
  if (!o.dry_run) {
    params.intercept = r.intercept;
    write_text_file(cfg.params_path.string(), params.to_json().dump(2) + "\n");
    std::cout << "updated " << cfg.params_path.string() << "\n";
  }
  return 0;
}

int cmd_ingest(const GlobalOptions& g, std::string corpus, std::string out) {
  const RunConfig cfg = load_run_config(g);
  const fs::path corpus_dir = corpus.empty() ? cfg.corpus_dir : fs::path(corpus);
  const fs::path out_path = out.empty() ? cfg.index_path : fs::path(out);
  IngestReport report;
  const auto index = EvidenceIndex::ingest(corpus_dir, &report);
  ensure_parent(out_path);
  index.save(out_path);
  for (const auto& s : report.skipped) std::cerr << "warning: skipped " << s << "\n";
  std::cout << "indexed " << index.docs().size() << " documents, " << index.chunks().size() << " chunks -> "
            << out_path.string() << "\n";
  return 0;
}

void print_stats(const MemorySnapshot& snap, int min_support) {
  std::cout << to_json(memory_stats(snap, min_support)).dump(2) << "\n";
}

int cmd_memory_bootstrap(const GlobalOptions& g, const std::string& cohort_dir, std::string memory, bool force) {
  const RunConfig cfg = load_run_config(g);
  const fs::path journal = memory.empty() ? cfg.memory_path : fs::path(memory);
  std::error_code ec;
  if (fs::exists(journal, ec)) {
    if (!force) throw ConfigError("journal exists: " + journal.string() + " (pass --force to replace it)");
    fs::remove(journal);
  }
  ensure_parent(journal);
  const auto cohort = read_cohort(cohort_dir);
  const auto prompts = PromptLibrary::load(cfg.prompts_dir);
  auto gateway = make_gateway(cfg);
  auto boot = bootstrap_memory(cohort.records, cohort.labels, cfg, *gateway, prompts, journal);
  for (const auto& w : boot.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& s : boot.skipped) std::cerr << "skipped " << s << "\n";
  std::cout << "journal " << journal.string() << "\n";
  print_stats(*boot.memory.snapshot(), cfg.min_support);
  return 0;
}

CaseMemory open_existing(const fs::path& journal) {
  std::error_code ec;
  if (!fs::exists(journal, ec)) throw DataError("memory journal not found: " + journal.string());
  return CaseMemory::open(journal);
}

int cmd_memory_stats(const GlobalOptions& g, std::string memory) {
  const RunConfig cfg = load_run_config(g);
  auto mem = open_existing(memory.empty() ? cfg.memory_path : fs::path(memory));
  print_stats(*mem.snapshot(), cfg.min_support);
  return 0;
}

int cmd_memory_compact(const GlobalOptions& g, std::string memory) {
  const RunConfig cfg = load_run_config(g);
  auto mem = open_existing(memory.empty() ? cfg.memory_path : fs::path(memory));
  mem.compact();
  std::cout << "compacted " << mem.size() << " entries\n";
  return 0;
}

void print_trace(const PatientResult& r) {
  std::cout << "Patient " << r.patient_id << "\n\nProfile\n";
  for (const auto& f : profile_fields()) {
    json v = get_field(r.profile, f.name);
    if (is_unknown(v)) continue;
    std::cout << "  " << f.name << " = " << v.dump();
    if (auto it = r.profile.provenance.find(std::string(f.name)); it != r.profile.provenance.end()) {
      std::cout << "  (" << to_string(it->second.expert) << ", " << fmt(it->second.confidence, 2) << ")";
    }
    std::cout << "\n";
  }
  for (const auto& c : r.profile.conflicts) {
    std::cout << "  conflict on " << c.field << " resolved to " << c.resolution.dump() << " by "
              << to_string(c.rule) << "\n";
  }
  for (const auto& p : r.predictions) {
    std::cout << "\n" << to_string(p.target) << ": " << (p.label ? "yes" : "no") << "  p=" << fmt(p.probability)
              << (p.warning ? "  (insufficient inputs)" : "") << "\n  " << p.rationale << "\n";
    for (const auto& c : p.citations) {
      std::cout << "  [" << citation_tag(c) << "]";
      if (!c.quote.empty()) std::cout << " " << c.quote;
      std::cout << "\n";
    }
  }
}

int cmd_predict(const GlobalOptions& g, const std::string& case_dir, std::string memory, std::string index_path,
                bool as_json) {
  RunConfig cfg = load_run_config(g);
  if (!memory.empty()) cfg.memory_path = memory;
  if (!index_path.empty()) cfg.index_path = index_path;
  const PatientRecord record = read_case(case_dir);
  std::error_code ec;
  CaseMemory mem = fs::exists(cfg.memory_path, ec) ? CaseMemory::open(cfg.memory_path) : CaseMemory{};
  if (mem.size() == 0) std::cerr << "warning: memory is empty (" << cfg.memory_path.string() << ")\n";
  const auto index = load_or_ingest_index(cfg);
  const auto factors = FactorTable::load(cfg.factors_path);
  const auto prompts = PromptLibrary::load(cfg.prompts_dir);
  auto gateway = make_gateway(cfg);
  Stores stores;
  stores.memory = mem.snapshot();
  stores.patterns = mine_patterns(*stores.memory, cfg.min_support);
  stores.index = &index;
  stores.factors = &factors;
  stores.gateway = gateway.get();
  stores.prompts = &prompts;
  const PatientResult r = predict_patient(record, cfg, stores);
  if (r.failure) throw DataError(record.patient_id + ": " + *r.failure);
  if (as_json) {
    std::cout << json{{"patient_id", r.patient_id}, {"profile", r.profile}, {"predictions", r.predictions}}.dump(2)
              << "\n";
  } else {
    print_trace(r);
  }
  return 0;
}

struct CohortRunOptions {
  std::string cohort;
  std::optional<int> folds;
  std::optional<int> workers;
  std::string out;
};

struct LoadedCohort {
  RunConfig cfg;
  CohortFiles cohort;
  std::map<std::string, Tier> tiers;
  EvidenceIndex index;
  FactorTable factors;
  PromptLibrary prompts;
};

LoadedCohort load_cohort_run(const GlobalOptions& g, const CohortRunOptions& o) {
  LoadedCohort lc;
  lc.cfg = load_run_config(g);
  if (o.folds) lc.cfg.folds = *o.folds;
  if (o.workers) lc.cfg.workers = *o.workers;
  if (lc.cfg.folds < 2) throw ConfigError("--folds must be >= 2");
  if (lc.cfg.workers < 1) throw ConfigError("--workers must be >= 1");
  lc.cohort = read_cohort(o.cohort);
  lc.tiers = tier_map(read_latents(o.cohort));
  lc.index = load_or_ingest_index(lc.cfg);
  lc.factors = FactorTable::load(lc.cfg.factors_path);
  lc.prompts = PromptLibrary::load(lc.cfg.prompts_dir);
  return lc;
}

void emit_report(const json& report, const std::string& out) {
  if (!out.empty()) {
    ensure_parent(out);
    write_text_file(out, report.dump(2) + "\n");
    write_text_file(fs::path(out).replace_extension(".txt").string(), render_text(report));
  }
  std::cout << render_text(report);
}

int cmd_evaluate(const GlobalOptions& g, const CohortRunOptions& o) {
  auto lc = load_cohort_run(g, o);
  RunResources res{&lc.factors, &lc.index, &lc.prompts};
  const auto run = run_cross_validation(lc.cohort, lc.cfg, res, lc.tiers.empty() ? nullptr : &lc.tiers);
  for (const auto& f : run.failures) std::cerr << "failure: " << f << "\n";
  emit_report(evaluation_report(run, lc.cfg), o.out);
  return 0;
}

int cmd_ablate(const GlobalOptions& g, const CohortRunOptions& o) {
  auto lc = load_cohort_run(g, o);
  RunResources res{&lc.factors, &lc.index, &lc.prompts};
  const auto table = run_ablation(lc.cohort, lc.cfg, res, lc.tiers.empty() ? nullptr : &lc.tiers);
  for (const auto& row : table.rows) {
    for (const auto& f : row.failures) std::cerr << "failure (" << row.label << "): " << f << "\n";
  }
  emit_report(ablation_report(table, lc.cfg), o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"theraloop: multi-expert outcome prediction with case memory and trial evidence"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Config file (default config/theraloop.conf)");
  app.add_option("--data", g.data, "Base directory for relative data paths")->capture_default_str();
  app.add_option("--seed", g.seed, "Seed (overrides config)");
  app.add_option("--mode", g.mode, "deterministic|model");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic cohort");
  generate->add_option("--n", gen.n, "Number of cases")->capture_default_str();
  generate->add_option("--mix", gen.mix, "Clear,Ambiguous,Misleading shares")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_flag("--no-verify", gen.no_verify, "Skip the round-trip verification");

  CalibrateOptions cal;
  auto* calibrate = app.add_subcommand("calibrate", "Fit generator intercepts and store them in the parameter table");
  calibrate->add_option("--accepted", cal.accepted, "Cases per calibration assembly")->capture_default_str();
  calibrate->add_option("--tolerance", cal.tolerance, "Allowed marginal deviation")->capture_default_str();
  calibrate->add_flag("--dry-run", cal.dry_run, "Print the intercepts without writing them");

  std::string corpus, index_out;
  auto* ingest = app.add_subcommand("ingest-kb", "Build the evidence index from a corpus directory");
  ingest->add_option("--corpus", corpus, "Corpus directory (default from config)");
  ingest->add_option("--out", index_out, "Index path (default from config)");

  auto* memory = app.add_subcommand("memory", "Case memory maintenance");
  memory->require_subcommand(1);
  std::string mem_path, boot_cohort;
  bool force = false;
  auto* boot = memory->add_subcommand("bootstrap", "Populate memory from a labeled cohort");
  boot->add_option("--cohort", boot_cohort, "Cohort directory")->required();
  boot->add_option("--memory", mem_path, "Journal path (default from config)");
  boot->add_flag("--force", force, "Replace an existing journal");
  auto* stats = memory->add_subcommand("stats", "Print memory statistics");
  stats->add_option("--memory", mem_path, "Journal path (default from config)");
  auto* compact = memory->add_subcommand("compact", "Rewrite the journal in compacted form");
  compact->add_option("--memory", mem_path, "Journal path (default from config)");

  std::string case_dir, index_path;
  bool as_json = false;
  auto* predict = app.add_subcommand("predict", "Predict both outcomes for one case directory");
  predict->add_option("--case", case_dir, "Directory with pet.txt, labs.txt, notes.txt")->required();
  predict->add_option("--memory", mem_path, "Journal path (default from config)");
  predict->add_option("--index", index_path, "Evidence index (default from config; built from the corpus if absent)");
  predict->add_flag("--json", as_json, "Print JSON instead of the trace");

  CohortRunOptions run;
  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--cohort", run.cohort, "Cohort directory")->required();
    cmd->add_option("--folds", run.folds, "Cross-validation folds (default from config)");
    cmd->add_option("--workers", run.workers, "Concurrent patients (default from config)");
    cmd->add_option("--out", run.out, "Write the JSON report here and its text rendering beside it");
  };
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validated evaluation on a labeled cohort");
  add_run_options(evaluate);
  auto* ablate = app.add_subcommand("ablate", "Full system against the component ablations");
  add_run_options(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) return cmd_generate(g, gen);
    if (*calibrate) return cmd_calibrate(g, cal);
    if (*ingest) return cmd_ingest(g, corpus, index_out);
    if (*boot) return cmd_memory_bootstrap(g, boot_cohort, mem_path, force);
    if (*stats) return cmd_memory_stats(g, mem_path);
    if (*compact) return cmd_memory_compact(g, mem_path);
    if (*predict) return cmd_predict(g, case_dir, mem_path, index_path, as_json);
    if (*evaluate) return cmd_evaluate(g, run);
    if (*ablate) return cmd_ablate(g, run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const GatewayError& e) {
    std::cerr << "gateway error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
