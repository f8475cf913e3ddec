#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "theraloop/config.hpp"
#include "theraloop/consensus.hpp"
#include "theraloop/domain.hpp"
#include "theraloop/evidence.hpp"
#include "theraloop/extraction.hpp"
#include "theraloop/gateway.hpp"
#include "theraloop/memory.hpp"
#include "theraloop/reasoning.hpp"
#include "theraloop/synth.hpp"

namespace theraloop {

class LabelMismatch : public DataError {
 public:
  LabelMismatch(std::vector<std::string> missing, std::vector<std::string> extra);
  const std::vector<std::string>& missing() const { return missing_; }
  const std::vector<std::string>& extra() const { return extra_; }

 private:
  std::vector<std::string> missing_;
  std::vector<std::string> extra_;
};

struct AblationFlags {
  bool disable_multi_expert = false;
  bool disable_sea_mem = false;
  bool disable_evidence = false;

  bool operator==(const AblationFlags&) const = default;
};

struct RunConfig {
  Mode mode = Mode::Deterministic;
  BackendKind backend = BackendKind::Stub;
  RemoteOptions remote;
  GatewayOptions gateway;

  std::filesystem::path prompts_dir = "prompts";
  std::filesystem::path factors_path = "data/factors.v1";
  std::filesystem::path params_path = "data/synth_params.v1.json";
  std::filesystem::path corpus_dir = "data/corpus";
  std::filesystem::path index_path = "build/kb.index.json";
  std::filesystem::path memory_path = "build/memory.jsonl";

  int k = 5;
  int min_support = 3;
  int top_n = 3;
  ReasonParams reason;
  SimilarityWeights weights;
  AblationFlags ablation;
  std::uint64_t seed = 42;
  int folds = 5;
  int workers = 4;

  // Reads the flat config; unknown keys and out-of-range values are
  // ConfigErrors. The API key comes from THERALOOP_API_KEY.
  static RunConfig from_config(const Config& cfg);
  // Hash over every setting that can change a prediction.
  std::string hash() const;
  json to_json() const;
};

// Paths in `cfg` resolved against `base` when relative and missing locally.
RunConfig resolve_paths(RunConfig cfg, const std::filesystem::path& base);

// Stub handlers for every shipped template. Each is a pure function of the
// rendered prompt: extractors run the rule-based readers over the quoted
// document, the integrator picks the most confident candidate, and the
// reasoner cites every supplied tag with the smoothed case rate.
void install_default_stub_handlers(StubBackend& stub);

// A gateway with all schemas registered. Stub backends get the default
// handlers. Calls are counted through the returned gateway.
std::unique_ptr<Gateway> make_gateway(const RunConfig& cfg);

// Read-only inputs shared by every patient in a run.
struct Stores {
  std::shared_ptr<const MemorySnapshot> memory;
  std::vector<Pattern> patterns;
  const EvidenceIndex* index = nullptr;
  const FactorTable* factors = nullptr;
  Gateway* gateway = nullptr;
  const PromptLibrary* prompts = nullptr;
};

struct PatientResult {
  std::string patient_id;
  UnifiedProfile profile;
  std::vector<Prediction> predictions;
  SuppliedRefs refs;
  std::optional<std::string> failure;  // "<stage>: <message>"
};

// Stages: extraction, integration, memory, evidence, reasoning. A failing
// stage is recorded in `failure` rather than thrown.
PatientResult predict_patient(const PatientRecord& record, const RunConfig& cfg, const Stores& stores);

// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// ---- metrics --------------------------------------------------------------

struct TargetMetrics {
  int n = 0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct TierMetrics {
  Tier tier = Tier::Clear;
  int n = 0;  // patients
  double accuracy = 0.0;  // unweighted mean of the two targets
};

struct Metrics {
  std::array<TargetMetrics, 2> targets;
  double overall_accuracy = 0.0;  // mean of the two targets
  double overall_f1 = 0.0;
  std::vector<TierMetrics> tiers;
  std::optional<double> tier_weighted_accuracy;  // support-weighted over tiers
};

json to_json(const Metrics& m);

// F1 is 0 when there are no predicted and no actual positives.
TargetMetrics target_metrics(int tp, int fp, int tn, int fn);
double overall_mean(double a, double b);
double support_weighted(const std::vector<std::pair<double, int>>& values);

// Every labeled patient must have both targets predicted, and vice versa.
Metrics evaluate(const std::vector<Prediction>& predictions, const LabelMap& labels,
                 const std::map<std::string, Tier>* tiers = nullptr);

// ---- cohort runs ----------------------------------------------------------

int fold_of(std::string_view patient_id, int folds);

struct BootstrapResult {
  CaseMemory memory;
  std::vector<std::string> skipped;  // "<id>: <reason>"
  std::vector<std::string> warnings;
};

// Extracts and integrates every record, stores it with its outcome. Records
// without a label or failing extraction are skipped and listed.
BootstrapResult bootstrap_memory(const std::vector<PatientRecord>& records, const LabelMap& labels,
                                 const RunConfig& cfg, Gateway& gateway, const PromptLibrary& prompts,
                                 const std::optional<std::filesystem::path>& journal = std::nullopt);

struct RunResources {
  const FactorTable* factors = nullptr;
  const EvidenceIndex* index = nullptr;
  const PromptLibrary* prompts = nullptr;
};

struct EvaluationRun {
  AblationFlags flags;
  std::string label;
  std::vector<PatientResult> results;  // patient_id order
  Metrics metrics;
  std::vector<std::string> failures;
  int unresolved_citations = 0;
  std::array<int, 3> citations_by_kind{};  // Profile, Case, Trial
  std::int64_t gateway_calls = 0;
  BackendKind backend = BackendKind::Stub;
};

// k-fold evaluation: memory is bootstrapped from the other folds for each fold
// and the evaluation fold never enters it.
EvaluationRun run_cross_validation(const CohortFiles& cohort, const RunConfig& cfg, const RunResources& res,
                                   const std::map<std::string, Tier>* tiers = nullptr);

struct AblationTable {
  std::vector<EvaluationRun> rows;  // full, w/o multi-expert, w/o memory, w/o evidence, baseline
};

AblationTable run_ablation(const CohortFiles& cohort, const RunConfig& base, const RunResources& res,
                           const std::map<std::string, Tier>* tiers = nullptr);

// Structured report plus a plain-text rendering.
json evaluation_report(const EvaluationRun& run, const RunConfig& cfg);
json ablation_report(const AblationTable& table, const RunConfig& cfg);
std::string render_text(const json& report);

std::map<std::string, Tier> tier_map(const std::vector<LatentPatient>& latents);

}  // namespace theraloop
