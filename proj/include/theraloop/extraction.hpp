#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "theraloop/domain.hpp"
#include "theraloop/gateway.hpp"

namespace theraloop {

enum class Mode { Model, Deterministic };
std::string_view to_string(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct ExtractionConfig {
  Mode mode = Mode::Deterministic;
  // Attempt extraction even when the record's language hint is not English.
  bool language_fallback = true;
};

// Raised in Deterministic mode when a template sentinel is present but the
// template grammar does not resolve every field it promises.
class DeterministicParseError : public std::runtime_error {
 public:
  DeterministicParseError(Expert expert, std::vector<std::string> unresolved);
  Expert expert() const { return expert_; }
  const std::vector<std::string>& unresolved() const { return unresolved_; }

 private:
  Expert expert_;
  std::vector<std::string> unresolved_;
};

// Template sentinel written as the first line of every generated document,
// e.g. "%% theraloop-synth v1 pet".
inline constexpr std::string_view kSentinelPrefix = "%% theraloop-synth v1 ";
bool has_sentinel(std::string_view document);

// Versioned prompt templates. template_id is the file name.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::filesystem::path& dir);
  void add(std::string template_id, std::string body);
  const std::string& get(std::string_view template_id) const;
  bool has(std::string_view template_id) const;

  // Substitutes every {{name}} slot.
  std::string render(std::string_view template_id, const std::map<std::string, std::string>& slots) const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

inline constexpr std::string_view kRadiologistTemplate = "radiologist.v1.txt";
inline constexpr std::string_view kBiochemistTemplate = "biochemist.v1.txt";
inline constexpr std::string_view kOncologistTemplate = "oncologist.v1.txt";
inline constexpr std::string_view kGeneralistTemplate = "generalist.v1.txt";

inline constexpr std::string_view kRadiologySchema = "radiology.v1";
inline constexpr std::string_view kLabsSchema = "labs.v1";
inline constexpr std::string_view kClinicalSchema = "clinical.v1";
inline constexpr std::string_view kGeneralistSchema = "generalist.v1";

// Registers the expert-output response schemas on a gateway registry.
void register_extraction_schemas(SchemaRegistry& registry);

// Rule-based readers. `strict` turns unresolved promised fields into a
// DeterministicParseError; otherwise they stay unknown.
ExpertOutput read_radiology(std::string_view pet_report, bool strict);
ExpertOutput read_labs(std::string_view lab_report, bool strict);
ExpertOutput read_clinical(std::string_view notes, bool strict);

// Single-pass reader over all three documents at once (ablation path). It has
// none of the per-modality grammar: no unit conversion, no negation scoping,
// no anatomical entailment.
UnifiedProfile read_combined(const PatientRecord& record, double* confidence = nullptr);

struct ExtractionContext {
  ExtractionConfig config;
  Gateway* gateway = nullptr;        // required in Model mode
  const PromptLibrary* prompts = nullptr;  // required in Model mode
  std::optional<std::string> language_hint;
};

ExpertOutput extract_radiology(std::string_view pet_report, const ExtractionContext& ctx);
ExpertOutput extract_labs(std::string_view lab_report, const ExtractionContext& ctx);
ExpertOutput extract_clinical(std::string_view notes, const ExtractionContext& ctx);

struct ExpertFailure {
  Expert expert;
  std::string message;
};

struct ExtractionResult {
  // Always Radiologist, Biochemist, Oncologist in that order.
  std::array<ExpertOutput, 3> outputs;
  std::vector<ExpertFailure> failures;
};

// Runs the three experts concurrently. A missing document or a failing expert
// yields an all-unknown fragment at confidence 0 for that expert only.
ExtractionResult extract_all(const PatientRecord& record, const ExtractionContext& ctx);

// The ablation's single combined extractor (one prompt over all documents).
UnifiedProfile extract_combined(const PatientRecord& record, const ExtractionContext& ctx);

ExpertOutput empty_output(Expert expert);

// Parses a model response for the given expert into an ExpertOutput.
ExpertOutput expert_output_from_json(Expert expert, const json& response);
// The inverse, as used by the deterministic stub handlers.
json expert_output_to_response(const ExpertOutput& out);

}  // namespace theraloop
