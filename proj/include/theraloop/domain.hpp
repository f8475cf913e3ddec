#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace theraloop {

using json = nlohmann::json;

// Error taxonomy. The CLI maps these onto exit codes 2 / 3 / 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Tri : std::uint8_t { Unknown, Yes, No };
enum class PsmaLevel : std::uint8_t { Unknown, High, Moderate, Low, Heterogeneous };
enum class TumorBurden : std::uint8_t { Unknown, Low, Moderate, High };
enum class PsaTrend : std::uint8_t { Unknown, Rising, Stable, Falling };

// Generalist is only produced by the single-extractor ablation path.
enum class Expert : std::uint8_t { Radiologist, Biochemist, Oncologist, Generalist };
enum class Target : std::uint8_t { PsaResponse, OsGt12m };

inline constexpr std::array<Target, 2> kTargets{Target::PsaResponse, Target::OsGt12m};
inline constexpr std::array<Expert, 3> kExperts{Expert::Radiologist, Expert::Biochemist,
                                                Expert::Oncologist};

std::string_view to_string(Tri v);
std::string_view to_string(PsmaLevel v);
std::string_view to_string(TumorBurden v);
std::string_view to_string(PsaTrend v);
std::string_view to_string(Expert v);
std::string_view to_string(Target v);

std::optional<Tri> parse_tri(std::string_view s);
std::optional<PsmaLevel> parse_psma(std::string_view s);
std::optional<TumorBurden> parse_burden(std::string_view s);
std::optional<PsaTrend> parse_trend(std::string_view s);
std::optional<Expert> parse_expert(std::string_view s);
std::optional<Target> parse_target(std::string_view s);

struct PatientRecord {
  std::string patient_id;
  std::string pet_report;
  std::string lab_report;
  std::string clinical_notes;
  std::optional<std::string> language_hint;

  bool operator==(const PatientRecord&) const = default;
};

struct RadiologyFeatures {
  PsmaLevel psma_expression = PsmaLevel::Unknown;
  Tri bone_met = Tri::Unknown;
  Tri lymph_met = Tri::Unknown;
  Tri visceral_met = Tri::Unknown;
  Tri liver_met = Tri::Unknown;
  Tri lung_met = Tri::Unknown;
  TumorBurden tumor_burden = TumorBurden::Unknown;
  std::optional<double> suv_max;

  bool operator==(const RadiologyFeatures&) const = default;
};

struct LabFeatures {
  std::optional<double> psa;  // ng/mL
  PsaTrend psa_trend = PsaTrend::Unknown;
  std::optional<double> hemoglobin;  // g/dL
  std::optional<double> alp;         // U/L
  std::optional<double> ldh;         // U/L
  std::optional<double> egfr;        // mL/min/1.73m2

  bool operator==(const LabFeatures&) const = default;
};

struct ClinicalFeatures {
  Tri prior_adt = Tri::Unknown;
  Tri prior_chemo = Tri::Unknown;
  std::optional<int> chemo_lines;
  std::optional<int> ecog;
  // nullopt = not documented; an empty list means "none documented as present".
  std::optional<std::vector<std::string>> comorbidities;

  bool operator==(const ClinicalFeatures&) const = default;
};

using Fragment = std::variant<RadiologyFeatures, LabFeatures, ClinicalFeatures>;

struct ExpertOutput {
  Expert expert = Expert::Radiologist;
  Fragment fragment;
  double confidence = 0.0;
  std::map<std::string, double> field_confidences;
  // Values this expert observed for fields owned by another expert (for
  // example a PSA value quoted in the clinical notes).
  std::map<std::string, json> cross_fields;
  std::string notes;

  bool operator==(const ExpertOutput&) const = default;
};

struct Provenance {
  Expert expert = Expert::Radiologist;
  double confidence = 0.0;

  bool operator==(const Provenance&) const = default;
};

enum class ResolutionRule : std::uint8_t { HigherConfidence, ExpertPrecedence, EvidenceReview };
std::string_view to_string(ResolutionRule r);

struct ConflictCandidate {
  Expert expert = Expert::Radiologist;
  json value;
  double confidence = 0.0;

  bool operator==(const ConflictCandidate&) const = default;
};

struct ConflictNote {
  std::string field;
  std::vector<ConflictCandidate> candidates;
  json resolution;
  ResolutionRule rule = ResolutionRule::HigherConfidence;

  bool operator==(const ConflictNote&) const = default;
};

struct UnifiedProfile {
  std::string patient_id;
  RadiologyFeatures radiology;
  LabFeatures labs;
  ClinicalFeatures clinical;
  std::map<std::string, Provenance> provenance;
  std::vector<ConflictNote> conflicts;

  bool operator==(const UnifiedProfile&) const = default;

  // Feature equality only (ignores id, provenance and conflicts).
  bool same_features(const UnifiedProfile& o) const {
    return radiology == o.radiology && labs == o.labs && clinical == o.clinical;
  }
};

struct Outcome {
  bool psa_response = false;
  bool os_gt_12m = false;

  bool operator==(const Outcome&) const = default;
  bool get(Target t) const { return t == Target::PsaResponse ? psa_response : os_gt_12m; }
};

struct IndexKey {
  PsmaLevel psma_level = PsmaLevel::Unknown;
  Tri liver_met = Tri::Unknown;
  Tri lung_met = Tri::Unknown;
  Tri prior_chemo = Tri::Unknown;

  bool operator==(const IndexKey&) const = default;
  auto operator<=>(const IndexKey&) const = default;
};

IndexKey index_key(const UnifiedProfile& profile);

// ---- field registry -------------------------------------------------------

enum class FieldGroup : std::uint8_t { Imaging, Lab, Clinical };

struct FieldInfo {
  std::string_view name;
  FieldGroup group;
  Expert owner;
};

// The 19 profile fields in alphabetical order.
const std::vector<FieldInfo>& profile_fields();
const FieldInfo* find_field(std::string_view name);

// Unknown is encoded as JSON null. Enum values are lower-case strings.
json get_field(const UnifiedProfile& p, std::string_view name);
void set_field(UnifiedProfile& p, std::string_view name, const json& value);
bool is_unknown(const json& v);

// Fields of a single fragment, as a name -> value map (unknown included).
std::map<std::string, json> fragment_fields(const Fragment& fragment);
void apply_fragment(UnifiedProfile& p, const Fragment& fragment);

Expert fragment_owner(const Fragment& fragment);

// ---- validation -----------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_profile(const UnifiedProfile& profile);
// Every non-unknown field must carry a provenance entry.
ValidationReport validate_provenance(const UnifiedProfile& profile);
ValidationReport validate_record(const PatientRecord& record);
ValidationReport validate_expert_output(const ExpertOutput& out);

// ---- serialization --------------------------------------------------------

void to_json(json& j, const RadiologyFeatures& v);
void from_json(const json& j, RadiologyFeatures& v);
void to_json(json& j, const LabFeatures& v);
void from_json(const json& j, LabFeatures& v);
void to_json(json& j, const ClinicalFeatures& v);
void from_json(const json& j, ClinicalFeatures& v);
void to_json(json& j, const ExpertOutput& v);
void from_json(const json& j, ExpertOutput& v);
void to_json(json& j, const ConflictNote& v);
void from_json(const json& j, ConflictNote& v);
void to_json(json& j, const UnifiedProfile& v);
void from_json(const json& j, UnifiedProfile& v);
void to_json(json& j, const Outcome& v);
void from_json(const json& j, Outcome& v);
void to_json(json& j, const IndexKey& v);
void from_json(const json& j, IndexKey& v);
void to_json(json& j, const PatientRecord& v);
void from_json(const json& j, PatientRecord& v);

// Canonical profile document: a flat object carrying the 19 feature fields
// plus patient_id, provenance and conflicts. Keys are emitted alphabetically.
std::string encode_profile(const UnifiedProfile& p);
UnifiedProfile decode_profile(std::string_view text);

// Outcome labels file: "patient_id<TAB>psa_response<TAB>os_gt_12m" per line,
// with an optional header line.
using LabelMap = std::map<std::string, Outcome>;
LabelMap parse_labels(std::string_view text);
std::string format_labels(const LabelMap& labels);
LabelMap read_labels(const std::string& path);

// Small helpers shared across modules.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace theraloop
