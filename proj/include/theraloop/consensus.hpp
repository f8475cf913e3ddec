#pragma once

#include <span>
#include <string>

#include "theraloop/domain.hpp"
#include "theraloop/extraction.hpp"
#include "theraloop/gateway.hpp"

namespace theraloop {

class ArityError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr std::string_view kIntegratorTemplate = "integrator.v1.txt";
inline constexpr std::string_view kAdjudicationSchema = "adjudication.v1";

void register_consensus_schemas(SchemaRegistry& registry);

struct IntegrationContext {
  Mode mode = Mode::Deterministic;
  Gateway* gateway = nullptr;
  const PromptLibrary* prompts = nullptr;
};

// Position of `expert` in the tie-break order for a field group (0 wins).
// Imaging: Radiologist, Biochemist, Oncologist. Lab: Biochemist, Oncologist,
// Radiologist. Clinical: Oncologist, Biochemist, Radiologist.
int precedence_rank(FieldGroup group, Expert expert);

// Merges exactly one output per expert role. Candidates for a field are the
// owner's fragment value plus any cross-field observation from other experts;
// unknown values never compete.
UnifiedProfile integrate(const std::string& patient_id, std::span<const ExpertOutput> outputs,
                         const IntegrationContext& ctx = {});

// Arithmetic mean of provenance confidences over known fields; 0 if none.
double overall_confidence(const UnifiedProfile& profile);

}  // namespace theraloop
