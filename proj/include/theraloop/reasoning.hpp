#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "theraloop/domain.hpp"
#include "theraloop/evidence.hpp"
#include "theraloop/extraction.hpp"
#include "theraloop/gateway.hpp"
#include "theraloop/memory.hpp"

namespace theraloop {

enum class CitationKind { Profile, Case, Trial };
std::string_view to_string(CitationKind k);

struct Citation {
  CitationKind kind = CitationKind::Profile;
  std::string ref;
  std::string quote;

  bool operator==(const Citation&) const = default;
};

struct Prediction {
  std::string patient_id;
  Target target = Target::PsaResponse;
  bool label = false;
  double probability = 0.5;
  std::vector<Citation> citations;
  std::string rationale;
  Mode mode = Mode::Deterministic;
  bool warning = false;  // inputs were insufficient; probability is the 0.5 fallback
  int attempts = 1;
};

void to_json(json& j, const Prediction& p);
void from_json(const json& j, Prediction& p);

struct ReasonParams {
  double lambda = 1.0;
  double delta = 0.2;
};

struct EvidenceHit {
  Query query;
  std::vector<ScoredChunk> chunks;
};

// Everything a prediction may draw on. memory_counts holds {positives,
// labeled} per target over the memory, excluding the query patient.
struct ReasoningInputs {
  UnifiedProfile profile;
  RetrievalResult retrieval;
  std::vector<PrognosticFactor> factors;
  std::vector<EvidenceHit> evidence;
  std::array<std::pair<int, int>, 2> memory_counts{};
};

double logit(double p);
double sigmoid(double z);

// (positives + 1) / (n + 2); 0.5 when n = 0.
double smoothed_rate(int positives, int n);

// Log-odds contribution of one factor toward its own target. Rate effects are
// taken relative to `prior` and never point against the factor's direction.
double factor_effect(const PrognosticFactor& f, double prior, double delta);

Prediction deterministic_score(const ReasoningInputs& in, Target target, const ReasonParams& params = {});

struct SuppliedRefs {
  std::set<std::string> profile;
  std::set<std::string> cases;
  std::set<std::string> trials;
};
SuppliedRefs supplied_refs(const ReasoningInputs& in);

struct CitationReport {
  std::vector<std::string> unresolved;
  std::vector<std::string> violations;
  bool ok() const { return unresolved.empty() && violations.empty(); }
};
CitationReport validate_citations(const Prediction& pred, const SuppliedRefs& refs);

inline constexpr std::string_view kReasonerTemplate = "reasoner.v1.txt";
inline constexpr std::string_view kReasonerSchema = "reasoning.v1";
void register_reasoning_schemas(SchemaRegistry& registry);

// Reference tags used in the synthesis prompt: P:<field>, C:<entry_id>,
// T:<factor_id> or T:<chunk_id>.
std::string citation_tag(const Citation& c);
std::optional<Citation> parse_citation_tag(std::string_view tag);

std::string render_reasoner_prompt(const ReasoningInputs& in, const PromptLibrary& prompts);

// One prediction per target. A schema failure or a second citation failure
// falls back to deterministic_score (mode recorded as Deterministic).
std::vector<Prediction> model_predict(const ReasoningInputs& in, Gateway& gateway, const PromptLibrary& prompts,
                                      const ReasonParams& params = {});

}  // namespace theraloop
