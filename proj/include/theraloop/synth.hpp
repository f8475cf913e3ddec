#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "theraloop/domain.hpp"
#include "theraloop/evidence.hpp"

namespace theraloop {

enum class Tier : std::uint8_t { Clear, Ambiguous, Misleading };
inline constexpr std::array<Tier, 3> kTiers{Tier::Clear, Tier::Ambiguous, Tier::Misleading};
std::string_view to_string(Tier t);
std::optional<Tier> parse_tier(std::string_view s);

class CalibrationFailure : public DataError {
 public:
  using DataError::DataError;
};

// mt19937_64 with hand-rolled transforms; std distributions differ across
// standard libraries and would break seed determinism.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double normal();   // Box-Muller, one variate per call
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t categorical(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 of (seed, stream): independent per-candidate streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct ArchetypePair {
  double favorable = 0;
  double unfavorable = 0;
  double get(bool fav) const { return fav ? favorable : unfavorable; }
};

struct LogNormalPair {
  std::array<double, 2> median{};  // favorable, unfavorable
  double sigma = 0;
};

struct NormalPair {
  std::array<double, 2> mean{};
  std::array<double, 2> sd{};
};

// Generator parameter table. Every row in the source file carries a basis of
// "quoted" or "assumed".
struct SynthParams {
  std::array<double, 2> target_rate{};  // cohort marginals; also the rate-factor reference prior
  double favorable_share = 0.5;
  std::array<std::vector<double>, 2> psma;    // high, moderate, low, heterogeneous
  std::array<std::vector<double>, 2> burden;  // low, moderate, high
  std::array<std::vector<double>, 2> ecog;    // 0..4
  ArchetypePair bone, lymph, liver, lung, other_visceral, prior_adt, prior_chemo, second_line;
  std::vector<double> psa_trend;              // rising, stable, falling
  LogNormalPair psa, alp, ldh;
  NormalPair hemoglobin;
  std::array<double, 2> egfr{};               // mean, sd
  std::array<double, 4> suv_median{};         // by PSMA level
  double suv_sigma = 0;
  std::vector<std::pair<std::string, double>> comorbidities;
  std::vector<double> cue_count;              // P(cue count = 0..3)
  double delta = 0.2;
  std::array<double, 2> intercept{};
  json source;

  static SynthParams parse(const json& doc);
  static SynthParams load(const std::filesystem::path& path);
  // The source document with intercepts replaced by the current values.
  json to_json() const;
};

// Content hash of the generator inputs (parameter table and factor table).
std::string params_hash(const SynthParams& params, const FactorTable& factors);

struct LatentPatient {
  std::string patient_id;
  UnifiedProfile true_profile;
  Outcome outcome;
  Tier tier = Tier::Clear;
  int alarming = 0;
  int reassuring = 0;
  int surface_score = 0;  // alarming - reassuring
  std::array<double, 2> model_probability{};
  bool favorable_archetype = false;
  std::uint64_t candidate = 0;
};

void to_json(json& j, const LatentPatient& l);
void from_json(const json& j, LatentPatient& l);

UnifiedProfile sample_profile(Rng& rng, const SynthParams& params, bool favorable);
// Sum of factor effects per target, excluding the intercept.
std::array<double, 2> factor_logits(const UnifiedProfile& profile, const SynthParams& params,
                                    const FactorTable& factors);
std::array<double, 2> outcome_probabilities(const UnifiedProfile& profile, const SynthParams& params,
                                            const FactorTable& factors);
std::pair<Outcome, std::array<double, 2>> assign_outcome(const UnifiedProfile& profile, Rng& rng,
                                                         const SynthParams& params, const FactorTable& factors);

// Outcome direction: +1 both positive, -1 both negative, 0 mixed.
int outcome_direction(const Outcome& o);
Tier classify_tier(const LatentPatient& latent);

// The shipped cue lexicon.
inline constexpr std::array<std::string_view, 3> kAlarmingCues{"innumerable lesions", "extensive",
                                                               "progression despite"};
inline constexpr std::array<std::string_view, 3> kReassuringCues{"stable", "limited", "solitary"};

struct CueCounts {
  int alarming = 0;
  int reassuring = 0;
};
CueCounts count_cues(const PatientRecord& record);

PatientRecord render_documents(const LatentPatient& latent, std::uint64_t seed);

struct TierMix {
  std::array<double, 3> share{0.5, 0.3, 0.2};
};
TierMix parse_mix(std::string_view text);
// Largest-remainder apportionment of n over the mix.
std::array<int, 3> tier_quotas(int n, const TierMix& mix);

struct VerificationResult {
  int checked = 0;
  int recovered = 0;
  std::vector<std::string> failures;
  bool ok() const { return checked == recovered; }
};

struct Cohort {
  std::uint64_t seed = 0;
  TierMix mix;
  std::vector<LatentPatient> latents;
  std::vector<PatientRecord> records;
  LabelMap labels;
  std::uint64_t candidates = 0;
  VerificationResult verification;
  json manifest;
};

// Rejection sampling over per-candidate streams until every tier quota is
// filled. Misleading candidates with fewer than two alarming cues are
// rejected.
std::vector<LatentPatient> assemble_latents(int n, const TierMix& mix, std::uint64_t seed, const SynthParams& params,
                                            const FactorTable& factors, std::uint64_t* candidates = nullptr);

// Deterministic extract + integrate of every rendered record, compared with
// the latent profile.
VerificationResult verify_cohort(const std::vector<LatentPatient>& latents,
                                 const std::vector<PatientRecord>& records);

Cohort generate_cohort(int n, const TierMix& mix, std::uint64_t seed, const SynthParams& params,
                       const FactorTable& factors, bool verify = true);

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

struct CohortFiles {
  std::vector<PatientRecord> records;  // sorted by patient_id
  LabelMap labels;
};
// pet.txt, labs.txt, notes.txt and an optional language.txt; the directory
// name is the patient_id.
PatientRecord read_case(const std::filesystem::path& dir);
// Reads cases/ and labels.tsv only.
CohortFiles read_cohort(const std::filesystem::path& dir);
// Reads the quarantined latent file; empty when absent.
std::vector<LatentPatient> read_latents(const std::filesystem::path& dir);

struct CalibrationResult {
  std::array<double, 2> intercept{};
  std::array<double, 2> achieved{};
  std::uint64_t candidates = 0;
};

// Alternating bisection of the two intercepts against the realised marginals
// of an `accepted`-case assembly (common random numbers across iterations).
CalibrationResult calibrate_intercepts(const SynthParams& params, const FactorTable& factors, std::uint64_t seed,
                                       int accepted = 10000, const TierMix& mix = {}, double tolerance = 0.01);

}  // namespace theraloop
