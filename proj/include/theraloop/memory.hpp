#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "theraloop/config.hpp"
#include "theraloop/domain.hpp"

namespace theraloop {

class DuplicatePatient : public DataError {
 public:
  using DataError::DataError;
};

class UnknownPatient : public DataError {
 public:
  using DataError::DataError;
};

struct MemoryEntry {
  std::string entry_id;  // the patient_id
  UnifiedProfile profile;
  std::optional<Outcome> outcome;  // nullopt while provisional
  IndexKey key;
  std::uint64_t added_at = 0;

  bool operator==(const MemoryEntry&) const = default;
};

void to_json(json& j, const MemoryEntry& e);
void from_json(const json& j, MemoryEntry& e);

// Bit i of a predicate mask selects IndexKey field i in the order
// psma_level, liver_met, lung_met, prior_chemo.
inline constexpr int kIndexFields = 4;
bool key_field_known(const IndexKey& k, int field);
bool predicate_matches(std::uint8_t mask, const IndexKey& values, const IndexKey& key);
// Keeps only the masked fields; the rest become unknown.
IndexKey project_key(const IndexKey& k, std::uint8_t mask);

struct Pattern {
  std::uint8_t mask = 0;
  IndexKey values;
  Target target = Target::PsaResponse;
  int support = 0;
  int positives = 0;
  double rate = 0.0;

  bool operator==(const Pattern&) const = default;
  bool matches(const IndexKey& key) const { return predicate_matches(mask, values, key); }
  std::string describe() const;
};

void to_json(json& j, const Pattern& p);

struct SimilarityWeights {
  double psma_expression = 3;
  double liver_met = 2;
  double lung_met = 2;
  double visceral_met = 2;
  double prior_chemo = 2;
  double ecog = 1;
  double bone_met = 1;
  double tumor_burden = 1;
  double psa_band = 1;
  double alp_band = 1;
  double hemoglobin_band = 1;

  double total() const;
  // Reads `sim.<feature>` keys; unknown `sim.*` keys are a ConfigError.
  static SimilarityWeights from_config(const Config& cfg);
};

// Clinical bands; 0-based band index.
int psa_band(double psa);         // <10, 10-100, >100
int alp_band(double alp);         // <=129, >129
int hemoglobin_band(double hb);   // <10, 10-12, >12

// Weighted match over features known on both sides; 0 when none is.
double similarity(const UnifiedProfile& a, const UnifiedProfile& b, const SimilarityWeights& w = {});

// Immutable view of the store.
struct MemorySnapshot {
  std::vector<std::shared_ptr<const MemoryEntry>> entries;  // in added_at order
  std::map<std::string, std::size_t, std::less<>> by_id;

  const MemoryEntry* find(std::string_view id) const;
  std::size_t labeled() const;
  std::size_t provisional() const { return entries.size() - labeled(); }
  // Positives / labeled entries; nullopt when nothing is labeled.
  std::optional<double> base_rate(Target t) const;
  std::pair<int, int> counts(Target t) const;  // {positives, labeled}
};

// Patterns over labeled entries, sorted by (mask, values, target).
std::vector<Pattern> mine_patterns(const MemorySnapshot& snap, int min_support = 3);

struct ScoredCase {
  std::shared_ptr<const MemoryEntry> entry;
  double similarity = 0.0;
};

struct RetrievalResult {
  std::vector<ScoredCase> cases;
  std::vector<Pattern> matched_patterns;
  // Mean outcome over the retrieved cases that carry an outcome.
  std::array<std::optional<double>, 2> p_case;
  std::array<int, 2> positives{0, 0};
  int labeled = 0;

  std::optional<double> case_rate(Target t) const { return p_case[static_cast<std::size_t>(t)]; }
};

// Top-k by similarity, older entries first on ties. An entry whose id equals
// the query's patient_id is never returned.
RetrievalResult retrieve_similar(const MemorySnapshot& snap, const UnifiedProfile& query, int k,
                                 const std::vector<Pattern>& patterns, const SimilarityWeights& w = {});

struct MemoryStats {
  std::size_t entries = 0;
  std::size_t provisional = 0;
  std::size_t patterns = 0;
  std::array<std::optional<double>, 2> base_rates;
};
MemoryStats memory_stats(const MemorySnapshot& snap, int min_support = 3);
json to_json(const MemoryStats& s);

// Single-writer store with an optional append-only journal. Readers take a
// snapshot and never block the writer.
class CaseMemory {
 public:
  CaseMemory() = default;
  // Replays the journal at `path` if it exists; later mutations append to it.
  static CaseMemory open(const std::filesystem::path& path);

  CaseMemory(CaseMemory&& other) noexcept;
  CaseMemory& operator=(CaseMemory&&) = delete;

  MemoryEntry add_case(const UnifiedProfile& profile, std::optional<Outcome> outcome);
  // Records an outcome. An absent id is added when `profile` is supplied.
  void update_with_outcome(const std::string& patient_id, const Outcome& outcome,
                           const UnifiedProfile* profile = nullptr);
  // Rewrites the journal as one add record per entry plus a compact marker.
  void compact();

  std::shared_ptr<const MemorySnapshot> snapshot() const;
  std::size_t size() const { return snapshot()->entries.size(); }
  const std::optional<std::filesystem::path>& journal_path() const { return path_; }

 private:
  void apply(const json& record);
  void append(const json& record);
  MemoryEntry add_locked(const UnifiedProfile& profile, std::optional<Outcome> outcome,
                         std::optional<std::uint64_t> added_at);

  mutable std::mutex mu_;
  std::shared_ptr<const MemorySnapshot> snap_ = std::make_shared<MemorySnapshot>();
  std::uint64_t next_seq_ = 0;
  std::optional<std::filesystem::path> path_;
};

// Journal text for the current store in compacted form (deterministic).
std::string compacted_journal(const MemorySnapshot& snap);

}  // namespace theraloop
