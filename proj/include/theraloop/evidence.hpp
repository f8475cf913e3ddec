#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "theraloop/domain.hpp"

namespace theraloop {

class EmptyCorpus : public DataError {
 public:
  using DataError::DataError;
};

struct EvidenceDoc {
  std::string doc_id;
  std::string title;
  std::string source_tag;
  std::string body;

  bool operator==(const EvidenceDoc&) const = default;
};

struct EvidenceChunk {
  std::string chunk_id;  // doc_id#ordinal
  std::string doc_id;
  int ordinal = 0;
  std::string text;

  bool operator==(const EvidenceChunk&) const = default;
};

inline constexpr std::size_t kChunkSize = 1200;
inline constexpr std::size_t kChunkOverlap = 200;

// Consecutive chunks share exactly `overlap` characters. A chunk ends at the
// last sentence boundary in its second half when there is one.
std::vector<EvidenceChunk> chunk_document(const EvidenceDoc& doc, std::size_t chunk_size = kChunkSize,
                                          std::size_t overlap = kChunkOverlap);
std::string reconstruct_body(const std::vector<EvidenceChunk>& chunks, std::size_t overlap = kChunkOverlap);

// Lower-cased alphanumeric runs.
std::vector<std::string> index_terms(std::string_view text);

// Parses "title: ...\nsource: ...\n<body>". Throws DataError on a bad header.
EvidenceDoc parse_evidence_file(const std::string& doc_id, std::string_view content);

struct IngestReport {
  std::vector<std::string> skipped;  // "file: reason"
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct ScoredChunk {
  std::string chunk_id;
  std::string doc_id;
  std::string source_tag;
  std::string text;
  double score = 0.0;
};

class EvidenceIndex {
 public:
  static EvidenceIndex build(std::vector<EvidenceDoc> docs, Bm25Params params = {});
  static EvidenceIndex ingest(const std::filesystem::path& corpus_dir, IngestReport* report = nullptr);
  static EvidenceIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Score-descending, chunk_id ascending on ties; only chunks sharing a term.
  std::vector<ScoredChunk> retrieve(std::string_view query, int top_n = 3) const;

  const std::vector<EvidenceDoc>& docs() const { return docs_; }
  const std::vector<EvidenceChunk>& chunks() const { return chunks_; }
  const EvidenceChunk* find_chunk(std::string_view chunk_id) const;
  const EvidenceDoc* find_doc(std::string_view doc_id) const;
  int doc_freq(const std::string& term) const;
  double avg_chunk_len() const { return avgdl_; }
  const Bm25Params& params() const { return params_; }

 private:
  void rebuild_postings();

  std::vector<EvidenceDoc> docs_;
  std::vector<EvidenceChunk> chunks_;
  std::vector<std::size_t> chunk_len_;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, int>>> postings_;  // term -> (chunk, tf)
  double avgdl_ = 0.0;
  Bm25Params params_;
};

// ---- prognostic factor table ---------------------------------------------

enum class Direction { Favorable, Unfavorable };
enum class EffectKind { ResponseRate, HazardRatio, None };
enum class CompareOp { Eq, Ge, Gt, Lt, Le };

struct PrognosticFactor {
  std::string factor_id;
  std::string field;
  CompareOp op = CompareOp::Eq;
  json value;
  Target target = Target::PsaResponse;
  Direction direction = Direction::Favorable;
  EffectKind kind = EffectKind::None;
  double effect = 0.0;
  std::string source;
  std::string locator;
  std::string query;
  std::string basis;  // "quoted" or "direction-only"

  // Unknown fields never match.
  bool matches(const UnifiedProfile& p) const;
  std::string condition() const;  // e.g. "psma_expression=high"
};

std::string_view to_string(Direction d);
std::string_view to_string(EffectKind k);
void to_json(json& j, const PrognosticFactor& f);

inline constexpr std::size_t kFactorRows = 11;

class FactorTable {
 public:
  // Validates closure against the profile schema and effect ranges.
  static FactorTable parse(const json& doc);
  static FactorTable load(const std::filesystem::path& path);

  const std::vector<PrognosticFactor>& rows() const { return rows_; }
  const PrognosticFactor* find(std::string_view factor_id) const;

 private:
  std::vector<PrognosticFactor> rows_;
};

std::vector<PrognosticFactor> factor_matches(const FactorTable& table, const UnifiedProfile& profile);

struct Query {
  std::string text;
  std::vector<std::string> factor_ids;  // rows whose field produced this query
};

// One query per factor row whose field is known, deduplicated by text, in
// factor_id order.
std::vector<Query> build_queries(const FactorTable& table, const UnifiedProfile& profile);

}  // namespace theraloop
