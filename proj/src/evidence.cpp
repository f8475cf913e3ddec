#include "theraloop/evidence.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <set>

#include "theraloop/text.hpp"

namespace theraloop {

std::vector<EvidenceChunk> chunk_document(const EvidenceDoc& doc, std::size_t chunk_size, std::size_t overlap) {
  if (overlap * 2 >= chunk_size) throw ConfigError("chunk overlap must be less than half the chunk size");
  const std::string& s = doc.body;
  std::vector<EvidenceChunk> out;
  std::size_t start = 0;
  while (true) {
    std::size_t end = s.size();
    if (s.size() - start > chunk_size) {
      end = start + chunk_size;
      for (std::size_t c = end; c >= start + chunk_size / 2; --c) {
        const char prev = s[c - 1];
        if (prev == '.' || prev == '!' || prev == '?' || prev == '\n') {
          end = c;
          break;
        }
      }
    }
    const int ordinal = static_cast<int>(out.size());
    out.push_back({doc.doc_id + "#" + std::to_string(ordinal), doc.doc_id, ordinal, s.substr(start, end - start)});
    if (end == s.size()) break;
    start = end - overlap;
  }
  return out;
}

std::string reconstruct_body(const std::vector<EvidenceChunk>& chunks, std::size_t overlap) {
  std::string out;
  for (std::size_t i = 0; i < chunks.size(); ++i) out += i == 0 ? chunks[i].text : chunks[i].text.substr(overlap);
  return out;
}

std::vector<std::string> index_terms(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

EvidenceDoc parse_evidence_file(const std::string& doc_id, std::string_view content) {
  auto next_line = [&content]() {
    const auto nl = content.find('\n');
    std::string line(content.substr(0, nl));
    content = nl == std::string_view::npos ? std::string_view{} : content.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  const std::string l1 = next_line();
  const std::string l2 = next_line();
  if (!text::starts_with(l1, "title:")) throw DataError("first line must be a 'title:' header");
  if (!text::starts_with(l2, "source:")) throw DataError("second line must be a 'source:' header");
  EvidenceDoc doc;
  doc.doc_id = doc_id;
  doc.title = text::trim(l1.substr(6));
  doc.source_tag = text::trim(l2.substr(7));
  doc.body = text::trim(content);
  if (doc.title.empty() || doc.source_tag.empty()) throw DataError("empty title or source header");
  if (doc.body.empty()) throw DataError("empty body");
  return doc;
}

// ---- index ----------------------------------------------------------------

EvidenceIndex EvidenceIndex::build(std::vector<EvidenceDoc> docs, Bm25Params params) {
  if (docs.empty()) throw EmptyCorpus("evidence corpus has no documents");
  std::sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].doc_id == docs[i - 1].doc_id) throw DataError("duplicate doc_id " + docs[i].doc_id);
  }
  EvidenceIndex idx;
  idx.params_ = params;
  idx.docs_ = std::move(docs);
  for (const auto& d : idx.docs_) {
    auto c = chunk_document(d);
    idx.chunks_.insert(idx.chunks_.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  idx.rebuild_postings();
  return idx;
}

void EvidenceIndex::rebuild_postings() {
  postings_.clear();
  chunk_len_.clear();
  double total = 0;
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    const auto terms = index_terms(chunks_[i].text);
    chunk_len_.push_back(terms.size());
    total += static_cast<double>(terms.size());
    std::map<std::string, int> tf;
    for (const auto& t : terms) ++tf[t];
    for (const auto& [t, n] : tf) postings_[t].emplace_back(i, n);
  }
  avgdl_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
}

EvidenceIndex EvidenceIndex::ingest(const std::filesystem::path& corpus_dir, IngestReport* report) {
  std::error_code ec;
  if (!std::filesystem::is_directory(corpus_dir, ec)) throw DataError("corpus directory not found: " + corpus_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(corpus_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EvidenceDoc> docs;
  for (const auto& f : files) {
    try {
      docs.push_back(parse_evidence_file(f.stem().string(), read_text_file(f.string())));
    } catch (const DataError& e) {
      const std::string msg = f.filename().string() + ": " + e.what();
      std::cerr << "warning: skipping " << msg << '\n';
      if (report) report->skipped.push_back(msg);
    }
  }
  if (docs.empty()) throw EmptyCorpus("no ingestible documents in " + corpus_dir.string());
  return build(std::move(docs));
}

void EvidenceIndex::save(const std::filesystem::path& path) const {
  json j = {{"format", "theraloop-index.v1"},
            {"k1", params_.k1},
            {"b", params_.b},
            {"docs", json::array()},
            {"chunks", json::array()}};
  for (const auto& d : docs_) {
    j["docs"].push_back({{"doc_id", d.doc_id}, {"title", d.title}, {"source", d.source_tag}, {"body", d.body}});
  }
  for (const auto& c : chunks_) {
    j["chunks"].push_back({{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"ordinal", c.ordinal}, {"text", c.text}});
  }
  write_text_file(path.string(), j.dump(1) + "\n");
}

EvidenceIndex EvidenceIndex::load(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path.string()), nullptr, false);
  if (j.is_discarded() || j.value("format", "") != "theraloop-index.v1") {
    throw DataError("not a theraloop index file: " + path.string());
  }
  EvidenceIndex idx;
  try {
    idx.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
    for (const auto& d : j.at("docs")) {
      idx.docs_.push_back({d.at("doc_id"), d.at("title"), d.at("source"), d.at("body")});
    }
    for (const auto& c : j.at("chunks")) {
      idx.chunks_.push_back({c.at("chunk_id"), c.at("doc_id"), c.at("ordinal").get<int>(), c.at("text")});
    }
  } catch (const json::exception& e) {
    throw DataError("malformed index file " + path.string() + ": " + e.what());
  }
  if (idx.docs_.empty()) throw EmptyCorpus("index has no documents: " + path.string());
  idx.rebuild_postings();
  return idx;
}

const EvidenceChunk* EvidenceIndex::find_chunk(std::string_view chunk_id) const {
  for (const auto& c : chunks_) {
    if (c.chunk_id == chunk_id) return &c;
  }
  return nullptr;
}

const EvidenceDoc* EvidenceIndex::find_doc(std::string_view doc_id) const {
  for (const auto& d : docs_) {
    if (d.doc_id == doc_id) return &d;
  }
  return nullptr;
}

int EvidenceIndex::doc_freq(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
}

std::vector<ScoredChunk> EvidenceIndex::retrieve(std::string_view query, int top_n) const {
  if (top_n < 1) throw ConfigError("evidence top_n must be >= 1");
  std::vector<std::string> terms;
  for (auto& t : index_terms(query)) {
    if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(std::move(t));
  }
  const double n = static_cast<double>(chunks_.size());
  std::map<std::size_t, double> scores;
  for (const auto& t : terms) {
    auto it = postings_.find(t);
    if (it == postings_.end()) continue;
    const double df = static_cast<double>(it->second.size());
    const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    for (const auto& [chunk, tf] : it->second) {
      const double dl = static_cast<double>(chunk_len_[chunk]);
      const double norm = params_.k1 * (1.0 - params_.b + params_.b * dl / avgdl_);
      scores[chunk] += idf * (tf * (params_.k1 + 1.0)) / (tf + norm);
    }
  }
  std::vector<std::pair<std::size_t, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [this](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return chunks_[a.first].chunk_id < chunks_[b.first].chunk_id;
  });
  if (ranked.size() > static_cast<std::size_t>(top_n)) ranked.resize(static_cast<std::size_t>(top_n));
  std::vector<ScoredChunk> out;
  for (const auto& [i, s] : ranked) {
    const auto& c = chunks_[i];
    const auto* d = find_doc(c.doc_id);
    out.push_back({c.chunk_id, c.doc_id, d ? d->source_tag : std::string{}, c.text, s});
  }
  return out;
}

// ---- factors --------------------------------------------------------------

std::string_view to_string(Direction d) { return d == Direction::Favorable ? "favorable" : "unfavorable"; }

std::string_view to_string(EffectKind k) {
  switch (k) {
    case EffectKind::ResponseRate: return "response_rate";
    case EffectKind::HazardRatio: return "hazard_ratio";
    default: return "none";
  }
}

namespace {

constexpr std::array<std::pair<std::string_view, CompareOp>, 5> kOps{{
    {"eq", CompareOp::Eq}, {"ge", CompareOp::Ge}, {"gt", CompareOp::Gt}, {"lt", CompareOp::Lt}, {"le", CompareOp::Le}}};

std::string_view op_name(CompareOp op) {
  for (const auto& [n, o] : kOps) {
    if (o == op) return n;
  }
  return "eq";
}

std::string_view op_symbol(CompareOp op) {
  switch (op) {
    case CompareOp::Ge: return ">=";
    case CompareOp::Gt: return ">";
    case CompareOp::Lt: return "<";
    case CompareOp::Le: return "<=";
    default: return "=";
  }
}

}  // namespace

bool PrognosticFactor::matches(const UnifiedProfile& p) const {
  const json v = get_field(p, field);
  if (is_unknown(v)) return false;
  if (op == CompareOp::Eq) return v == value;
  if (!v.is_number() || !value.is_number()) return false;
  const double x = v.get<double>();
  const double t = value.get<double>();
  switch (op) {
    case CompareOp::Ge: return x >= t;
    case CompareOp::Gt: return x > t;
    case CompareOp::Lt: return x < t;
    case CompareOp::Le: return x <= t;
    default: return false;
  }
}

std::string PrognosticFactor::condition() const {
  const std::string v = value.is_string() ? value.get<std::string>() : value.dump();
  return field + std::string(op_symbol(op)) + v;
}

void to_json(json& j, const PrognosticFactor& f) {
  j = {{"factor_id", f.factor_id},
       {"field", f.field},
       {"op", op_name(f.op)},
       {"value", f.value},
       {"target", to_string(f.target)},
       {"direction", to_string(f.direction)},
       {"effect", {{"kind", to_string(f.kind)}, {"value", f.kind == EffectKind::None ? json(nullptr) : json(f.effect)}}},
       {"citation", {{"source", f.source}, {"locator", f.locator}}},
       {"query", f.query},
       {"basis", f.basis}};
}

FactorTable FactorTable::parse(const json& doc) {
  if (!doc.is_object() || !doc.contains("factors") || !doc.at("factors").is_array()) {
    throw DataError("factor table must be an object with a 'factors' array");
  }
  FactorTable table;
  std::set<std::string> ids;
  for (const auto& row : doc.at("factors")) {
    PrognosticFactor f;
    const std::string where = "factor " + row.value("factor_id", std::string("?")) + ": ";
    try {
      f.factor_id = row.at("factor_id").get<std::string>();
      f.field = row.at("field").get<std::string>();
      const std::string op = row.at("op").get<std::string>();
      bool op_ok = false;
      for (const auto& [n, o] : kOps) {
        if (n == op) {
          f.op = o;
          op_ok = true;
        }
      }
      if (!op_ok) throw DataError("unknown op '" + op + "'");
      f.value = row.at("value");
      auto target = parse_target(row.at("target").get<std::string>());
      if (!target) throw DataError("unknown target");
      f.target = *target;
      const std::string dir = row.at("direction").get<std::string>();
      if (dir != "favorable" && dir != "unfavorable") throw DataError("direction must be favorable|unfavorable");
      f.direction = dir == "favorable" ? Direction::Favorable : Direction::Unfavorable;
      const json& eff = row.at("effect");
      const std::string kind = eff.at("kind").get<std::string>();
      if (kind == "response_rate") f.kind = EffectKind::ResponseRate;
      else if (kind == "hazard_ratio") f.kind = EffectKind::HazardRatio;
      else if (kind == "none") f.kind = EffectKind::None;
      else throw DataError("unknown effect kind '" + kind + "'");
      if (f.kind != EffectKind::None) f.effect = eff.at("value").get<double>();
      f.source = row.at("citation").at("source").get<std::string>();
      f.locator = row.at("citation").at("locator").get<std::string>();
      f.query = row.at("query").get<std::string>();
      f.basis = row.at("basis").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    const FieldInfo* info = find_field(f.field);
    if (!info) throw DataError("factor " + f.factor_id + ": unknown profile field '" + f.field + "'");
    UnifiedProfile probe;
    try {
      set_field(probe, f.field, f.value);
    } catch (const DataError& e) {
      throw DataError("factor " + f.factor_id + ": value does not fit field " + f.field + ": " + e.what());
    }
    if (f.op != CompareOp::Eq && !f.value.is_number()) {
      throw DataError("factor " + f.factor_id + ": ordered comparison needs a numeric value");
    }
    if (f.kind == EffectKind::HazardRatio) {
      if (!(f.effect > 0)) throw DataError("factor " + f.factor_id + ": hazard ratio must be > 0");
      if (f.target != Target::OsGt12m) throw DataError("factor " + f.factor_id + ": hazard ratios apply to OS only");
      if ((f.direction == Direction::Favorable) != (f.effect < 1)) {
        throw DataError("factor " + f.factor_id + ": hazard ratio disagrees with direction");
      }
    }
    if (f.kind == EffectKind::ResponseRate && !(f.effect > 0 && f.effect < 1)) {
      throw DataError("factor " + f.factor_id + ": response rate must lie in (0,1)");
    }
    if (f.basis != "quoted" && f.basis != "direction-only") {
      throw DataError("factor " + f.factor_id + ": basis must be quoted|direction-only");
    }
    if ((f.kind == EffectKind::None) != (f.basis == "direction-only")) {
      throw DataError("factor " + f.factor_id + ": direction-only rows carry no magnitude");
    }
    if (!ids.insert(f.factor_id).second) throw DataError("duplicate factor_id " + f.factor_id);
    table.rows_.push_back(std::move(f));
  }
  if (table.rows_.size() != kFactorRows) {
    throw DataError("factor table must have exactly " + std::to_string(kFactorRows) + " rows, found " +
                    std::to_string(table.rows_.size()));
  }
  std::sort(table.rows_.begin(), table.rows_.end(),
            [](const auto& a, const auto& b) { return a.factor_id < b.factor_id; });
  return table;
}

FactorTable FactorTable::load(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path.string()), nullptr, false);
  if (j.is_discarded()) throw DataError("factor table is not valid JSON: " + path.string());
  return parse(j);
}

const PrognosticFactor* FactorTable::find(std::string_view factor_id) const {
  for (const auto& f : rows_) {
    if (f.factor_id == factor_id) return &f;
  }
  return nullptr;
}

std::vector<PrognosticFactor> factor_matches(const FactorTable& table, const UnifiedProfile& profile) {
  std::vector<PrognosticFactor> out;
  for (const auto& f : table.rows()) {
    if (f.matches(profile)) out.push_back(f);
  }
  return out;
}

std::vector<Query> build_queries(const FactorTable& table, const UnifiedProfile& profile) {
  std::vector<Query> out;
  for (const auto& f : table.rows()) {
    if (is_unknown(get_field(profile, f.field))) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const Query& q) { return q.text == f.query; });
    if (it == out.end()) out.push_back({f.query, {f.factor_id}});
    else it->factor_ids.push_back(f.factor_id);
  }
  return out;
}

}  // namespace theraloop
