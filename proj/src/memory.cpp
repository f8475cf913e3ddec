#include "theraloop/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace theraloop {

void to_json(json& j, const MemoryEntry& e) {
  j = {{"entry_id", e.entry_id},
       {"added_at", e.added_at},
       {"profile", e.profile},
       {"outcome", e.outcome ? json(*e.outcome) : json(nullptr)}};
}

void from_json(const json& j, MemoryEntry& e) {
  e.entry_id = j.at("entry_id").get<std::string>();
  e.added_at = j.at("added_at").get<std::uint64_t>();
  e.profile = j.at("profile").get<UnifiedProfile>();
  e.outcome.reset();
  if (j.contains("outcome") && !j.at("outcome").is_null()) e.outcome = j.at("outcome").get<Outcome>();
  e.key = index_key(e.profile);
}

// ---- predicates -----------------------------------------------------------

bool key_field_known(const IndexKey& k, int field) {
  switch (field) {
    case 0: return k.psma_level != PsmaLevel::Unknown;
    case 1: return k.liver_met != Tri::Unknown;
    case 2: return k.lung_met != Tri::Unknown;
    default: return k.prior_chemo != Tri::Unknown;
  }
}

namespace {

bool key_field_equal(const IndexKey& a, const IndexKey& b, int field) {
  switch (field) {
    case 0: return a.psma_level == b.psma_level;
    case 1: return a.liver_met == b.liver_met;
    case 2: return a.lung_met == b.lung_met;
    default: return a.prior_chemo == b.prior_chemo;
  }
}

constexpr std::array<std::string_view, kIndexFields> kKeyNames{"psma_expression", "liver_met", "lung_met",
                                                               "prior_chemo"};

std::string key_field_value(const IndexKey& k, int field) {
  switch (field) {
    case 0: return std::string(to_string(k.psma_level));
    case 1: return std::string(to_string(k.liver_met));
    case 2: return std::string(to_string(k.lung_met));
    default: return std::string(to_string(k.prior_chemo));
  }
}

}  // namespace

bool predicate_matches(std::uint8_t mask, const IndexKey& values, const IndexKey& key) {
  if (mask == 0) return false;
  for (int f = 0; f < kIndexFields; ++f) {
    if (!(mask & (1u << f))) continue;
    if (!key_field_known(key, f) || !key_field_equal(values, key, f)) return false;
  }
  return true;
}

IndexKey project_key(const IndexKey& k, std::uint8_t mask) {
  IndexKey out;
  if (mask & 1u) out.psma_level = k.psma_level;
  if (mask & 2u) out.liver_met = k.liver_met;
  if (mask & 4u) out.lung_met = k.lung_met;
  if (mask & 8u) out.prior_chemo = k.prior_chemo;
  return out;
}

std::string Pattern::describe() const {
  std::string out;
  for (int f = 0; f < kIndexFields; ++f) {
    if (!(mask & (1u << f))) continue;
    if (!out.empty()) out += " & ";
    out += std::string(kKeyNames[f]) + "=" + key_field_value(values, f);
  }
  return out;
}

void to_json(json& j, const Pattern& p) {
  json pred = json::object();
  for (int f = 0; f < kIndexFields; ++f) {
    if (p.mask & (1u << f)) pred[std::string(kKeyNames[f])] = key_field_value(p.values, f);
  }
  j = {{"predicate", pred},
       {"target", to_string(p.target)},
       {"support", p.support},
       {"positives", p.positives},
       {"rate", p.rate}};
}

// ---- similarity -----------------------------------------------------------

double SimilarityWeights::total() const {
  return psma_expression + liver_met + lung_met + visceral_met + prior_chemo + ecog + bone_met + tumor_burden +
         psa_band + alp_band + hemoglobin_band;
}

SimilarityWeights SimilarityWeights::from_config(const Config& cfg) {
  SimilarityWeights w;
  const std::map<std::string, double*, std::less<>> slots{
      {"sim.psma_expression", &w.psma_expression}, {"sim.liver_met", &w.liver_met},
      {"sim.lung_met", &w.lung_met},               {"sim.visceral_met", &w.visceral_met},
      {"sim.prior_chemo", &w.prior_chemo},         {"sim.ecog", &w.ecog},
      {"sim.bone_met", &w.bone_met},               {"sim.tumor_burden", &w.tumor_burden},
      {"sim.psa_band", &w.psa_band},               {"sim.alp_band", &w.alp_band},
      {"sim.hemoglobin_band", &w.hemoglobin_band},
  };
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind("sim.", 0) != 0) continue;
    auto it = slots.find(key);
    if (it == slots.end()) throw ConfigError("unknown similarity weight: " + key);
    *it->second = cfg.get_double(key, 0.0);
    if (*it->second < 0) throw ConfigError(key + " must be non-negative");
  }
  return w;
}

int psa_band(double psa) { return psa < 10 ? 0 : (psa <= 100 ? 1 : 2); }
int alp_band(double alp) { return alp <= 129 ? 0 : 1; }
int hemoglobin_band(double hb) { return hb < 10 ? 0 : (hb <= 12 ? 1 : 2); }

namespace {

struct Acc {
  double num = 0;
  double den = 0;

  template <typename E>
  void cat(E a, E b, double w) {
    if (a == E::Unknown || b == E::Unknown) return;
    den += w;
    if (a == b) num += w;
  }

  template <typename T, typename F>
  void opt(const std::optional<T>& a, const std::optional<T>& b, double w, F same) {
    if (!a || !b) return;
    den += w;
    if (same(*a, *b)) num += w;
  }
};

}  // namespace

double similarity(const UnifiedProfile& a, const UnifiedProfile& b, const SimilarityWeights& w) {
  Acc acc;
  acc.cat(a.radiology.psma_expression, b.radiology.psma_expression, w.psma_expression);
  acc.cat(a.radiology.liver_met, b.radiology.liver_met, w.liver_met);
  acc.cat(a.radiology.lung_met, b.radiology.lung_met, w.lung_met);
  acc.cat(a.radiology.visceral_met, b.radiology.visceral_met, w.visceral_met);
  acc.cat(a.clinical.prior_chemo, b.clinical.prior_chemo, w.prior_chemo);
  acc.opt(a.clinical.ecog, b.clinical.ecog, w.ecog, [](int x, int y) { return std::abs(x - y) <= 1; });
  acc.cat(a.radiology.bone_met, b.radiology.bone_met, w.bone_met);
  acc.cat(a.radiology.tumor_burden, b.radiology.tumor_burden, w.tumor_burden);
  acc.opt(a.labs.psa, b.labs.psa, w.psa_band, [](double x, double y) { return psa_band(x) == psa_band(y); });
  acc.opt(a.labs.alp, b.labs.alp, w.alp_band, [](double x, double y) { return alp_band(x) == alp_band(y); });
  acc.opt(a.labs.hemoglobin, b.labs.hemoglobin, w.hemoglobin_band,
          [](double x, double y) { return hemoglobin_band(x) == hemoglobin_band(y); });
  return acc.den > 0 ? acc.num / acc.den : 0.0;
}

// ---- snapshot queries -----------------------------------------------------

const MemoryEntry* MemorySnapshot::find(std::string_view id) const {
  auto it = by_id.find(id);
  return it == by_id.end() ? nullptr : entries[it->second].get();
}

std::size_t MemorySnapshot::labeled() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e->outcome.has_value(); }));
}

std::pair<int, int> MemorySnapshot::counts(Target t) const {
  int pos = 0, n = 0;
  for (const auto& e : entries) {
    if (!e->outcome) continue;
    ++n;
    pos += e->outcome->get(t) ? 1 : 0;
  }
  return {pos, n};
}

std::optional<double> MemorySnapshot::base_rate(Target t) const {
  auto [pos, n] = counts(t);
  if (n == 0) return std::nullopt;
  return static_cast<double>(pos) / n;
}

std::vector<Pattern> mine_patterns(const MemorySnapshot& snap, int min_support) {
  if (min_support < 1) throw ConfigError("min_support must be >= 1");
  struct Count {
    int support = 0;
    std::array<int, 2> positives{0, 0};
  };
  std::map<std::pair<std::uint8_t, IndexKey>, Count> counts;
  for (const auto& e : snap.entries) {
    if (!e->outcome) continue;
    for (std::uint8_t mask = 1; mask < (1u << kIndexFields); ++mask) {
      bool known = true;
      for (int f = 0; f < kIndexFields; ++f) {
        if ((mask & (1u << f)) && !key_field_known(e->key, f)) known = false;
      }
      if (!known) continue;
      Count& c = counts[{mask, project_key(e->key, mask)}];
      ++c.support;
      for (Target t : kTargets) c.positives[static_cast<std::size_t>(t)] += e->outcome->get(t) ? 1 : 0;
    }
  }
  std::vector<Pattern> out;
  for (const auto& [k, c] : counts) {
    if (c.support < min_support) continue;
    for (Target t : kTargets) {
      const int pos = c.positives[static_cast<std::size_t>(t)];
      out.push_back({k.first, k.second, t, c.support, pos, static_cast<double>(pos) / c.support});
    }
  }
  return out;
}

RetrievalResult retrieve_similar(const MemorySnapshot& snap, const UnifiedProfile& query, int k,
                                 const std::vector<Pattern>& patterns, const SimilarityWeights& w) {
  if (k < 1) throw ConfigError("retrieval k must be >= 1");
  RetrievalResult r;
  std::vector<ScoredCase> scored;
  scored.reserve(snap.entries.size());
  for (const auto& e : snap.entries) {
    if (!query.patient_id.empty() && e->entry_id == query.patient_id) continue;
    scored.push_back({e, similarity(query, e->profile, w)});
  }
  const auto cmp = [](const ScoredCase& a, const ScoredCase& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry->added_at < b.entry->added_at;
  };
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), cmp);
  scored.resize(keep);
  r.cases = std::move(scored);

  for (const auto& c : r.cases) {
    if (!c.entry->outcome) continue;
    ++r.labeled;
    for (Target t : kTargets) r.positives[static_cast<std::size_t>(t)] += c.entry->outcome->get(t) ? 1 : 0;
  }
  if (r.labeled > 0) {
    for (Target t : kTargets) {
      const auto i = static_cast<std::size_t>(t);
      r.p_case[i] = static_cast<double>(r.positives[i]) / r.labeled;
    }
  }
  const IndexKey qk = index_key(query);
  for (const auto& p : patterns) {
    if (p.matches(qk)) r.matched_patterns.push_back(p);
  }
  return r;
}

MemoryStats memory_stats(const MemorySnapshot& snap, int min_support) {
  MemoryStats s;
  s.entries = snap.entries.size();
  s.provisional = snap.provisional();
  s.patterns = mine_patterns(snap, min_support).size();
  for (Target t : kTargets) s.base_rates[static_cast<std::size_t>(t)] = snap.base_rate(t);
  return s;
}

json to_json(const MemoryStats& s) {
  json rates = json::object();
  for (Target t : kTargets) {
    const auto& r = s.base_rates[static_cast<std::size_t>(t)];
    rates[std::string(to_string(t))] = r ? json(*r) : json(nullptr);
  }
  return {{"entries", s.entries}, {"provisional", s.provisional}, {"patterns", s.patterns}, {"base_rates", rates}};
}

// ---- store ----------------------------------------------------------------

CaseMemory::CaseMemory(CaseMemory&& other) noexcept {
  std::lock_guard lock(other.mu_);
  snap_ = std::move(other.snap_);
  other.snap_ = std::make_shared<MemorySnapshot>();
  next_seq_ = other.next_seq_;
  path_ = std::move(other.path_);
}

CaseMemory CaseMemory::open(const std::filesystem::path& path) {
  CaseMemory mem;
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    std::istringstream in(read_text_file(path.string()));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json record = json::parse(line, nullptr, false);
      if (record.is_discarded()) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": journal record is not valid JSON");
      }
      try {
        mem.apply(record);
      } catch (const json::exception& e) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  mem.path_ = path;
  return mem;
}

std::shared_ptr<const MemorySnapshot> CaseMemory::snapshot() const {
  std::lock_guard lock(mu_);
  return snap_;
}

MemoryEntry CaseMemory::add_locked(const UnifiedProfile& profile, std::optional<Outcome> outcome,
                                   std::optional<std::uint64_t> added_at) {
  if (profile.patient_id.empty()) throw DataError("memory entries need a patient_id");
  if (snap_->by_id.contains(profile.patient_id)) throw DuplicatePatient("patient already stored: " + profile.patient_id);
  auto entry = std::make_shared<MemoryEntry>();
  entry->entry_id = profile.patient_id;
  entry->profile = profile;
  entry->outcome = outcome;
  entry->key = index_key(profile);
  entry->added_at = added_at.value_or(next_seq_);
  next_seq_ = std::max(next_seq_, entry->added_at + 1);

  auto next = std::make_shared<MemorySnapshot>(*snap_);
  next->by_id[entry->entry_id] = next->entries.size();
  next->entries.push_back(entry);
  snap_ = std::move(next);
  return *entry;
}

void CaseMemory::apply(const json& record) {
  const std::string op = record.at("op").get<std::string>();
  if (op == "add") {
    MemoryEntry e = record.at("entry").get<MemoryEntry>();
    add_locked(e.profile, e.outcome, e.added_at);
  } else if (op == "update") {
    const std::string id = record.at("patient_id").get<std::string>();
    const Outcome outcome = record.at("outcome").get<Outcome>();
    std::optional<UnifiedProfile> profile;
    if (record.contains("profile")) profile = record.at("profile").get<UnifiedProfile>();
    if (!snap_->by_id.contains(id)) {
      if (!profile) throw UnknownPatient("update for unknown patient: " + id);
      add_locked(*profile, outcome, std::nullopt);
      return;
    }
    auto next = std::make_shared<MemorySnapshot>(*snap_);
    const std::size_t idx = next->by_id.at(id);
    auto updated = std::make_shared<MemoryEntry>(*next->entries[idx]);
    updated->outcome = outcome;
    next->entries[idx] = std::move(updated);
    snap_ = std::move(next);
  } else if (op != "compact") {
    throw DataError("unknown journal op: " + op);
  }
}

void CaseMemory::append(const json& record) {
  if (!path_) return;
  std::ofstream out(*path_, std::ios::app);
  if (!out) throw DataError("cannot append to journal " + path_->string());
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw DataError("write failed for journal " + path_->string());
}

MemoryEntry CaseMemory::add_case(const UnifiedProfile& profile, std::optional<Outcome> outcome) {
  std::lock_guard lock(mu_);
  MemoryEntry e = add_locked(profile, outcome, std::nullopt);
  append({{"op", "add"}, {"entry", e}});
  return e;
}

void CaseMemory::update_with_outcome(const std::string& patient_id, const Outcome& outcome,
                                     const UnifiedProfile* profile) {
  std::lock_guard lock(mu_);
  json record = {{"op", "update"}, {"patient_id", patient_id}, {"outcome", outcome}};
  if (!snap_->by_id.contains(patient_id)) {
    if (!profile) throw UnknownPatient("no stored case and no profile for " + patient_id);
    if (profile->patient_id != patient_id) throw DataError("profile patient_id does not match " + patient_id);
    record["profile"] = *profile;
  }
  apply(record);
  append(record);
}

std::string compacted_journal(const MemorySnapshot& snap) {
  std::string out;
  for (const auto& e : snap.entries) out += json{{"op", "add"}, {"entry", *e}}.dump() + "\n";
  out += json{{"op", "compact"}, {"entries", snap.entries.size()}}.dump() + "\n";
  return out;
}

void CaseMemory::compact() {
  std::lock_guard lock(mu_);
  if (!path_) return;
  const auto tmp = std::filesystem::path(path_->string() + ".tmp");
  write_text_file(tmp.string(), compacted_journal(*snap_));
  std::filesystem::rename(tmp, *path_);
}

}  // namespace theraloop
