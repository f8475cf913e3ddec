#pragma once
// Independent recomputations shared by the unit and acceptance suites. None of
// these call the production code path they are compared against.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>

#include "support.hpp"

namespace theraloop::oracle {

// Small profile space so that patterns and ties are frequent.
inline UnifiedProfile coarse_profile(std::mt19937_64& rng, std::string id) {
  std::uniform_int_distribution<int> psma(0, 2), tri(0, 2), ecog(0, 3);
  UnifiedProfile p;
  p.patient_id = std::move(id);
  p.radiology.psma_expression = static_cast<PsmaLevel>(psma(rng));
  p.radiology.liver_met = static_cast<Tri>(tri(rng));
  p.radiology.lung_met = static_cast<Tri>(tri(rng));
  p.radiology.visceral_met =
      (p.radiology.liver_met == Tri::Yes || p.radiology.lung_met == Tri::Yes) ? Tri::Yes : Tri::No;
  p.clinical.prior_chemo = static_cast<Tri>(tri(rng));
  p.clinical.ecog = ecog(rng);
  return p;
}

inline Outcome random_outcome(std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.5);
  return Outcome{b(rng), b(rng)};
}

inline std::uint8_t key_part(const IndexKey& k, int f) {
  switch (f) {
    case 0: return static_cast<std::uint8_t>(k.psma_level);
    case 1: return static_cast<std::uint8_t>(k.liver_met);
    case 2: return static_cast<std::uint8_t>(k.lung_met);
    default: return static_cast<std::uint8_t>(k.prior_chemo);
  }
}

// Exhaustive enumeration of every predicate and every assignable value.
inline std::vector<Pattern> brute_force_patterns(const MemorySnapshot& snap, int min_support) {
  std::vector<Pattern> out;
  const std::array<std::vector<std::uint8_t>, 4> domains{
      std::vector<std::uint8_t>{1, 2, 3, 4}, {1, 2}, {1, 2}, {1, 2}};
  for (int mask = 1; mask < 16; ++mask) {
    std::array<std::uint8_t, 4> idx{};
    for (;;) {
      IndexKey values;
      for (int f = 0; f < 4; ++f) {
        if (!(mask & (1 << f))) continue;
        const auto v = domains[f][idx[f]];
        if (f == 0) values.psma_level = static_cast<PsmaLevel>(v);
        if (f == 1) values.liver_met = static_cast<Tri>(v);
        if (f == 2) values.lung_met = static_cast<Tri>(v);
        if (f == 3) values.prior_chemo = static_cast<Tri>(v);
      }
      for (Target t : kTargets) {
        int support = 0, positives = 0;
        for (const auto& e : snap.entries) {
          if (!e->outcome) continue;
          bool ok = true;
          for (int f = 0; f < 4 && ok; ++f) {
            if (mask & (1 << f)) ok = key_part(e->key, f) == key_part(values, f);
          }
          if (!ok) continue;
          ++support;
          positives += e->outcome->get(t);
        }
        if (support >= min_support) {
          out.push_back(Pattern{static_cast<std::uint8_t>(mask), values, t, support, positives,
                                static_cast<double>(positives) / support});
        }
      }
      int f = 0;
      for (; f < 4; ++f) {
        if (!(mask & (1 << f))) continue;
        if (++idx[f] < domains[f].size()) break;
        idx[f] = 0;
      }
      if (f == 4) break;
    }
  }
  auto key = [](const Pattern& p) { return std::tuple(p.mask, p.values, p.target); };
  std::sort(out.begin(), out.end(), [&](const Pattern& a, const Pattern& b) { return key(a) < key(b); });
  return out;
}

// Every stored entry except the query itself, sorted by descending similarity
// then insertion order, truncated to k.
inline std::vector<const MemoryEntry*> full_sort_top_k(const MemorySnapshot& snap, const UnifiedProfile& query, int k) {
  std::vector<std::pair<double, const MemoryEntry*>> all;
  for (const auto& e : snap.entries) {
    if (e->entry_id != query.patient_id) all.emplace_back(similarity(query, e->profile), e.get());
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second->added_at < b.second->added_at;
  });
  std::vector<const MemoryEntry*> out;
  for (std::size_t i = 0; i < all.size() && i < static_cast<std::size_t>(k); ++i) out.push_back(all[i].second);
  return out;
}

inline EvidenceDoc make_doc(std::string id, std::string body) {
  return EvidenceDoc{std::move(id), "Title", "SRC", std::move(body)};
}

inline std::string random_text(std::mt19937_64& rng, int words) {
  static const std::vector<std::string> vocab{"psma",  "liver", "survival", "response", "hazard", "ratio",
                                              "bone",  "lung",  "ecog",     "anemia",   "dose",   "trial",
                                              "cycle", "renal", "toxicity", "uptake",   "psa",    "level"};
  std::string s;
  for (int i = 0; i < words; ++i) {
    s += vocab[rng() % vocab.size()];
    s += rng() % 9 == 0 ? ". " : " ";
  }
  return s;
}

inline std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) cur += static_cast<char>(std::tolower(c));
    else if (!cur.empty()) out.push_back(std::exchange(cur, {}));
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Direct BM25 (k1 = 1.2, b = 0.75) over the index's chunks.
inline std::vector<std::pair<std::string, double>> bm25(const EvidenceIndex& idx, std::string_view query, int top_n) {
  const auto& chunks = idx.chunks();
  std::vector<std::vector<std::string>> toks;
  double total = 0;
  for (const auto& c : chunks) {
    toks.push_back(tokens(c.text));
    total += static_cast<double>(toks.back().size());
  }
  const double n = static_cast<double>(chunks.size());
  const double avgdl = total / n;
  const auto qt = tokens(query);
  const std::set<std::string> terms(qt.begin(), qt.end());
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    double score = 0;
    bool hit = false;
    for (const auto& t : terms) {
      const double tf = static_cast<double>(std::count(toks[i].begin(), toks[i].end(), t));
      if (tf == 0) continue;
      hit = true;
      double df = 0;
      for (const auto& d : toks) df += std::find(d.begin(), d.end(), t) != d.end();
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      const double dl = static_cast<double>(toks[i].size());
      score += idf * tf * 2.2 / (tf + 1.2 * (1 - 0.75 + 0.75 * dl / avgdl));
    }
    if (hit) scored.emplace_back(chunks[i].chunk_id, score);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (scored.size() > static_cast<std::size_t>(top_n)) scored.resize(top_n);
  return scored;
}

// Retrieval over a throwaway memory holding `n` copies of the query profile,
// the first `pos` of them positive for both targets.
inline RetrievalResult neighbours(const UnifiedProfile& query, int n, int pos, CaseMemory& mem) {
  for (int i = 0; i < n; ++i) {
    mem.add_case(testing::example_profile("N" + std::to_string(i)), Outcome{i < pos, i < pos});
  }
  return retrieve_similar(*mem.snapshot(), query, n, {});
}

inline PrognosticFactor direction_factor(std::string id, Target t, Direction d) {
  PrognosticFactor f;
  f.factor_id = std::move(id);
  f.field = "ecog";
  f.target = t;
  f.direction = d;
  f.kind = EffectKind::None;
  return f;
}

inline ReasoningInputs random_inputs(std::mt19937_64& rng, CaseMemory& mem) {
  ReasoningInputs in;
  in.profile = testing::random_profile(rng, 0.2, "R");
  for (const auto& f : factor_matches(testing::shipped_factors(), in.profile)) {
    if (rng() % 3 == 0) in.factors.push_back(f);
  }
  const int n = static_cast<int>(rng() % 8);
  if (n > 0) in.retrieval = neighbours(in.profile, n, static_cast<int>(rng() % (n + 1)), mem);
  for (auto& mc : in.memory_counts) {
    mc.second = static_cast<int>(rng() % 60);
    mc.first = mc.second ? static_cast<int>(rng() % (mc.second + 1)) : 0;
  }
  return in;
}

// The scorer's log-odds written out from its definition: smoothed memory
// prior, plus each same-target factor effect, plus the lambda-weighted shift
// toward the smoothed neighbour rate.
inline double expected_logit(const ReasoningInputs& in, Target t, double lambda, double delta) {
  const auto ti = static_cast<std::size_t>(t);
  const double prior = smoothed_rate(in.memory_counts[ti].first, in.memory_counts[ti].second);
  double z = logit(prior);
  for (const auto& f : in.factors) {
    if (f.target == t) z += factor_effect(f, prior, delta);
  }
  if (in.retrieval.labeled > 0) {
    z += lambda * (logit(smoothed_rate(in.retrieval.positives[ti], in.retrieval.labeled)) - logit(prior));
  }
  return z;
}

}  // namespace theraloop::oracle
