// Runs every acceptance criterion and prints one PASS/FAIL line each. Exits
// with status 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "oracles.hpp"

using namespace theraloop;
using testing::repo_path;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Shared {
  RunConfig cfg;
  std::optional<Cohort> cohort;  // default cohort, seed 42, n = 400
  CohortFiles files;
  std::map<std::string, Tier> tiers;
  std::optional<EvaluationRun> run;
  std::optional<AblationTable> ablation;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RunResources resources() {
  return RunResources{&testing::shipped_factors(), &testing::shipped_index(), &testing::shipped_prompts()};
}

const Cohort& default_cohort(Shared& s) {
  if (!s.cohort) {
    s.cohort = generate_cohort(400, parse_mix("0.5,0.3,0.2"), 42, testing::shipped_params(),
                               testing::shipped_factors(), false);
    s.files.records = s.cohort->records;
    std::sort(s.files.records.begin(), s.files.records.end(),
              [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
    s.files.labels = s.cohort->labels;
    s.tiers = tier_map(s.cohort->latents);
  }
  return *s.cohort;
}

std::pair<int, int> positives(const LabelMap& labels) {
  int psa = 0, os = 0;
  for (const auto& [id, o] : labels) {
    psa += o.psa_response;
    os += o.os_gt_12m;
  }
  return {psa, os};
}

int count_kind(const EvaluationRun& run, CitationKind k) { return run.citations_by_kind[static_cast<std::size_t>(k)]; }

std::optional<double> tier_accuracy(const Metrics& m, Tier t) {
  for (const auto& tm : m.tiers) {
    if (tm.tier == t) return tm.accuracy;
  }
  return std::nullopt;
}

// Accuracy a perfectly informed predictor expects from the generator's own
// outcome probabilities: mean over patients and targets of max(p, 1 - p).
double bayes_accuracy(const std::vector<LatentPatient>& latents, std::optional<Tier> only) {
  double sum = 0;
  int n = 0;
  for (const auto& l : latents) {
    if (only && l.tier != *only) continue;
    for (double p : l.model_probability) sum += std::max(p, 1 - p);
    n += 2;
  }
  return n ? sum / n : 0.0;
}

bool within(double got, double want, double tol) { return std::abs(got - want) <= tol + 1e-9; }

// ---- criteria -------------------------------------------------------------

Verdict metric_arithmetic(Shared&) {
  const double acc = 100 * overall_mean(0.771, 0.743);
  const double f1 = 100 * overall_mean(0.812, 0.829);
  const double tier = 100 * support_weighted({{0.95, 200}, {0.792, 120}, {0.788, 80}});
  const bool ok = within(acc, 75.7, 0.05) && within(f1, 82.1, 0.05) && within(tier, 87.0, 0.05);
  return {ok, fmt("overall acc %.2f, overall F1 %.2f, tier-weighted %.2f", acc, f1, tier)};
}

Verdict stratification(Shared& s) {
  std::array<int, 3> counts{};
  for (const auto& l : default_cohort(s).latents) ++counts[static_cast<std::size_t>(l.tier)];
  return {counts == std::array<int, 3>{200, 120, 80},
          fmt("clear/ambiguous/misleading = %d/%d/%d", counts[0], counts[1], counts[2])};
}

Verdict calibration(Shared& s) {
  const auto [psa, os] = positives(default_cohort(s).labels);
  double psa_sum = 0, os_sum = 0;
  for (std::uint64_t seed = 42; seed < 52; ++seed) {
    const auto c = seed == 42 ? *s.cohort
                              : generate_cohort(400, {}, seed, testing::shipped_params(), testing::shipped_factors(),
                                                false);
    const auto [p, o] = positives(c.labels);
    psa_sum += p;
    os_sum += o;
  }
  const double psa_mean = psa_sum / 10, os_mean = os_sum / 10;
  const bool ok = within(psa, 168, 10) && within(os, 224, 12) && within(psa_mean, 168, 4) && within(os_mean, 224, 4);
  return {ok, fmt("seed 42: PSA %d, OS %d; seeds 42-51 mean: PSA %.1f, OS %.1f", psa, os, psa_mean, os_mean)};
}

Verdict round_trip(Shared& s) {
  const auto& c = default_cohort(s);
  const auto v = verify_cohort(c.latents, c.records);
  return {v.ok() && v.checked == 400, fmt("%d/%d profiles recovered exactly", v.recovered, v.checked)};
}

Verdict sea_mem_oracle(Shared&) {
  std::mt19937_64 rng(2024);
  int mining_bad = 0, retrieval_bad = 0, rate_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    CaseMemory mem;
    const int n = 1 + static_cast<int>(rng() % 50);
    for (int i = 0; i < n; ++i) {
      mem.add_case(oracle::coarse_profile(rng, "P" + std::to_string(i)),
                   rng() % 7 == 0 ? std::nullopt : std::optional<Outcome>(oracle::random_outcome(rng)));
    }
    const auto snap = mem.snapshot();
    const int min_support = 1 + static_cast<int>(rng() % 4);
    const auto patterns = mine_patterns(*snap, min_support);
    mining_bad += patterns != oracle::brute_force_patterns(*snap, min_support);

    const auto query = oracle::coarse_profile(rng, rng() % 2 ? "P0" : "Q");
    const int k = 1 + static_cast<int>(rng() % 7);
    const auto res = retrieve_similar(*snap, query, k, patterns);
    const auto want = oracle::full_sort_top_k(*snap, query, k);
    bool same = res.cases.size() == want.size();
    std::array<int, 2> pos{};
    int labeled = 0;
    for (std::size_t i = 0; same && i < want.size(); ++i) {
      same = res.cases[i].entry.get() == want[i];
      if (want[i]->outcome) {
        ++labeled;
        for (Target t : kTargets) pos[static_cast<std::size_t>(t)] += want[i]->outcome->get(t);
      }
    }
    retrieval_bad += !same;
    for (Target t : kTargets) {
      const auto got = res.case_rate(t);
      const bool ok = labeled == 0 ? !got.has_value()
                                   : got && *got == static_cast<double>(pos[static_cast<std::size_t>(t)]) / labeled;
      rate_bad += !ok;
    }
  }
  // Four of the five nearest neighbours responded.
  CaseMemory mem;
  for (int i = 0; i < 5; ++i) mem.add_case(testing::example_profile("N" + std::to_string(i)), Outcome{i < 4, true});
  const auto fig = retrieve_similar(*mem.snapshot(), testing::example_profile("Q"), 5, {});
  const double p_case = fig.case_rate(Target::PsaResponse).value_or(-1);
  const bool ok = mining_bad == 0 && retrieval_bad == 0 && rate_bad == 0 && p_case == 0.8;
  return {ok, fmt("200 stores: %d mining, %d retrieval, %d rate mismatches; 4/5 neighbours -> %.3f", mining_bad,
                  retrieval_bad, rate_bad, p_case)};
}

Verdict bm25_oracle(Shared&) {
  std::mt19937_64 rng(77);
  int rank_bad = 0;
  double worst = 0;
  std::size_t max_chunks = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvidenceDoc> docs;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int d = 0; d < n; ++d) {
      docs.push_back(oracle::make_doc("doc" + std::to_string(d),
                                      oracle::random_text(rng, 5 + static_cast<int>(rng() % 600))));
    }
    const auto idx = EvidenceIndex::build(docs);
    max_chunks = std::max(max_chunks, idx.chunks().size());
    const std::string query = oracle::random_text(rng, 1 + static_cast<int>(rng() % 5));
    const int top_n = 1 + static_cast<int>(rng() % 6);
    const auto got = idx.retrieve(query, top_n);
    const auto want = oracle::bm25(idx, query, top_n);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) {
      same = got[i].chunk_id == want[i].first;
      worst = std::max(worst, std::abs(got[i].score - want[i].second));
    }
    rank_bad += !same;
  }
  const bool ok = rank_bad == 0 && worst <= 1e-9 && max_chunks <= 100;
  return {ok, fmt("50 pairs (max %zu chunks): %d ranking mismatches, max score error %.2e", max_chunks, rank_bad,
                  worst)};
}

Verdict end_to_end(Shared& s) {
  const auto& c = default_cohort(s);
  s.run = run_cross_validation(s.files, s.cfg, resources(), &s.tiers);
  const auto& m = s.run->metrics;
  const double clear = tier_accuracy(m, Tier::Clear).value_or(0);
  const bool ok = s.run->gateway_calls == 0 && s.run->failures.empty() && clear >= 0.90 && m.overall_accuracy >= 0.80;
  return {ok, fmt("%d gateway calls, %zu failures; clear %.3f (>= 0.90), overall %.3f (>= 0.80); "
                  "generator-oracle expectation: clear %.3f, overall %.3f",
                  s.run->gateway_calls, s.run->failures.size(), clear, m.overall_accuracy,
                  bayes_accuracy(c.latents, Tier::Clear), bayes_accuracy(c.latents, std::nullopt))};
}

Verdict ablation_ordering(Shared& s) {
  default_cohort(s);
  s.ablation = run_ablation(s.files, s.cfg, resources(), &s.tiers);
  const auto& rows = s.ablation->rows;
  const double full = rows.at(0).metrics.overall_accuracy;
  bool ok = true;
  std::ostringstream detail;
  detail << fmt("full %.3f", full);
  for (std::size_t i = 1; i <= 3; ++i) {
    const double a = rows[i].metrics.overall_accuracy;
    ok = ok && full >= a - 0.01;
    detail << fmt("; %s %.3f", rows[i].label.c_str(), a);
  }
  const int mem_cases = count_kind(rows[2], CitationKind::Case);
  const int ev_trials = count_kind(rows[3], CitationKind::Trial);
  const int base_refs = count_kind(rows[4], CitationKind::Case) + count_kind(rows[4], CitationKind::Trial);
  ok = ok && mem_cases == 0 && ev_trials == 0 && base_refs == 0;
  detail << fmt("; disabled-kind citations: memory %d, evidence %d, baseline %d", mem_cases, ev_trials, base_refs);
  return {ok, detail.str()};
}

Verdict citation_soundness(Shared& s) {
  std::vector<const EvaluationRun*> runs;
  if (s.run) runs.push_back(&*s.run);
  if (s.ablation) {
    for (const auto& r : s.ablation->rows) runs.push_back(&r);
  }
  if (runs.size() != 6) return {false, "runs from the end-to-end and ablation criteria are missing"};
  std::size_t predictions = 0, unresolved = 0, reported = 0;
  for (const auto* run : runs) {
    reported += run->unresolved_citations;
    for (const auto& r : run->results) {
      for (const auto& p : r.predictions) {
        ++predictions;
        unresolved += !validate_citations(p, r.refs).ok();
      }
    }
  }
  return {predictions > 0 && unresolved == 0 && reported == 0,
          fmt("%zu predictions over 6 runs, %zu with unresolved references", predictions, unresolved)};
}

Verdict reasoning_checks(Shared&) {
  std::mt19937_64 rng(31);
  int mono_bad = 0, zero_bad = 0, bare_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    CaseMemory mem;
    const auto in = oracle::random_inputs(rng, mem);
    for (Target t : kTargets) {
      const double base = deterministic_score(in, t).probability;
      for (Direction d : {Direction::Favorable, Direction::Unfavorable}) {
        auto more = in;
        more.factors.push_back(oracle::direction_factor("DX", t, d));
        const double p = deterministic_score(more, t).probability;
        mono_bad += d == Direction::Favorable ? p < base : p > base;
      }
      for (const auto& f : testing::shipped_factors().rows()) {
        if (f.target != t) continue;
        auto more = in;
        more.factors.push_back(f);
        more.factors.back().factor_id += "x";
        const double p = deterministic_score(more, t).probability;
        mono_bad += f.direction == Direction::Favorable ? p < base : p > base;
      }

      const auto ti = static_cast<std::size_t>(t);
      const bool has_factor =
          std::any_of(in.factors.begin(), in.factors.end(), [&](const auto& f) { return f.target == t; });
      const bool any_signal = in.retrieval.labeled > 0 || in.memory_counts[ti].second > 0;
      if (has_factor || any_signal) {
        auto factor_only = in;
        factor_only.retrieval = {};
        zero_bad += deterministic_score(in, t, ReasonParams{0.0, 0.2}).probability !=
                    sigmoid(oracle::expected_logit(factor_only, t, 0.0, 0.2));
      }
      if (any_signal) {
        auto bare = in;
        bare.factors.clear();
        bare_bad += deterministic_score(bare, t, ReasonParams{0.7, 0.2}).probability !=
                    sigmoid(oracle::expected_logit(bare, t, 0.7, 0.2));
      }
    }
  }

  const auto record = read_case(repo_path("tests/fixtures/worked/case/WX-001"));
  const auto memory = read_cohort(repo_path("tests/fixtures/worked/memory"));
  RunConfig cfg;
  auto gw = make_gateway(cfg);
  const auto boot = bootstrap_memory(memory.records, memory.labels, cfg, *gw, testing::shipped_prompts());
  const auto snap = boot.memory.snapshot();
  const Stores stores{snap, mine_patterns(*snap, cfg.min_support), &testing::shipped_index(),
                      &testing::shipped_factors(), gw.get(), &testing::shipped_prompts()};
  const auto r = predict_patient(record, cfg, stores);
  const bool fixture = !r.failure && r.predictions.size() == 2 &&
                       std::all_of(r.predictions.begin(), r.predictions.end(), [](const auto& p) { return p.label; });

  const bool ok = mono_bad == 0 && zero_bad == 0 && bare_bad == 0 && fixture;
  return {ok, fmt("1000 inputs: %d monotonicity, %d lambda=0, %d no-factor violations; fixture %s/%s", mono_bad,
                  zero_bad, bare_bad,
                  r.predictions.size() == 2 && r.predictions[0].label ? "positive" : "negative",
                  r.predictions.size() == 2 && r.predictions[1].label ? "positive" : "negative")};
}

}  // namespace

int main() {
  Shared shared;
  shared.cfg = RunConfig::from_config(Config::load(repo_path("config/theraloop.conf").string()));

  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Verdict(Shared&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "metric arithmetic", 1, metric_arithmetic},
      {2, "cohort stratification", 30, stratification},
      {3, "cohort calibration", 300, calibration},
      {4, "round-trip extraction", 120, round_trip},
      {5, "case memory oracle equivalence", 60, sea_mem_oracle},
      {6, "BM25 oracle equivalence", 60, bm25_oracle},
      {7, "deterministic end-to-end", 300, end_to_end},
      {8, "ablation ordering", 600, ablation_ordering},
      {9, "citation soundness", 1, citation_soundness},
      {10, "reasoning formula checks", 60, reasoning_checks},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = c.run(shared);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.limit_s) {
      v.pass = false;
      v.detail += fmt("; over the %.0f s limit", c.limit_s);
    }
    failed += !v.pass;
    std::printf("%s  %2d  %-32s %s [%.2f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed ? 1 : 0;
}
