#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "oracles.hpp"

using namespace theraloop;
using oracle::brute_force_patterns;
using oracle::coarse_profile;
using oracle::random_outcome;

namespace {

std::filesystem::path temp_journal(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("theraloop_test_" + name + ".jsonl");
  std::filesystem::remove(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

UnifiedProfile fixture_profile(const json& j) {
  UnifiedProfile p;
  for (const auto& [k, v] : j.items()) {
    if (k == "patient_id") p.patient_id = v.get<std::string>();
    else set_field(p, k, v);
  }
  return p;
}

}  // namespace

TEST_CASE("add_case grows the store and rejects duplicates") {
  CaseMemory mem;
  const auto e = mem.add_case(testing::example_profile("A"), Outcome{true, true});
  CHECK(mem.size() == 1);
  CHECK(e.entry_id == "A");
  CHECK(e.key == index_key(e.profile));
  CHECK_THROWS_AS(mem.add_case(testing::example_profile("A"), Outcome{}), DuplicatePatient);
  CHECK(mem.size() == 1);
}

TEST_CASE("35 stored cases with 18 PSA responders") {
  CaseMemory mem;
  const auto& latents = testing::small_cohort().latents;
  for (int i = 0; i < 35; ++i) mem.add_case(latents[i].true_profile, Outcome{i < 18, i % 2 == 0});
  const auto snap = mem.snapshot();
  CHECK(snap->counts(Target::PsaResponse) == std::pair{18, 35});
  CHECK(*snap->base_rate(Target::PsaResponse) == doctest::Approx(18.0 / 35.0));
}

TEST_CASE("eight-case subgroup with seven responders mines to 0.875") {
  CaseMemory mem;
  for (int i = 0; i < 8; ++i) {
    UnifiedProfile p = testing::example_profile("H" + std::to_string(i));
    p.clinical.prior_chemo = i % 2 ? Tri::Yes : Tri::No;
    p.radiology.lung_met = i % 3 ? Tri::No : Tri::Yes;
    mem.add_case(p, Outcome{i < 7, false});
  }
  for (int i = 0; i < 5; ++i) {
    UnifiedProfile p = testing::example_profile("L" + std::to_string(i));
    p.radiology.psma_expression = PsmaLevel::Low;
    mem.add_case(p, Outcome{false, false});
  }
  const auto patterns = mine_patterns(*mem.snapshot(), 3);
  const auto it = std::find_if(patterns.begin(), patterns.end(), [](const Pattern& p) {
    return p.mask == 0b0011 && p.values.psma_level == PsmaLevel::High && p.values.liver_met == Tri::No &&
           p.target == Target::PsaResponse;
  });
  REQUIRE(it != patterns.end());
  CHECK(it->support == 8);
  CHECK(it->positives == 7);
  CHECK(it->rate == 0.875);
}

TEST_CASE("subgroups below minimum support are not emitted") {
  CaseMemory mem;
  mem.add_case(testing::example_profile("A"), Outcome{true, true});
  mem.add_case(testing::example_profile("B"), Outcome{true, false});
  CHECK(mine_patterns(*mem.snapshot(), 3).empty());
  CHECK_FALSE(mine_patterns(*mem.snapshot(), 2).empty());
}

TEST_CASE("property: mining equals exhaustive enumeration on random stores") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    CaseMemory mem;
    const int n = 1 + static_cast<int>(rng() % 50);
    for (int i = 0; i < n; ++i) {
      const bool provisional = rng() % 7 == 0;
      mem.add_case(coarse_profile(rng, "P" + std::to_string(i)),
                   provisional ? std::nullopt : std::optional<Outcome>(random_outcome(rng)));
    }
    const int min_support = 1 + static_cast<int>(rng() % 4);
    const auto snap = mem.snapshot();
    CHECK(mine_patterns(*snap, min_support) == brute_force_patterns(*snap, min_support));
  }
}

TEST_CASE("similarity examples") {
  UnifiedProfile a = testing::example_profile("A");
  a.radiology.tumor_burden = TumorBurden::Moderate;
  a.labs.alp = 148;
  a.labs.hemoglobin = 12.8;
  CHECK(similarity(a, a) == 1.0);
  UnifiedProfile b = a;
  b.radiology.liver_met = Tri::Yes;
  CHECK(similarity(a, b) == doctest::Approx(1.0 - 2.0 / 17.0));
  CHECK(similarity(a, b) == doctest::Approx(0.882).epsilon(0.001));
  CHECK(similarity(UnifiedProfile{}, a) == 0.0);
}

TEST_CASE("band edges") {
  CHECK(psa_band(9.99) == 0);
  CHECK(psa_band(10) == 1);
  CHECK(psa_band(100) == 1);
  CHECK(psa_band(100.1) == 2);
  CHECK(alp_band(129) == 0);
  CHECK(alp_band(130) == 1);
  CHECK(hemoglobin_band(9.9) == 0);
  CHECK(hemoglobin_band(12) == 1);
  CHECK(hemoglobin_band(12.1) == 2);
}

TEST_CASE("similarity matrix equals the independently computed fixture") {
  std::ifstream pin(testing::repo_path("tests/fixtures/similarity/profiles.json"));
  std::ifstream min(testing::repo_path("tests/fixtures/similarity/matrix.json"));
  const json profiles = json::parse(pin);
  const json matrix = json::parse(min);
  REQUIRE(profiles.size() == 10);
  std::vector<UnifiedProfile> ps;
  for (const auto& j : profiles) ps.push_back(fixture_profile(j));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = 0; j < ps.size(); ++j) {
      CHECK(similarity(ps[i], ps[j]) == doctest::Approx(matrix[i][j].get<double>()).epsilon(1e-12));
    }
  }
}

TEST_CASE("property: similarity is symmetric and bounded") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const auto a = testing::random_profile(rng, 0.3, "A");
    const auto b = testing::random_profile(rng, 0.3, "B");
    const double s = similarity(a, b);
    CHECK(s == similarity(b, a));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    const auto full = testing::random_profile(rng, 0.0, "F");
    CHECK(similarity(full, full) == 1.0);
  }
}

TEST_CASE("property: retrieval equals a full sort with older-first ties") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    CaseMemory mem;
    const int n = static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      mem.add_case(coarse_profile(rng, "P" + std::to_string(i)),
                   rng() % 5 == 0 ? std::nullopt : std::optional<Outcome>(random_outcome(rng)));
    }
    const auto snap = mem.snapshot();
    // Sometimes the query is itself stored; it must never be returned.
    const std::string qid = rng() % 2 ? "P0" : "Q";
    const UnifiedProfile query = coarse_profile(rng, qid);
    const int k = 1 + static_cast<int>(rng() % 7);
    const auto patterns = mine_patterns(*snap, 3);
    const auto res = retrieve_similar(*snap, query, k, patterns);

    const auto want = oracle::full_sort_top_k(*snap, query, k);
    REQUIRE(res.cases.size() == want.size());
    int labeled = 0, pos = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(res.cases[i].entry->added_at == want[i]->added_at);
      CHECK(res.cases[i].similarity == similarity(query, want[i]->profile));
      if (const auto& o = want[i]->outcome) {
        ++labeled;
        pos += o->psa_response;
      }
    }
    CHECK(res.case_rate(Target::PsaResponse).has_value() == (labeled > 0));
    if (labeled) CHECK(*res.case_rate(Target::PsaResponse) == static_cast<double>(pos) / labeled);
    for (const auto& p : res.matched_patterns) CHECK(p.matches(index_key(query)));
    CHECK(res.matched_patterns.size() ==
          static_cast<std::size_t>(std::count_if(patterns.begin(), patterns.end(),
                                                 [&](const Pattern& p) { return p.matches(index_key(query)); })));
  }
}

TEST_CASE("four of five nearest cases responded") {
  CaseMemory mem;
  const auto query = testing::example_profile("Q");
  for (int i = 0; i < 5; ++i) mem.add_case(testing::example_profile("N" + std::to_string(i)), Outcome{i < 4, true});
  for (int i = 0; i < 6; ++i) {
    UnifiedProfile far = testing::example_profile("F" + std::to_string(i));
    far.radiology.psma_expression = PsmaLevel::Low;
    far.radiology.liver_met = Tri::Yes;
    far.radiology.visceral_met = Tri::Yes;
    mem.add_case(far, Outcome{false, false});
  }
  const auto res = retrieve_similar(*mem.snapshot(), query, 5, {});
  CHECK(res.cases.size() == 5);
  CHECK(*res.case_rate(Target::PsaResponse) == doctest::Approx(0.8));
  CHECK(*res.case_rate(Target::OsGt12m) == doctest::Approx(1.0));
}

TEST_CASE("empty store and exact duplicate retrieval") {
  CaseMemory mem;
  const auto empty = retrieve_similar(*mem.snapshot(), testing::example_profile("Q"), 5, {});
  CHECK(empty.cases.empty());
  CHECK_FALSE(empty.case_rate(Target::PsaResponse).has_value());
  CHECK_FALSE(empty.case_rate(Target::OsGt12m).has_value());

  UnifiedProfile other = testing::example_profile("X");
  other.radiology.psma_expression = PsmaLevel::Low;
  mem.add_case(other, Outcome{});
  mem.add_case(testing::example_profile("D"), Outcome{true, false});
  const auto res = retrieve_similar(*mem.snapshot(), testing::example_profile("Q"), 1, {});
  REQUIRE(res.cases.size() == 1);
  CHECK(res.cases[0].entry->entry_id == "D");
  CHECK(res.cases[0].similarity == 1.0);
}

TEST_CASE("outcome update raises matching pattern support by one") {
  CaseMemory mem;
  for (int i = 0; i < 3; ++i) mem.add_case(testing::example_profile("A" + std::to_string(i)), Outcome{true, true});
  mem.add_case(testing::example_profile("PROV"), std::nullopt);
  const auto before = mine_patterns(*mem.snapshot(), 3);
  CHECK(mem.snapshot()->provisional() == 1);
  mem.update_with_outcome("PROV", Outcome{false, true});
  const auto after = mine_patterns(*mem.snapshot(), 3);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(after[i].support == before[i].support + 1);
    CHECK(after[i].positives == before[i].positives + (after[i].target == Target::OsGt12m));
  }
  CHECK(mem.snapshot()->provisional() == 0);
}

TEST_CASE("updating an absent patient") {
  CaseMemory mem;
  CHECK_THROWS_AS(mem.update_with_outcome("nobody", Outcome{}), UnknownPatient);
  const auto p = testing::example_profile("NEW");
  mem.update_with_outcome("NEW", Outcome{true, false}, &p);
  CHECK(mem.snapshot()->find("NEW")->outcome == Outcome{true, false});
}

TEST_CASE("property: interleaved adds and updates mine the same patterns as a batch build") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<UnifiedProfile, Outcome>> cases;
    for (int i = 0; i < 20; ++i) cases.emplace_back(coarse_profile(rng, "C" + std::to_string(i)), random_outcome(rng));

    CaseMemory batch;
    for (const auto& [p, o] : cases) batch.add_case(p, o);

    // Each case is either added labeled, or added provisionally and updated
    // later; the operations are shuffled subject to add-before-update.
    struct Op {
      int idx;
      bool update;
    };
    std::vector<Op> ops;
    std::vector<bool> provisional(20);
    for (int i = 0; i < 20; ++i) {
      provisional[i] = rng() % 2;
      ops.push_back({i, false});
      if (provisional[i]) ops.push_back({i, true});
    }
    std::shuffle(ops.begin(), ops.end(), rng);
    std::stable_partition(ops.begin(), ops.end(), [](const Op& o) { return !o.update; });
    std::shuffle(ops.begin(), ops.begin() + 20, rng);

    CaseMemory inter;
    for (const auto& op : ops) {
      const auto& [p, o] = cases[op.idx];
      if (op.update) inter.update_with_outcome(p.patient_id, o);
      else inter.add_case(p, provisional[op.idx] ? std::nullopt : std::optional<Outcome>(o));
    }
    CHECK(mine_patterns(*inter.snapshot(), 2) == mine_patterns(*batch.snapshot(), 2));
  }
}

TEST_CASE("journal replay reproduces the store and compaction preserves the entry set") {
  const auto path = temp_journal("replay");
  std::mt19937_64 rng(41);
  {
    auto mem = CaseMemory::open(path);
    for (int i = 0; i < 15; ++i) {
      mem.add_case(testing::random_profile(rng, 0.2, "J" + std::to_string(i)),
                   i % 3 ? std::optional<Outcome>(random_outcome(rng)) : std::nullopt);
    }
    for (int i = 0; i < 15; i += 3) mem.update_with_outcome("J" + std::to_string(i), Outcome{true, false});
  }
  const std::string raw = slurp(path);
  CHECK(std::count(raw.begin(), raw.end(), '\n') == 20);

  auto reopened = CaseMemory::open(path);
  const auto snap = reopened.snapshot();
  CHECK(snap->entries.size() == 15);
  CHECK(snap->provisional() == 0);
  const std::string compacted_before = compacted_journal(*snap);

  reopened.compact();
  const auto after = CaseMemory::open(path).snapshot();
  REQUIRE(after->entries.size() == snap->entries.size());
  for (std::size_t i = 0; i < after->entries.size(); ++i) CHECK(*after->entries[i] == *snap->entries[i]);
  CHECK(slurp(path) == compacted_before);
  CHECK(compacted_journal(*after) == compacted_before);

  // Writes after compaction append to the compacted journal.
  reopened.add_case(testing::example_profile("LATE"), Outcome{true, true});
  CHECK(CaseMemory::open(path).size() == 16);
  std::filesystem::remove(path);
}

TEST_CASE("a corrupt journal line is a data error") {
  const auto path = temp_journal("corrupt");
  std::ofstream(path) << "{\"op\":\"add\"\n";
  CHECK_THROWS_AS(CaseMemory::open(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("snapshots are immutable under later writes") {
  CaseMemory mem;
  mem.add_case(testing::example_profile("A"), Outcome{true, true});
  const auto snap = mem.snapshot();
  mem.add_case(testing::example_profile("B"), Outcome{false, false});
  CHECK(snap->entries.size() == 1);
  CHECK(mem.snapshot()->entries.size() == 2);
}

TEST_CASE("memory stats") {
  CaseMemory mem;
  mem.add_case(testing::example_profile("A"), Outcome{true, false});
  mem.add_case(testing::example_profile("B"), std::nullopt);
  const auto s = memory_stats(*mem.snapshot(), 1);
  CHECK(s.entries == 2);
  CHECK(s.provisional == 1);
  CHECK(s.base_rates[0] == 1.0);
  CHECK(s.base_rates[1] == 0.0);
  CHECK(s.patterns == 30);
}
