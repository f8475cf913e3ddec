#include <doctest.h>

#include <cctype>
#include <cmath>
#include <set>

#include "oracles.hpp"

using namespace theraloop;
using oracle::make_doc;
using oracle::random_text;

namespace {

std::string filler(std::size_t n) {
  std::string s;
  while (s.size() < n) s += "lorem ipsum dolor sit amet ";
  s.resize(n);
  return s;
}

const PrognosticFactor* matched(const std::vector<PrognosticFactor>& m, std::string_view id) {
  for (const auto& f : m) {
    if (f.factor_id == id) return &f;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("a document shorter than one chunk yields a single chunk") {
  const auto chunks = chunk_document(make_doc("d", filler(1000)));
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].ordinal == 0);
  CHECK(chunks[0].chunk_id == "d#0");
  CHECK(chunks[0].text.size() == 1000);
}

TEST_CASE("2500 characters split into three overlapping chunks") {
  const auto doc = make_doc("d", filler(2500));
  const auto chunks = chunk_document(doc);
  REQUIRE(chunks.size() == 3);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    CHECK(chunks[i].ordinal == static_cast<int>(i));
    CHECK(chunks[i].text.size() <= kChunkSize);
  }
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    const auto& prev = chunks[i - 1].text;
    CHECK(prev.substr(prev.size() - kChunkOverlap) == chunks[i].text.substr(0, kChunkOverlap));
  }
  CHECK(reconstruct_body(chunks) == doc.body);
}

TEST_CASE("property: chunks reconstruct the body and prefer sentence ends") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto doc = make_doc("r", random_text(rng, 1 + static_cast<int>(rng() % 1500)));
    const auto chunks = chunk_document(doc);
    CHECK(reconstruct_body(chunks) == doc.body);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      CHECK(chunks[i].text.size() <= kChunkSize);
      CHECK(chunks[i].ordinal == static_cast<int>(i));
    }
    for (std::size_t i = 0; i + 1 < chunks.size(); ++i) {
      // A non-final chunk either ends on a sentence terminator or is a full
      // window with no terminator in its second half.
      const auto& t = chunks[i].text;
      if (t.back() != '.') {
        CHECK(t.size() == kChunkSize);
        const auto dot = t.rfind('.');
        CHECK((dot == std::string::npos || dot + 1 < kChunkSize / 2));
      }
    }
  }
}

TEST_CASE("evidence file header parsing") {
  const auto d = parse_evidence_file("kb", "title: A trial\nsource: TRIAL\nBody text here.\n");
  CHECK(d.title == "A trial");
  CHECK(d.source_tag == "TRIAL");
  CHECK(d.body.find("Body text here.") == 0);
  CHECK_THROWS_AS(parse_evidence_file("kb", "no header\nBody"), DataError);
  CHECK_THROWS_AS(parse_evidence_file("kb", "title: A\nsource: B\n\n  \n"), DataError);
}

TEST_CASE("ingest skips malformed files and rejects an empty corpus") {
  const auto dir = std::filesystem::temp_directory_path() / "theraloop_test_corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(EvidenceIndex::ingest(dir), EmptyCorpus);
  write_text_file((dir / "a.txt").string(), "title: A\nsource: SA\nliver metastasis HR=2.1.\n");
  write_text_file((dir / "b.txt").string(), "garbage without header\n");
  IngestReport report;
  const auto idx = EvidenceIndex::ingest(dir, &report);
  CHECK(idx.docs().size() == 1);
  REQUIRE(report.skipped.size() == 1);
  CHECK(report.skipped[0].find("b.txt") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("shipped corpus has 23 documents and a liver query finds the hazard ratio") {
  const auto& idx = testing::shipped_index();
  std::set<std::string> ids;
  for (const auto& d : idx.docs()) ids.insert(d.doc_id);
  CHECK(ids.size() == 23);
  const auto hits = idx.retrieve("liver metastasis prognosis", 3);
  REQUIRE_FALSE(hits.empty());
  CHECK(hits[0].text.find("liver metastasis HR=2.1") != std::string::npos);
  CHECK(hits.size() <= 3);
}

TEST_CASE("queries with no indexed term return nothing") {
  CHECK(testing::shipped_index().retrieve("zzzqx wibblefrotz", 3).empty());
  CHECK(testing::shipped_index().retrieve("", 3).empty());
}

TEST_CASE("property: ranking equals a direct BM25 recomputation") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<EvidenceDoc> docs;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int d = 0; d < n; ++d) {
      docs.push_back(make_doc("doc" + std::to_string(d), random_text(rng, 5 + static_cast<int>(rng() % 600))));
    }
    const auto idx = EvidenceIndex::build(docs);
    REQUIRE(idx.chunks().size() <= 100);
    for (int q = 0; q < 5; ++q) {
      const std::string query = random_text(rng, 1 + static_cast<int>(rng() % 4)) + " unseen";
      const int top_n = 1 + static_cast<int>(rng() % 6);
      const auto got = idx.retrieve(query, top_n);
      const auto want = oracle::bm25(idx, query, top_n);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].chunk_id == want[i].first);
        CHECK(std::abs(got[i].score - want[i].second) < 1e-9);
      }
    }
  }
}

TEST_CASE("retrieval is deterministic and survives save and load") {
  const auto& idx = testing::shipped_index();
  const auto path = std::filesystem::temp_directory_path() / "theraloop_test_index.json";
  idx.save(path);
  const auto loaded = EvidenceIndex::load(path);
  CHECK(loaded.chunks() == idx.chunks());
  for (const char* q : {"PSMA expression and PSA response", "anemia hemoglobin survival", "renal dose"}) {
    const auto a = idx.retrieve(q, 5);
    const auto b = loaded.retrieve(q, 5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].chunk_id == b[i].chunk_id);
      CHECK(a[i].score == b[i].score);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("shipped factor table") {
  const auto& t = testing::shipped_factors();
  CHECK(t.rows().size() == kFactorRows);
  for (const auto& f : t.rows()) {
    CHECK(find_field(f.field) != nullptr);
    if (f.kind == EffectKind::HazardRatio) CHECK(f.effect > 0);
    if (f.kind == EffectKind::ResponseRate) CHECK((f.effect >= 0 && f.effect <= 1));
  }
}

TEST_CASE("factor table validation rejects unknown fields and bad effects") {
  json doc = json::parse(read_text_file(testing::repo_path("data/factors.v1").string()));
  json bad = doc;
  bad["factors"][0]["field"] = "shoe_size";
  CHECK_THROWS_AS(FactorTable::parse(bad), DataError);
  bad = doc;
  bad["factors"][2]["effect"]["value"] = -1.0;
  CHECK_THROWS_AS(FactorTable::parse(bad), DataError);
  bad = doc;
  bad["factors"].erase(10);
  CHECK_THROWS_AS(FactorTable::parse(bad), DataError);
}

TEST_CASE("factor matches for the quoted effects") {
  const auto& t = testing::shipped_factors();
  UnifiedProfile high;
  high.radiology.psma_expression = PsmaLevel::High;
  const auto m = factor_matches(t, high);
  REQUIRE(matched(m, "F01"));
  CHECK(matched(m, "F01")->effect == 0.66);
  CHECK(matched(m, "F01")->kind == EffectKind::ResponseRate);
  CHECK(t.find("F02")->effect == 0.37);

  UnifiedProfile liver;
  liver.radiology.liver_met = Tri::Yes;
  const auto lm = factor_matches(t, liver);
  REQUIRE(matched(lm, "F03"));
  CHECK(matched(lm, "F03")->effect == 2.1);
  CHECK(matched(lm, "F03")->target == Target::OsGt12m);

  UnifiedProfile nov;
  nov.radiology.visceral_met = Tri::No;
  const auto vm = factor_matches(t, nov);
  REQUIRE(matched(vm, "F04"));
  CHECK(matched(vm, "F04")->effect == 0.67);
  CHECK(matched(vm, "F04")->direction == Direction::Favorable);

  CHECK(factor_matches(t, UnifiedProfile{}).empty());
}

TEST_CASE("threshold factors compare strictly as written") {
  const auto& t = testing::shipped_factors();
  UnifiedProfile p;
  p.labs.psa = 100;
  p.clinical.ecog = 2;
  p.labs.hemoglobin = 10;
  const auto m = factor_matches(t, p);
  CHECK_FALSE(matched(m, "F07"));
  CHECK(matched(m, "F08"));
  CHECK_FALSE(matched(m, "F10"));
  p.labs.psa = 100.5;
  CHECK(matched(factor_matches(t, p), "F07"));
}

TEST_CASE("query construction") {
  const auto& t = testing::shipped_factors();
  CHECK(build_queries(t, UnifiedProfile{}).empty());

  UnifiedProfile high;
  high.radiology.psma_expression = PsmaLevel::High;
  const auto q = build_queries(t, high);
  REQUIRE(q.size() == 1);
  CHECK(q[0].text == "PSMA expression and PSA response");
  CHECK(q[0].factor_ids == std::vector<std::string>{"F01", "F02"});

  UnifiedProfile liver;
  liver.radiology.liver_met = Tri::Yes;
  const auto lq = build_queries(t, liver);
  REQUIRE(lq.size() == 1);
  CHECK(lq[0].text == "liver metastasis prognosis");

  const auto full = build_queries(t, testing::example_profile());
  std::set<std::string> texts;
  for (const auto& x : full) texts.insert(x.text);
  CHECK(texts.size() == full.size());
  CHECK(texts.count("PSMA expression and PSA response"));
  CHECK(texts.count("liver metastasis prognosis"));
}
