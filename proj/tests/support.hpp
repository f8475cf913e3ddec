#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "theraloop/pipeline.hpp"

namespace testing {

using namespace theraloop;

inline std::filesystem::path repo_path(const std::string& rel) { return std::filesystem::path(THERALOOP_DATA_DIR) / rel; }

inline const FactorTable& shipped_factors() {
  static const FactorTable t = FactorTable::load(repo_path("data/factors.v1"));
  return t;
}

inline const SynthParams& shipped_params() {
  static const SynthParams p = SynthParams::load(repo_path("data/synth_params.v1.json"));
  return p;
}

inline const PromptLibrary& shipped_prompts() {
  static const PromptLibrary p = PromptLibrary::load(repo_path("prompts"));
  return p;
}

inline const EvidenceIndex& shipped_index() {
  static const EvidenceIndex i = EvidenceIndex::ingest(repo_path("data/corpus"));
  return i;
}

// A cohort generated once per test binary and shared across cases.
inline const Cohort& small_cohort() {
  static const Cohort c = generate_cohort(60, {}, 7, shipped_params(), shipped_factors(), false);
  return c;
}

// The worked-example patient: high PSMA, bone-only disease, prior ADT and
// docetaxel, ECOG 1.
inline UnifiedProfile example_profile(std::string id = "EX-1") {
  UnifiedProfile p;
  p.patient_id = std::move(id);
  p.radiology.psma_expression = PsmaLevel::High;
  p.radiology.bone_met = Tri::Yes;
  p.radiology.lymph_met = Tri::No;
  p.radiology.visceral_met = Tri::No;
  p.radiology.liver_met = Tri::No;
  p.radiology.lung_met = Tri::No;
  p.radiology.suv_max = 32.5;
  p.labs.psa = 45.2;
  p.clinical.prior_adt = Tri::Yes;
  p.clinical.prior_chemo = Tri::Yes;
  p.clinical.chemo_lines = 1;
  p.clinical.ecog = 1;
  return p;
}

// Random profile with each field independently unknown with probability
// `p_unknown`; always satisfies the domain invariants.
inline UnifiedProfile random_profile(std::mt19937_64& rng, double p_unknown, std::string id) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto known = [&] { return u(rng) >= p_unknown; };
  auto tri = [&] { return known() ? (u(rng) < 0.5 ? Tri::Yes : Tri::No) : Tri::Unknown; };
  auto pick = [&](int n) { return static_cast<int>(u(rng) * n); };
  UnifiedProfile p;
  p.patient_id = std::move(id);
  auto& r = p.radiology;
  if (known()) r.psma_expression = static_cast<PsmaLevel>(1 + pick(4));
  r.bone_met = tri();
  r.lymph_met = tri();
  r.liver_met = tri();
  r.lung_met = tri();
  r.visceral_met = (r.liver_met == Tri::Yes || r.lung_met == Tri::Yes) ? Tri::Yes : tri();
  if (known()) r.tumor_burden = static_cast<TumorBurden>(1 + pick(3));
  if (known()) r.suv_max = std::round(u(rng) * 400) / 10.0;
  auto& l = p.labs;
  if (known()) l.psa = std::round(std::exp(u(rng) * 7.5) * 10) / 10.0;
  if (known()) l.psa_trend = static_cast<PsaTrend>(1 + pick(3));
  if (known()) l.hemoglobin = std::round((7 + u(rng) * 10) * 10) / 10.0;
  if (known()) l.alp = std::round(30 + u(rng) * 600);
  if (known()) l.ldh = std::round(100 + u(rng) * 600);
  if (known()) l.egfr = std::round(15 + u(rng) * 100);
  auto& c = p.clinical;
  c.prior_adt = tri();
  c.prior_chemo = tri();
  if (c.prior_chemo == Tri::Yes && known()) c.chemo_lines = 1 + pick(3);
  if (c.prior_chemo == Tri::No && known()) c.chemo_lines = 0;
  if (known()) c.ecog = pick(5);
  if (known()) {
    std::vector<std::string> items;
    for (const char* name : {"hypertension", "diabetes mellitus", "coronary artery disease"}) {
      if (u(rng) < 0.3) items.emplace_back(name);
    }
    c.comorbidities = items;
  }
  return p;
}

}  // namespace testing
