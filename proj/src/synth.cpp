#include "theraloop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "theraloop/consensus.hpp"
#include "theraloop/extraction.hpp"
#include "theraloop/reasoning.hpp"
#include "theraloop/text.hpp"

namespace theraloop {

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::Clear: return "clear";
    case Tier::Ambiguous: return "ambiguous";
    default: return "misleading";
  }
}

std::optional<Tier> parse_tier(std::string_view s) {
  for (Tier t : kTiers) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

// ---- rng ------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---- parameters -----------------------------------------------------------

namespace {

const json& row(const json& rows, const char* name) {
  if (!rows.contains(name)) throw DataError(std::string("synth parameter table is missing row '") + name + "'");
  const json& r = rows.at(name);
  const std::string basis = r.value("basis", std::string{});
  if (basis != "quoted" && basis != "assumed") {
    throw DataError(std::string("synth parameter row '") + name + "' needs basis quoted|assumed");
  }
  return r;
}

std::vector<double> probs(const json& j, std::size_t size, const char* name) {
  auto v = j.get<std::vector<double>>();
  double total = 0;
  for (double x : v) {
    if (x < 0) throw DataError(std::string("negative probability in ") + name);
    total += x;
  }
  if (v.size() != size || std::abs(total - 1.0) > 1e-9) {
    throw DataError(std::string("synth parameter '") + name + "' must be " + std::to_string(size) +
                    " probabilities summing to 1");
  }
  return v;
}

ArchetypePair pair_of(const json& r, const char* name) {
  ArchetypePair p{r.at("favorable").get<double>(), r.at("unfavorable").get<double>()};
  if (p.favorable < 0 || p.favorable > 1 || p.unfavorable < 0 || p.unfavorable > 1) {
    throw DataError(std::string("synth parameter '") + name + "' must be probabilities");
  }
  return p;
}

}  // namespace

SynthParams SynthParams::parse(const json& doc) {
  SynthParams p;
  try {
    const json& rows = doc.at("rows");
    const json& t = row(rows, "targets");
    p.target_rate = {t.at("psa_response").get<double>(), t.at("os_gt_12m").get<double>()};
    p.favorable_share = row(rows, "favorable_share").at("value").get<double>();
    for (std::size_t a = 0; a < 2; ++a) {
      const char* key = a == 0 ? "favorable" : "unfavorable";
      p.psma[a] = probs(row(rows, "psma_expression").at(key), 4, "psma_expression");
      p.burden[a] = probs(row(rows, "tumor_burden").at(key), 3, "tumor_burden");
      p.ecog[a] = probs(row(rows, "ecog").at(key), 5, "ecog");
      p.psa.median[a] = row(rows, "psa").at(key).at("median").get<double>();
      p.alp.median[a] = row(rows, "alp").at(key).at("median").get<double>();
      p.ldh.median[a] = row(rows, "ldh").at(key).at("median").get<double>();
      p.hemoglobin.mean[a] = row(rows, "hemoglobin").at(key).at("mean").get<double>();
      p.hemoglobin.sd[a] = row(rows, "hemoglobin").at(key).at("sd").get<double>();
    }
    p.psa.sigma = row(rows, "psa").at("sigma").get<double>();
    p.alp.sigma = row(rows, "alp").at("sigma").get<double>();
    p.ldh.sigma = row(rows, "ldh").at("sigma").get<double>();
    p.bone = pair_of(row(rows, "bone_met"), "bone_met");
    p.lymph = pair_of(row(rows, "lymph_met"), "lymph_met");
    p.liver = pair_of(row(rows, "liver_met"), "liver_met");
    p.lung = pair_of(row(rows, "lung_met"), "lung_met");
    p.other_visceral = pair_of(row(rows, "other_visceral_met"), "other_visceral_met");
    p.prior_adt = pair_of(row(rows, "prior_adt"), "prior_adt");
    p.prior_chemo = pair_of(row(rows, "prior_chemo"), "prior_chemo");
    p.second_line = pair_of(row(rows, "second_chemo_line"), "second_chemo_line");
    p.psa_trend = probs(row(rows, "psa_trend").at("probabilities"), 3, "psa_trend");
    p.egfr = {row(rows, "egfr").at("mean").get<double>(), row(rows, "egfr").at("sd").get<double>()};
    const json& suv = row(rows, "suv_max");
    p.suv_median = {suv.at("median").at("high").get<double>(), suv.at("median").at("moderate").get<double>(),
                    suv.at("median").at("low").get<double>(), suv.at("median").at("heterogeneous").get<double>()};
    p.suv_sigma = suv.at("sigma").get<double>();
    for (const auto& c : row(rows, "comorbidities").at("items")) {
      p.comorbidities.emplace_back(c.at("name").get<std::string>(), c.at("p").get<double>());
    }
    p.cue_count = probs(row(rows, "cue_count").at("probabilities"), 4, "cue_count");
    p.delta = row(rows, "direction_only_effect").at("value").get<double>();
    const json& b = doc.at("intercepts");
    p.intercept = {b.at("psa_response").get<double>(), b.at("os_gt_12m").get<double>()};
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed synth parameter table: ") + e.what());
  }
  for (double r : p.target_rate) {
    if (!(r > 0 && r < 1)) throw DataError("synth target rates must lie in (0,1)");
  }
  p.source = doc;
  return p;
}

SynthParams SynthParams::load(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path.string()), nullptr, false);
  if (j.is_discarded()) throw DataError("synth parameter table is not valid JSON: " + path.string());
  return parse(j);
}

json SynthParams::to_json() const {
  json j = source;
  j["intercepts"] = {{"psa_response", intercept[0]}, {"os_gt_12m", intercept[1]}};
  return j;
}

std::string params_hash(const SynthParams& params, const FactorTable& factors) {
  json f = json::array();
  for (const auto& r : factors.rows()) f.push_back(r);
  return hex64(fnv1a64(params.to_json().dump() + "\n" + f.dump()));
}

// ---- latents --------------------------------------------------------------

void to_json(json& j, const LatentPatient& l) {
  j = {{"patient_id", l.patient_id},
       {"tier", to_string(l.tier)},
       {"alarming", l.alarming},
       {"reassuring", l.reassuring},
       {"surface_score", l.surface_score},
       {"model_probability", {{"psa_response", l.model_probability[0]}, {"os_gt_12m", l.model_probability[1]}}},
       {"outcome", l.outcome},
       {"favorable_archetype", l.favorable_archetype},
       {"candidate", l.candidate},
       {"true_profile", l.true_profile}};
}

void from_json(const json& j, LatentPatient& l) {
  l.patient_id = j.at("patient_id").get<std::string>();
  auto tier = parse_tier(j.at("tier").get<std::string>());
  if (!tier) throw DataError("latent record has an invalid tier");
  l.tier = *tier;
  l.alarming = j.at("alarming").get<int>();
  l.reassuring = j.at("reassuring").get<int>();
  l.surface_score = j.at("surface_score").get<int>();
  l.model_probability = {j.at("model_probability").at("psa_response").get<double>(),
                         j.at("model_probability").at("os_gt_12m").get<double>()};
  l.outcome = j.at("outcome").get<Outcome>();
  l.favorable_archetype = j.at("favorable_archetype").get<bool>();
  l.candidate = j.at("candidate").get<std::uint64_t>();
  l.true_profile = j.at("true_profile").get<UnifiedProfile>();
}

namespace {

double round1(double x) { return std::round(x * 10.0) / 10.0; }

Tri tri(bool b) { return b ? Tri::Yes : Tri::No; }

}  // namespace

UnifiedProfile sample_profile(Rng& rng, const SynthParams& p, bool fav) {
  const std::size_t a = fav ? 0 : 1;
  UnifiedProfile u;
  auto& r = u.radiology;
  constexpr std::array<PsmaLevel, 4> kLevels{PsmaLevel::High, PsmaLevel::Moderate, PsmaLevel::Low,
                                             PsmaLevel::Heterogeneous};
  const std::size_t level = rng.categorical(p.psma[a]);
  r.psma_expression = kLevels[level];
  bool bone = rng.bernoulli(p.bone.get(fav));
  const bool lymph = rng.bernoulli(p.lymph.get(fav));
  const bool liver = rng.bernoulli(p.liver.get(fav));
  const bool lung = rng.bernoulli(p.lung.get(fav));
  const bool other = rng.bernoulli(p.other_visceral.get(fav));
  const bool visceral = liver || lung || other;
  if (!bone && !lymph && !visceral) bone = true;
  r.bone_met = tri(bone);
  r.lymph_met = tri(lymph);
  r.liver_met = tri(liver);
  r.lung_met = tri(lung);
  r.visceral_met = tri(visceral);
  constexpr std::array<TumorBurden, 3> kBurden{TumorBurden::Low, TumorBurden::Moderate, TumorBurden::High};
  r.tumor_burden = kBurden[rng.categorical(p.burden[a])];
  r.suv_max = std::max(1.0, round1(p.suv_median[level] * std::exp(p.suv_sigma * rng.normal())));

  auto& l = u.labs;
  l.psa = std::clamp(round1(p.psa.median[a] * std::exp(p.psa.sigma * rng.normal())), 0.2, 5000.0);
  constexpr std::array<PsaTrend, 3> kTrend{PsaTrend::Rising, PsaTrend::Stable, PsaTrend::Falling};
  l.psa_trend = kTrend[rng.categorical(p.psa_trend)];
  l.hemoglobin = std::clamp(round1(p.hemoglobin.mean[a] + p.hemoglobin.sd[a] * rng.normal()), 7.0, 17.5);
  l.alp = std::clamp(std::round(p.alp.median[a] * std::exp(p.alp.sigma * rng.normal())), 30.0, 3000.0);
  l.ldh = std::clamp(std::round(p.ldh.median[a] * std::exp(p.ldh.sigma * rng.normal())), 100.0, 3000.0);
  l.egfr = std::clamp(std::round(p.egfr[0] + p.egfr[1] * rng.normal()), 15.0, 140.0);

  auto& c = u.clinical;
  c.prior_adt = tri(rng.bernoulli(p.prior_adt.get(fav)));
  const bool chemo = rng.bernoulli(p.prior_chemo.get(fav));
  const bool second = rng.bernoulli(p.second_line.get(fav));
  c.prior_chemo = tri(chemo);
  c.chemo_lines = chemo ? (second ? 2 : 1) : 0;
  c.ecog = static_cast<int>(rng.categorical(p.ecog[a]));
  std::vector<std::string> comorbid;
  for (const auto& [name, prob] : p.comorbidities) {
    if (rng.bernoulli(prob)) comorbid.push_back(name);
  }
  c.comorbidities = std::move(comorbid);
  return u;
}

std::array<double, 2> factor_logits(const UnifiedProfile& profile, const SynthParams& params,
                                    const FactorTable& factors) {
  std::array<double, 2> z{0.0, 0.0};
  for (const auto& f : factors.rows()) {
    if (!f.matches(profile)) continue;
    const auto t = static_cast<std::size_t>(f.target);
    z[t] += factor_effect(f, params.target_rate[t], params.delta);
  }
  return z;
}

std::array<double, 2> outcome_probabilities(const UnifiedProfile& profile, const SynthParams& params,
                                            const FactorTable& factors) {
  const auto z = factor_logits(profile, params, factors);
  return {sigmoid(params.intercept[0] + z[0]), sigmoid(params.intercept[1] + z[1])};
}

std::pair<Outcome, std::array<double, 2>> assign_outcome(const UnifiedProfile& profile, Rng& rng,
                                                         const SynthParams& params, const FactorTable& factors) {
  const auto p = outcome_probabilities(profile, params, factors);
  Outcome o;
  o.psa_response = rng.uniform() < p[0];
  o.os_gt_12m = rng.uniform() < p[1];
  return {o, p};
}

int outcome_direction(const Outcome& o) { return (o.psa_response ? 1 : 0) + (o.os_gt_12m ? 1 : 0) - 1; }

namespace {

int sign(int x) { return (x > 0) - (x < 0); }

Tier tier_rule(int surface, const Outcome& outcome, const std::array<double, 2>& prob) {
  const int s = sign(surface);
  const int d = outcome_direction(outcome);
  if (s * d == -1) return Tier::Misleading;
  const bool confident = std::any_of(prob.begin(), prob.end(), [](double p) { return p <= 0.25 || p >= 0.75; });
  return confident && s == d ? Tier::Clear : Tier::Ambiguous;
}

}  // namespace

Tier classify_tier(const LatentPatient& latent) {
  return tier_rule(latent.surface_score, latent.outcome, latent.model_probability);
}

// ---- tiers and assembly ---------------------------------------------------

TierMix parse_mix(std::string_view text_in) {
  const auto parts = text::split(text_in, ',');
  if (parts.size() != 3) throw ConfigError("--mix needs three comma-separated proportions");
  TierMix mix;
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      std::size_t pos = 0;
      mix.share[i] = std::stod(parts[i], &pos);
      if (pos != parts[i].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("--mix entry '" + parts[i] + "' is not a number");
    }
    if (mix.share[i] < 0) throw ConfigError("--mix proportions must be non-negative");
    total += mix.share[i];
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("--mix proportions must sum to 1");
  return mix;
}

std::array<int, 3> tier_quotas(int n, const TierMix& mix) {
  std::array<int, 3> q{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = n * mix.share[i];
    q[i] = static_cast<int>(std::floor(exact + 1e-9));
    rem[i] = exact - q[i];
    assigned += q[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++q[order[k % 3]];
  return q;
}

namespace {

struct Candidate {
  bool favorable = false;
  UnifiedProfile profile;
  std::array<double, 2> logits{};
  std::array<double, 2> u{};
  int alarming = 0;
  int reassuring = 0;
};

Candidate draw_candidate(std::uint64_t seed, std::uint64_t j, const SynthParams& params, const FactorTable& factors) {
  Rng rng(derive_seed(seed, j));
  Candidate c;
  c.favorable = rng.uniform() < params.favorable_share;
  c.profile = sample_profile(rng, params, c.favorable);
  c.logits = factor_logits(c.profile, params, factors);
  c.u = {rng.uniform(), rng.uniform()};
  c.alarming = static_cast<int>(rng.categorical(params.cue_count));
  c.reassuring = static_cast<int>(rng.categorical(params.cue_count));
  return c;
}

struct Accepted {
  std::uint64_t candidate;
  Tier tier;
  Outcome outcome;
  std::array<double, 2> prob;
};

// Walks candidates in order, accepting into open tier quotas.
template <typename Get>
std::vector<Accepted> assemble(int n, const TierMix& mix, const std::array<double, 2>& intercept, Get&& get,
                               std::uint64_t* drawn) {
  auto quota = tier_quotas(n, mix);
  std::vector<Accepted> out;
  out.reserve(static_cast<std::size_t>(n));
  const std::uint64_t limit = 2000ULL * static_cast<std::uint64_t>(n) + 100000ULL;
  std::uint64_t j = 0;
  for (; static_cast<int>(out.size()) < n; ++j) {
    if (j >= limit) throw CalibrationFailure("tier quotas could not be filled within the candidate limit");
    const Candidate& c = get(j);
    const std::array<double, 2> p{sigmoid(intercept[0] + c.logits[0]), sigmoid(intercept[1] + c.logits[1])};
    Outcome o{c.u[0] < p[0], c.u[1] < p[1]};
    const Tier t = tier_rule(c.alarming - c.reassuring, o, p);
    if (t == Tier::Misleading && c.alarming < 2) continue;
    auto& left = quota[static_cast<std::size_t>(t)];
    if (left == 0) continue;
    --left;
    out.push_back({j, t, o, p});
  }
  if (drawn) *drawn = j;
  return out;
}

std::string patient_label(std::size_t index, int n) {
  const int width = std::max(4, static_cast<int>(std::to_string(n).size()));
  char buf[32];
  std::snprintf(buf, sizeof buf, "SYN-%0*zu", width, index + 1);
  return buf;
}

}  // namespace

std::vector<LatentPatient> assemble_latents(int n, const TierMix& mix, std::uint64_t seed, const SynthParams& params,
                                            const FactorTable& factors, std::uint64_t* candidates) {
  if (n < 1) throw ConfigError("cohort size must be >= 1");
  Candidate scratch;
  auto get = [&](std::uint64_t j) -> const Candidate& {
    scratch = draw_candidate(seed, j, params, factors);
    return scratch;
  };
  auto accepted = assemble(n, mix, params.intercept, get, candidates);
  std::vector<LatentPatient> out;
  out.reserve(accepted.size());
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    const auto& a = accepted[i];
    Candidate c = draw_candidate(seed, a.candidate, params, factors);
    LatentPatient l;
    l.patient_id = patient_label(i, n);
    l.true_profile = std::move(c.profile);
    l.true_profile.patient_id = l.patient_id;
    l.outcome = a.outcome;
    l.model_probability = a.prob;
    l.alarming = c.alarming;
    l.reassuring = c.reassuring;
    l.surface_score = c.alarming - c.reassuring;
    l.favorable_archetype = c.favorable;
    l.candidate = a.candidate;
    l.tier = a.tier;
    out.push_back(std::move(l));
  }
  return out;
}

// ---- rendering ------------------------------------------------------------

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt0(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

std::string number_word(int n) {
  static constexpr std::array<std::string_view, 5> kWords{"zero", "one", "two", "three", "four"};
  return n >= 0 && n < 5 ? std::string(kWords[static_cast<std::size_t>(n)]) : std::to_string(n);
}

std::string comorbidity_text(const std::vector<std::string>& items) {
  if (items.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

std::string psma_word(PsmaLevel l, bool ambiguous) {
  switch (l) {
    case PsmaLevel::High: return ambiguous ? "Intense" : "high";
    case PsmaLevel::Moderate: return ambiguous ? "Moderate" : "moderate";
    case PsmaLevel::Low: return ambiguous ? "Faint" : "low";
    default: return ambiguous ? "Heterogeneous" : "heterogeneous";
  }
}

std::string trend_word(PsaTrend t) {
  // Never the word "stable": it belongs to the cue lexicon.
  switch (t) {
    case PsaTrend::Rising: return "rising";
    case PsaTrend::Falling: return "falling";
    default: return "plateau";
  }
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

const std::array<std::string, 3> kAlarmingSentences{
    "Reader comment: innumerable lesions on the projection images.",
    "The study was called extensive on first review.",
    "Referral describes progression despite several hormonal agents.",
};
const std::array<std::string, 3> kReassuringSentences{
    "Some findings appear stable against the outside images.",
    "A solitary dominant focus was pointed out by the referrer.",
    "The family was told the picture looked limited.",
};
// Which document carries each cue sentence (0 = PET, 2 = notes).
constexpr std::array<int, 3> kAlarmingDoc{0, 0, 2};
constexpr std::array<int, 3> kReassuringDoc{0, 0, 2};

std::vector<std::size_t> pick(Rng& rng, int count) {
  std::vector<std::size_t> idx{0, 1, 2};
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.next() % (i + 1)]);
  idx.resize(static_cast<std::size_t>(std::clamp(count, 0, 3)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string pet_report(const UnifiedProfile& p, bool ambiguous) {
  const auto& r = p.radiology;
  std::ostringstream o;
  o << kSentinelPrefix << "pet\n";
  const bool yes_bone = r.bone_met == Tri::Yes, yes_lymph = r.lymph_met == Tri::Yes;
  const bool yes_liver = r.liver_met == Tri::Yes, yes_lung = r.lung_met == Tri::Yes;
  const bool yes_visc = r.visceral_met == Tri::Yes;
  if (!ambiguous) {
    o << "PSMA PET/CT report.\n";
    o << "PSMA expression: " << psma_word(r.psma_expression, false) << ".\n";
    o << "SUVmax: " << fmt1(*r.suv_max) << ".\n";
    o << (yes_bone ? "Bone: PSMA-avid osseous metastases.\n" : "Bone: no osseous lesions.\n");
    o << (yes_lymph ? "Lymph nodes: PSMA-avid nodal metastases.\n" : "Lymph nodes: no nodal disease.\n");
    o << (yes_liver ? "Liver: hepatic metastases present.\n" : "Liver: no hepatic lesions.\n");
    o << (yes_lung ? "Lung: pulmonary metastases present.\n" : "Lung: no pulmonary lesions.\n");
    o << (yes_visc ? "Visceral: visceral involvement present.\n" : "Visceral: no visceral involvement.\n");
    o << "Tumor burden: " << to_string(r.tumor_burden) << ".\n";
    return o.str();
  }
  o << "PSMA PET/CT, outside read reviewed.\n";
  o << psma_word(r.psma_expression, true) << " PSMA uptake across known disease.\n";
  o << "SUV max " << fmt1(*r.suv_max) << " in the dominant lesion.\n";
  if (yes_bone && !yes_lymph && !yes_visc) {
    o << "Bone-only disease.\n";
  } else {
    o << (yes_bone ? "Skeletal: multiple osseous deposits.\n" : "No osseous deposits identified.\n");
    o << (yes_lymph ? "Nodal disease in the pelvis and retroperitoneum.\n" : "Nodal involvement: none.\n");
    if (!yes_visc) {
      o << "No visceral disease.\n";
    } else {
      o << (yes_liver ? "Hepatic lesions are present.\n" : "The liver is unremarkable.\n");
      o << (yes_lung ? "Pulmonary nodules consistent with metastases.\n" : "Lungs clear.\n");
      if (!yes_liver && !yes_lung) o << "Visceral: adrenal metastasis present.\n";
    }
  }
  o << capitalized(std::string(to_string(r.tumor_burden))) << " tumour burden overall.\n";
  return o.str();
}

double creatinine_for(double egfr) { return std::round(7000.0 / egfr + 20.0); }

std::string lab_report(const UnifiedProfile& p, bool ambiguous) {
  const auto& l = p.labs;
  std::ostringstream o;
  o << kSentinelPrefix << "labs\n";
  if (!ambiguous) {
    o << "Laboratory panel.\n";
    o << "PSA: " << fmt1(*l.psa) << " ng/mL.\n";
    o << "PSA trend: " << trend_word(l.psa_trend) << ".\n";
    o << "Hemoglobin: " << fmt1(*l.hemoglobin) << " g/dL.\n";
    o << "ALP: " << fmt0(*l.alp) << " U/L.\n";
    o << "LDH: " << fmt0(*l.ldh) << " U/L.\n";
    o << "Creatinine: " << fmt0(creatinine_for(*l.egfr)) << " umol/L.\n";
    o << "eGFR: " << fmt0(*l.egfr) << " mL/min/1.73m2.\n";
    return o.str();
  }
  o << "Chemistry and haematology results.\n";
  o << "Serum PSA " << fmt1(*l.psa) << " µg/L, " << trend_word(l.psa_trend) << " since the last draw.\n";
  const std::string hb_gl = fmt0(*l.hemoglobin * 10.0);
  if (std::strtod(hb_gl.c_str(), nullptr) / 10.0 == *l.hemoglobin) {
    o << "Haemoglobin " << hb_gl << " g/L.\n";
  } else {
    o << "Haemoglobin " << fmt1(*l.hemoglobin) << " g/dL.\n";
  }
  const std::string alp_kat = text::format_number(*l.alp / 60.0);
  if (alp_kat.size() <= 5 && std::strtod(alp_kat.c_str(), nullptr) * 60.0 / 1.0 == *l.alp) {
    o << "Alkaline phosphatase " << alp_kat << " µkat/L.\n";
  } else {
    o << "Alkaline phosphatase " << fmt0(*l.alp) << " IU/L.\n";
  }
  o << "Lactate dehydrogenase " << fmt0(*l.ldh) << " U/L.\n";
  o << "Creatinine " << fmt0(creatinine_for(*l.egfr)) << " µmol/L.\n";
  o << "eGFR " << fmt0(*l.egfr) << " mL/min.\n";
  return o.str();
}

std::string clinical_notes(const UnifiedProfile& p, bool ambiguous) {
  const auto& c = p.clinical;
  const bool adt = c.prior_adt == Tri::Yes;
  const bool chemo = c.prior_chemo == Tri::Yes;
  const int lines = c.chemo_lines.value_or(0);
  std::ostringstream o;
  o << kSentinelPrefix << "notes\n";
  if (!ambiguous) {
    o << "Oncology clinic note.\n";
    o << "Prior ADT: " << (adt ? "yes" : "no") << ".\n";
    o << "Prior chemotherapy: " << (!chemo ? "none" : lines >= 2 ? "docetaxel and cabazitaxel" : "docetaxel") << ".\n";
    o << "Chemotherapy lines: " << lines << ".\n";
    o << "ECOG: " << *c.ecog << ".\n";
    o << "Comorbidities: " << comorbidity_text(*c.comorbidities) << ".\n";
    return o.str();
  }
  o << "Consultation summary for radioligand therapy referral.\n";
  o << (adt ? "Androgen deprivation with leuprolide since diagnosis.\n" : "Never received androgen deprivation.\n");
  if (chemo) {
    o << (lines >= 2 ? "Received docetaxel and later cabazitaxel in the castration-resistant setting.\n"
                     : "Received docetaxel in the castration-resistant setting.\n");
    o << "Completed " << number_word(lines) << (lines == 1 ? " line" : " lines") << " of chemotherapy.\n";
  } else {
    o << "Chemotherapy-naive.\n";
    o << "Zero lines of chemotherapy.\n";
  }
  o << "ECOG performance status " << number_word(*c.ecog) << ".\n";
  o << "Comorbidities: " << comorbidity_text(*c.comorbidities) << ".\n";
  // An outdated value quoted from the referral letter; the lab report wins.
  o << "Referral letter quotes PSA " << fmt1(round1(*p.labs.psa * 1.25 + 3.0)) << " ng/mL.\n";
  return o.str();
}

}  // namespace

PatientRecord render_documents(const LatentPatient& latent, std::uint64_t seed) {
  Rng rng(derive_seed(seed ^ fnv1a64(latent.patient_id), 0xD0C));
  const bool ambiguous = latent.tier == Tier::Ambiguous;
  std::array<std::string, 3> docs{pet_report(latent.true_profile, ambiguous),
                                  lab_report(latent.true_profile, ambiguous),
                                  clinical_notes(latent.true_profile, ambiguous)};
  for (std::size_t i : pick(rng, latent.alarming)) docs[static_cast<std::size_t>(kAlarmingDoc[i])] += kAlarmingSentences[i] + "\n";
  for (std::size_t i : pick(rng, latent.reassuring)) {
    docs[static_cast<std::size_t>(kReassuringDoc[i])] += kReassuringSentences[i] + "\n";
  }
  PatientRecord rec;
  rec.patient_id = latent.patient_id;
  rec.pet_report = std::move(docs[0]);
  rec.lab_report = std::move(docs[1]);
  rec.clinical_notes = std::move(docs[2]);
  rec.language_hint = "en";
  return rec;
}

CueCounts count_cues(const PatientRecord& record) {
  const std::string all = text::lower(record.pet_report + "\n" + record.lab_report + "\n" + record.clinical_notes);
  auto occurrences = [&all](std::string_view phrase) {
    int n = 0;
    for (auto pos = all.find(phrase); pos != std::string::npos; pos = all.find(phrase, pos + phrase.size())) ++n;
    return n;
  };
  CueCounts c;
  for (auto p : kAlarmingCues) c.alarming += occurrences(p);
  for (auto p : kReassuringCues) c.reassuring += occurrences(p);
  return c;
}

// ---- verification and generation -----------------------------------------

VerificationResult verify_cohort(const std::vector<LatentPatient>& latents, const std::vector<PatientRecord>& records) {
  VerificationResult v;
  ExtractionContext ctx;
  ctx.config.mode = Mode::Deterministic;
  for (std::size_t i = 0; i < latents.size() && i < records.size(); ++i) {
    ++v.checked;
    try {
      auto ex = extract_all(records[i], ctx);
      if (!ex.failures.empty()) {
        v.failures.push_back(records[i].patient_id + ": " + ex.failures.front().message);
        continue;
      }
      UnifiedProfile got = integrate(records[i].patient_id, ex.outputs);
      if (got.same_features(latents[i].true_profile)) {
        ++v.recovered;
        continue;
      }
      std::string diff;
      for (const auto& f : profile_fields()) {
        json a = get_field(got, f.name), b = get_field(latents[i].true_profile, f.name);
        if (a != b) diff += " " + std::string(f.name) + "=" + a.dump() + "(want " + b.dump() + ")";
      }
      v.failures.push_back(records[i].patient_id + ":" + diff);
    } catch (const std::exception& e) {
      v.failures.push_back(records[i].patient_id + ": " + e.what());
    }
  }
  return v;
}

Cohort generate_cohort(int n, const TierMix& mix, std::uint64_t seed, const SynthParams& params,
                       const FactorTable& factors, bool verify) {
  Cohort c;
  c.seed = seed;
  c.mix = mix;
  c.latents = assemble_latents(n, mix, seed, params, factors, &c.candidates);
  std::array<int, 3> tiers{};
  std::array<int, 2> positives{};
  std::string content;
  for (const auto& l : c.latents) {
    c.records.push_back(render_documents(l, seed));
    c.labels[l.patient_id] = l.outcome;
    ++tiers[static_cast<std::size_t>(l.tier)];
    positives[0] += l.outcome.psa_response ? 1 : 0;
    positives[1] += l.outcome.os_gt_12m ? 1 : 0;
    const auto& r = c.records.back();
    content += r.patient_id + "\x1f" + r.pet_report + "\x1f" + r.lab_report + "\x1f" + r.clinical_notes + "\x1e";
  }
  content += format_labels(c.labels);
  if (verify) c.verification = verify_cohort(c.latents, c.records);

  c.manifest = {
      {"format", "theraloop-cohort.v1"},
      {"seed", seed},
      {"n", n},
      {"mix", {{"clear", mix.share[0]}, {"ambiguous", mix.share[1]}, {"misleading", mix.share[2]}}},
      {"tier_counts", {{"clear", tiers[0]}, {"ambiguous", tiers[1]}, {"misleading", tiers[2]}}},
      {"marginals", {{"psa_response", positives[0]}, {"os_gt_12m", positives[1]}}},
      {"params_hash", params_hash(params, factors)},
      {"intercepts", {{"psa_response", params.intercept[0]}, {"os_gt_12m", params.intercept[1]}}},
      {"candidates_drawn", c.candidates},
      {"verification",
       verify ? json{{"method", "deterministic extract+integrate round trip"},
                     {"checked", c.verification.checked},
                     {"recovered", c.verification.recovered},
                     {"failures", c.verification.failures}}
              : json(nullptr)},
      {"content_hash", hex64(fnv1a64(content))},
  };
  return c;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "cases");
  fs::create_directories(dir / "latents");
  for (const auto& r : cohort.records) {
    const fs::path cdir = dir / "cases" / r.patient_id;
    fs::create_directories(cdir);
    write_text_file((cdir / "pet.txt").string(), r.pet_report);
    write_text_file((cdir / "labs.txt").string(), r.lab_report);
    write_text_file((cdir / "notes.txt").string(), r.clinical_notes);
    if (r.language_hint) write_text_file((cdir / "language.txt").string(), *r.language_hint + "\n");
  }
  write_text_file((dir / "labels.tsv").string(), format_labels(cohort.labels));
  std::string latents;
  for (const auto& l : cohort.latents) latents += json(l).dump() + "\n";
  write_text_file((dir / "latents" / "latents.jsonl").string(), latents);
  write_text_file((dir / "manifest.json").string(), cohort.manifest.dump(2) + "\n");
}

PatientRecord read_case(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("case directory not found: " + dir.string());
  auto read_opt = [](const fs::path& p) {
    std::error_code e;
    return fs::exists(p, e) ? read_text_file(p.string()) : std::string{};
  };
  PatientRecord r;
  r.patient_id = fs::absolute(dir).lexically_normal().filename().string();
  if (r.patient_id.empty()) r.patient_id = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  r.pet_report = read_opt(dir / "pet.txt");
  r.lab_report = read_opt(dir / "labs.txt");
  r.clinical_notes = read_opt(dir / "notes.txt");
  if (auto lang = text::trim(read_opt(dir / "language.txt")); !lang.empty()) r.language_hint = lang;
  if (r.pet_report.empty() && r.lab_report.empty() && r.clinical_notes.empty()) {
    throw DataError("case directory has none of pet.txt, labs.txt, notes.txt: " + dir.string());
  }
  return r;
}

CohortFiles read_cohort(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir / "cases", ec)) throw DataError("cohort has no cases/ directory: " + dir.string());
  CohortFiles out;
  std::vector<fs::path> cases;
  for (const auto& e : fs::directory_iterator(dir / "cases")) {
    if (e.is_directory()) cases.push_back(e.path());
  }
  std::sort(cases.begin(), cases.end());
  for (const auto& c : cases) out.records.push_back(read_case(c));
  if (fs::exists(dir / "labels.tsv", ec)) out.labels = read_labels((dir / "labels.tsv").string());
  return out;
}

std::vector<LatentPatient> read_latents(const std::filesystem::path& dir) {
  const auto path = dir / "latents" / "latents.jsonl";
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return {};
  std::vector<LatentPatient> out;
  std::istringstream in(read_text_file(path.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed latent record in " + path.string());
    out.push_back(j.get<LatentPatient>());
  }
  return out;
}

// ---- calibration ----------------------------------------------------------

CalibrationResult calibrate_intercepts(const SynthParams& params, const FactorTable& factors, std::uint64_t seed,
                                       int accepted, const TierMix& mix, double tolerance) {
  std::vector<Candidate> pool;
  auto get = [&](std::uint64_t j) -> const Candidate& {
    while (pool.size() <= j) {
      Candidate c = draw_candidate(seed, pool.size(), params, factors);
      c.profile = UnifiedProfile{};  // only logits, uniforms and cues are needed here
      pool.push_back(std::move(c));
    }
    return pool[j];
  };
  std::array<double, 2> b{logit(params.target_rate[0]), logit(params.target_rate[1])};
  std::uint64_t drawn = 0;
  auto rates = [&](const std::array<double, 2>& bb) {
    auto acc = assemble(accepted, mix, bb, get, &drawn);
    std::array<double, 2> pos{};
    for (const auto& a : acc) {
      pos[0] += a.outcome.psa_response ? 1 : 0;
      pos[1] += a.outcome.os_gt_12m ? 1 : 0;
    }
    return std::array<double, 2>{pos[0] / static_cast<double>(acc.size()), pos[1] / static_cast<double>(acc.size())};
  };
  auto miss = [&](const std::array<double, 2>& r) {
    return std::max(std::abs(r[0] - params.target_rate[0]), std::abs(r[1] - params.target_rate[1]));
  };
  for (int round = 0; round < 4; ++round) {
    for (std::size_t t = 0; t < 2; ++t) {
      double lo = -8.0, hi = 8.0;
      for (int it = 0; it < 40; ++it) {
        auto bb = b;
        bb[t] = 0.5 * (lo + hi);
        (rates(bb)[t] < params.target_rate[t] ? lo : hi) = bb[t];
      }
      b[t] = 0.5 * (lo + hi);
    }
  }
  // The realized rates jump where a whole factor class crosses a tier
  // threshold, and the two targets interact through the tier quotas. When the
  // bisection lands on a jump, search a grid around it for the best joint fit.
  if (miss(rates(b)) > tolerance) {
    const auto centre = b;
    double best = miss(rates(b));
    for (int i = -20; i <= 20; ++i) {
      for (int k = -20; k <= 20; ++k) {
        const std::array<double, 2> bb{centre[0] + 0.02 * i, centre[1] + 0.02 * k};
        const double m = miss(rates(bb));
        if (m < best) {
          best = m;
          b = bb;
        }
      }
    }
  }
  CalibrationResult r;
  r.intercept = b;
  r.achieved = rates(b);
  r.candidates = drawn;
  for (std::size_t t = 0; t < 2; ++t) {
    if (std::abs(r.achieved[t] - params.target_rate[t]) > tolerance) {
      throw CalibrationFailure("calibration missed the " + std::string(to_string(kTargets[t])) + " marginal: " +
                               std::to_string(r.achieved[t]) + " vs target " + std::to_string(params.target_rate[t]));
    }
  }
  return r;
}

}  // namespace theraloop
