#include "theraloop/domain.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace theraloop {

namespace {

template <class E, std::size_t N>
std::optional<E> lookup(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

constexpr std::array<std::pair<std::string_view, Tri>, 3> kTriNames{
    {{"unknown", Tri::Unknown}, {"yes", Tri::Yes}, {"no", Tri::No}}};
constexpr std::array<std::pair<std::string_view, PsmaLevel>, 5> kPsmaNames{
    {{"unknown", PsmaLevel::Unknown},
     {"high", PsmaLevel::High},
     {"moderate", PsmaLevel::Moderate},
     {"low", PsmaLevel::Low},
     {"heterogeneous", PsmaLevel::Heterogeneous}}};
constexpr std::array<std::pair<std::string_view, TumorBurden>, 4> kBurdenNames{
    {{"unknown", TumorBurden::Unknown},
     {"low", TumorBurden::Low},
     {"moderate", TumorBurden::Moderate},
     {"high", TumorBurden::High}}};
constexpr std::array<std::pair<std::string_view, PsaTrend>, 4> kTrendNames{
    {{"unknown", PsaTrend::Unknown},
     {"rising", PsaTrend::Rising},
     {"stable", PsaTrend::Stable},
     {"falling", PsaTrend::Falling}}};
constexpr std::array<std::pair<std::string_view, Expert>, 4> kExpertNames{
    {{"radiologist", Expert::Radiologist},
     {"biochemist", Expert::Biochemist},
     {"oncologist", Expert::Oncologist},
     {"generalist", Expert::Generalist}}};
constexpr std::array<std::pair<std::string_view, Target>, 2> kTargetNames{
    {{"psa_response", Target::PsaResponse}, {"os_gt_12m", Target::OsGt12m}}};

template <class E, std::size_t N>
std::string_view name_of(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "unknown";
}

template <class E>
json enum_json(E v) {
  if (v == E{}) return nullptr;
  return std::string(to_string(v));
}

template <class E, class Parser>
E enum_from(const json& j, Parser parse, std::string_view field) {
  if (j.is_null()) return E{};
  if (!j.is_string()) throw DataError("field '" + std::string(field) + "' must be a string");
  auto v = parse(j.get<std::string>());
  if (!v) throw DataError("field '" + std::string(field) + "' has invalid value '" + j.get<std::string>() + "'");
  return *v;
}

json opt_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> num_from(const json& j, std::string_view field) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number()) throw DataError("field '" + std::string(field) + "' must be numeric");
  return j.get<double>();
}

std::optional<int> int_from(const json& j, std::string_view field) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number_integer()) {
    if (j.is_number_float()) {
      double d = j.get<double>();
      if (d == static_cast<double>(static_cast<int>(d))) return static_cast<int>(d);
    }
    throw DataError("field '" + std::string(field) + "' must be an integer");
  }
  return j.get<int>();
}

std::optional<std::vector<std::string>> list_from(const json& j, std::string_view field) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array()) throw DataError("field '" + std::string(field) + "' must be a list");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw DataError("field '" + std::string(field) + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

const json& at_or_null(const json& j, const char* key) {
  static const json kNull = nullptr;
  auto it = j.find(key);
  return it == j.end() ? kNull : *it;
}

}  // namespace

std::string_view to_string(Tri v) { return name_of(v, kTriNames); }
std::string_view to_string(PsmaLevel v) { return name_of(v, kPsmaNames); }
std::string_view to_string(TumorBurden v) { return name_of(v, kBurdenNames); }
std::string_view to_string(PsaTrend v) { return name_of(v, kTrendNames); }
std::string_view to_string(Expert v) { return name_of(v, kExpertNames); }
std::string_view to_string(Target v) { return name_of(v, kTargetNames); }

std::string_view to_string(ResolutionRule r) {
  switch (r) {
    case ResolutionRule::HigherConfidence: return "higher_confidence";
    case ResolutionRule::ExpertPrecedence: return "expert_precedence";
    case ResolutionRule::EvidenceReview: return "evidence_review";
  }
  return "higher_confidence";
}

std::optional<Tri> parse_tri(std::string_view s) { return lookup(s, kTriNames); }
std::optional<PsmaLevel> parse_psma(std::string_view s) { return lookup(s, kPsmaNames); }
std::optional<TumorBurden> parse_burden(std::string_view s) { return lookup(s, kBurdenNames); }
std::optional<PsaTrend> parse_trend(std::string_view s) { return lookup(s, kTrendNames); }
std::optional<Expert> parse_expert(std::string_view s) { return lookup(s, kExpertNames); }
std::optional<Target> parse_target(std::string_view s) { return lookup(s, kTargetNames); }

IndexKey index_key(const UnifiedProfile& profile) {
  return IndexKey{profile.radiology.psma_expression, profile.radiology.liver_met,
                  profile.radiology.lung_met, profile.clinical.prior_chemo};
}

// ---- field registry -------------------------------------------------------

const std::vector<FieldInfo>& profile_fields() {
  static const std::vector<FieldInfo> fields = [] {
    std::vector<FieldInfo> f{
        {"psma_expression", FieldGroup::Imaging, Expert::Radiologist},
        {"bone_met", FieldGroup::Imaging, Expert::Radiologist},
        {"lymph_met", FieldGroup::Imaging, Expert::Radiologist},
        {"visceral_met", FieldGroup::Imaging, Expert::Radiologist},
        {"liver_met", FieldGroup::Imaging, Expert::Radiologist},
        {"lung_met", FieldGroup::Imaging, Expert::Radiologist},
        {"tumor_burden", FieldGroup::Imaging, Expert::Radiologist},
        {"suv_max", FieldGroup::Imaging, Expert::Radiologist},
        {"psa", FieldGroup::Lab, Expert::Biochemist},
        {"psa_trend", FieldGroup::Lab, Expert::Biochemist},
        {"hemoglobin", FieldGroup::Lab, Expert::Biochemist},
        {"alp", FieldGroup::Lab, Expert::Biochemist},
        {"ldh", FieldGroup::Lab, Expert::Biochemist},
        {"egfr", FieldGroup::Lab, Expert::Biochemist},
        {"prior_adt", FieldGroup::Clinical, Expert::Oncologist},
        {"prior_chemo", FieldGroup::Clinical, Expert::Oncologist},
        {"chemo_lines", FieldGroup::Clinical, Expert::Oncologist},
        {"ecog", FieldGroup::Clinical, Expert::Oncologist},
        {"comorbidities", FieldGroup::Clinical, Expert::Oncologist},
    };
    std::sort(f.begin(), f.end(), [](const FieldInfo& a, const FieldInfo& b) { return a.name < b.name; });
    return f;
  }();
  return fields;
}

const FieldInfo* find_field(std::string_view name) {
  for (const auto& f : profile_fields()) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

bool is_unknown(const json& v) { return v.is_null(); }

json get_field(const UnifiedProfile& p, std::string_view name) {
  const auto& r = p.radiology;
  const auto& l = p.labs;
  const auto& c = p.clinical;
  if (name == "psma_expression") return enum_json(r.psma_expression);
  if (name == "bone_met") return enum_json(r.bone_met);
  if (name == "lymph_met") return enum_json(r.lymph_met);
  if (name == "visceral_met") return enum_json(r.visceral_met);
  if (name == "liver_met") return enum_json(r.liver_met);
  if (name == "lung_met") return enum_json(r.lung_met);
  if (name == "tumor_burden") return enum_json(r.tumor_burden);
  if (name == "suv_max") return opt_num(r.suv_max);
  if (name == "psa") return opt_num(l.psa);
  if (name == "psa_trend") return enum_json(l.psa_trend);
  if (name == "hemoglobin") return opt_num(l.hemoglobin);
  if (name == "alp") return opt_num(l.alp);
  if (name == "ldh") return opt_num(l.ldh);
  if (name == "egfr") return opt_num(l.egfr);
  if (name == "prior_adt") return enum_json(c.prior_adt);
  if (name == "prior_chemo") return enum_json(c.prior_chemo);
  if (name == "chemo_lines") return opt_int(c.chemo_lines);
  if (name == "ecog") return opt_int(c.ecog);
  if (name == "comorbidities") return c.comorbidities ? json(*c.comorbidities) : json(nullptr);
  throw DataError("unknown profile field '" + std::string(name) + "'");
}

void set_field(UnifiedProfile& p, std::string_view name, const json& v) {
  auto& r = p.radiology;
  auto& l = p.labs;
  auto& c = p.clinical;
  if (name == "psma_expression") r.psma_expression = enum_from<PsmaLevel>(v, parse_psma, name);
  else if (name == "bone_met") r.bone_met = enum_from<Tri>(v, parse_tri, name);
  else if (name == "lymph_met") r.lymph_met = enum_from<Tri>(v, parse_tri, name);
  else if (name == "visceral_met") r.visceral_met = enum_from<Tri>(v, parse_tri, name);
  else if (name == "liver_met") r.liver_met = enum_from<Tri>(v, parse_tri, name);
  else if (name == "lung_met") r.lung_met = enum_from<Tri>(v, parse_tri, name);
  else if (name == "tumor_burden") r.tumor_burden = enum_from<TumorBurden>(v, parse_burden, name);
  else if (name == "suv_max") r.suv_max = num_from(v, name);
  else if (name == "psa") l.psa = num_from(v, name);
  else if (name == "psa_trend") l.psa_trend = enum_from<PsaTrend>(v, parse_trend, name);
  else if (name == "hemoglobin") l.hemoglobin = num_from(v, name);
  else if (name == "alp") l.alp = num_from(v, name);
  else if (name == "ldh") l.ldh = num_from(v, name);
  else if (name == "egfr") l.egfr = num_from(v, name);
  else if (name == "prior_adt") c.prior_adt = enum_from<Tri>(v, parse_tri, name);
  else if (name == "prior_chemo") c.prior_chemo = enum_from<Tri>(v, parse_tri, name);
  else if (name == "chemo_lines") c.chemo_lines = int_from(v, name);
  else if (name == "ecog") c.ecog = int_from(v, name);
  else if (name == "comorbidities") c.comorbidities = list_from(v, name);
  else throw DataError("unknown profile field '" + std::string(name) + "'");
}

Expert fragment_owner(const Fragment& fragment) {
  switch (fragment.index()) {
    case 0: return Expert::Radiologist;
    case 1: return Expert::Biochemist;
    default: return Expert::Oncologist;
  }
}

std::map<std::string, json> fragment_fields(const Fragment& fragment) {
  UnifiedProfile tmp;
  apply_fragment(tmp, fragment);
  const Expert owner = fragment_owner(fragment);
  std::map<std::string, json> out;
  for (const auto& f : profile_fields()) {
    if (f.owner == owner) out.emplace(std::string(f.name), get_field(tmp, f.name));
  }
  return out;
}

void apply_fragment(UnifiedProfile& p, const Fragment& fragment) {
  std::visit(
      [&](const auto& frag) {
        using T = std::decay_t<decltype(frag)>;
        if constexpr (std::is_same_v<T, RadiologyFeatures>) p.radiology = frag;
        else if constexpr (std::is_same_v<T, LabFeatures>) p.labs = frag;
        else p.clinical = frag;
      },
      fragment);
}

// ---- validation -----------------------------------------------------------

namespace {

void check_radiology(const RadiologyFeatures& r, std::vector<std::string>& v) {
  if (r.liver_met == Tri::Yes && r.visceral_met != Tri::Yes) v.emplace_back("liver implies visceral");
  if (r.lung_met == Tri::Yes && r.visceral_met != Tri::Yes) v.emplace_back("lung implies visceral");
  if (r.suv_max && *r.suv_max < 0.0) v.emplace_back("suv_max >= 0");
}

void bound(const std::optional<double>& x, double lo, bool lo_open, double hi, const char* msg,
           std::vector<std::string>& v) {
  if (!x) return;
  const bool below = lo_open ? *x <= lo : *x < lo;
  if (below || *x >= hi) v.emplace_back(msg);
}

void check_labs(const LabFeatures& l, std::vector<std::string>& v) {
  bound(l.psa, 0.0, false, 10000.0, "psa within [0,10000)", v);
  bound(l.hemoglobin, 0.0, true, 25.0, "hemoglobin within (0,25)", v);
  bound(l.alp, 0.0, false, 5000.0, "alp within [0,5000)", v);
  bound(l.ldh, 0.0, false, 10000.0, "ldh within [0,10000)", v);
  bound(l.egfr, 0.0, false, 200.0, "egfr within [0,200)", v);
}

void check_clinical(const ClinicalFeatures& c, std::vector<std::string>& v) {
  if (c.ecog && (*c.ecog < 0 || *c.ecog > 4)) v.emplace_back("ecog within [0,4]");
  if (c.chemo_lines && *c.chemo_lines < 0) v.emplace_back("chemo_lines >= 0");
  if (c.chemo_lines && *c.chemo_lines >= 1 && c.prior_chemo != Tri::Yes) {
    v.emplace_back("chemo_lines >= 1 implies prior_chemo");
  }
}

}  // namespace

ValidationReport validate_profile(const UnifiedProfile& profile) {
  ValidationReport rep;
  check_radiology(profile.radiology, rep.violations);
  check_labs(profile.labs, rep.violations);
  check_clinical(profile.clinical, rep.violations);
  return rep;
}

ValidationReport validate_provenance(const UnifiedProfile& profile) {
  ValidationReport rep;
  for (const auto& f : profile_fields()) {
    if (!is_unknown(get_field(profile, f.name)) && !profile.provenance.contains(std::string(f.name))) {
      rep.violations.push_back("missing provenance for " + std::string(f.name));
    }
  }
  return rep;
}

ValidationReport validate_record(const PatientRecord& record) {
  ValidationReport rep;
  if (record.patient_id.empty()) rep.violations.emplace_back("patient_id non-empty");
  if (record.pet_report.empty() && record.lab_report.empty() && record.clinical_notes.empty()) {
    rep.violations.emplace_back("at least one document non-empty");
  }
  return rep;
}

ValidationReport validate_expert_output(const ExpertOutput& out) {
  ValidationReport rep;
  if (!(out.confidence >= 0.0 && out.confidence <= 1.0)) rep.violations.emplace_back("confidence within [0,1]");
  if (out.expert != Expert::Generalist && fragment_owner(out.fragment) != out.expert) {
    rep.violations.emplace_back("fragment matches expert role");
  }
  for (const auto& [name, c] : out.field_confidences) {
    if (!(c >= 0.0 && c <= 1.0)) rep.violations.push_back("field confidence within [0,1] for " + name);
  }
  std::visit(
      [&](const auto& frag) {
        using T = std::decay_t<decltype(frag)>;
        if constexpr (std::is_same_v<T, RadiologyFeatures>) check_radiology(frag, rep.violations);
        else if constexpr (std::is_same_v<T, LabFeatures>) check_labs(frag, rep.violations);
        else check_clinical(frag, rep.violations);
      },
      out.fragment);
  return rep;
}

// ---- serialization --------------------------------------------------------

namespace {

template <class Frag>
json fragment_to_json(const Frag& f) {
  json j = json::object();
  for (const auto& [k, v] : fragment_fields(Fragment{f})) j[k] = v;
  return j;
}

template <class Frag>
Frag fragment_from_json(const json& j) {
  UnifiedProfile tmp;
  const Expert owner = fragment_owner(Fragment{Frag{}});
  for (const auto& f : profile_fields()) {
    if (f.owner == owner) set_field(tmp, f.name, at_or_null(j, std::string(f.name).c_str()));
  }
  if constexpr (std::is_same_v<Frag, RadiologyFeatures>) return tmp.radiology;
  else if constexpr (std::is_same_v<Frag, LabFeatures>) return tmp.labs;
  else return tmp.clinical;
}

}  // namespace

void to_json(json& j, const RadiologyFeatures& v) { j = fragment_to_json(v); }
void from_json(const json& j, RadiologyFeatures& v) { v = fragment_from_json<RadiologyFeatures>(j); }
void to_json(json& j, const LabFeatures& v) { j = fragment_to_json(v); }
void from_json(const json& j, LabFeatures& v) { v = fragment_from_json<LabFeatures>(j); }
void to_json(json& j, const ClinicalFeatures& v) { j = fragment_to_json(v); }
void from_json(const json& j, ClinicalFeatures& v) { v = fragment_from_json<ClinicalFeatures>(j); }

void to_json(json& j, const ExpertOutput& v) {
  j = json::object();
  j["expert"] = to_string(v.expert);
  std::visit([&](const auto& f) { j["fragment"] = f; }, v.fragment);
  j["confidence"] = v.confidence;
  j["field_confidences"] = v.field_confidences;
  j["cross_fields"] = v.cross_fields;
  j["notes"] = v.notes;
}

void from_json(const json& j, ExpertOutput& v) {
  auto e = parse_expert(j.at("expert").get<std::string>());
  if (!e || *e == Expert::Generalist) throw DataError("invalid expert");
  v.expert = *e;
  switch (*e) {
    case Expert::Radiologist: v.fragment = j.at("fragment").get<RadiologyFeatures>(); break;
    case Expert::Biochemist: v.fragment = j.at("fragment").get<LabFeatures>(); break;
    default: v.fragment = j.at("fragment").get<ClinicalFeatures>(); break;
  }
  v.confidence = j.at("confidence").get<double>();
  v.field_confidences = j.value("field_confidences", std::map<std::string, double>{});
  v.cross_fields.clear();
  if (auto it = j.find("cross_fields"); it != j.end()) {
    for (const auto& [k, val] : it->items()) v.cross_fields[k] = val;
  }
  v.notes = j.value("notes", std::string{});
}

void to_json(json& j, const ConflictNote& v) {
  json cands = json::array();
  for (const auto& c : v.candidates) {
    cands.push_back({{"confidence", c.confidence}, {"expert", to_string(c.expert)}, {"value", c.value}});
  }
  j = {{"candidates", cands}, {"field", v.field}, {"resolution", v.resolution}, {"rule", to_string(v.rule)}};
}

void from_json(const json& j, ConflictNote& v) {
  v.field = j.at("field").get<std::string>();
  v.candidates.clear();
  for (const auto& c : j.at("candidates")) {
    auto e = parse_expert(c.at("expert").get<std::string>());
    if (!e) throw DataError("invalid expert in conflict note");
    v.candidates.push_back({*e, c.at("value"), c.at("confidence").get<double>()});
  }
  v.resolution = j.at("resolution");
  const auto rule = j.at("rule").get<std::string>();
  if (rule == "higher_confidence") v.rule = ResolutionRule::HigherConfidence;
  else if (rule == "expert_precedence") v.rule = ResolutionRule::ExpertPrecedence;
  else if (rule == "evidence_review") v.rule = ResolutionRule::EvidenceReview;
  else throw DataError("invalid conflict rule '" + rule + "'");
}

void to_json(json& j, const UnifiedProfile& v) {
  j = json::object();
  // Enumerated fields spell out "unknown"; absent numbers and lists are null.
  static const std::set<std::string_view> kEnumFields{"psma_expression", "bone_met",     "lymph_met",
                                                      "visceral_met",    "liver_met",    "lung_met",
                                                      "tumor_burden",    "psa_trend",    "prior_adt",
                                                      "prior_chemo"};
  for (const auto& f : profile_fields()) {
    json value = get_field(v, f.name);
    if (value.is_null() && kEnumFields.contains(f.name)) value = "unknown";
    j[std::string(f.name)] = std::move(value);
  }
  j["patient_id"] = v.patient_id;
  json prov = json::object();
  for (const auto& [k, p] : v.provenance) {
    prov[k] = {{"confidence", p.confidence}, {"expert", to_string(p.expert)}};
  }
  j["provenance"] = prov;
  j["conflicts"] = v.conflicts;
}

void from_json(const json& j, UnifiedProfile& v) {
  if (!j.is_object()) throw DataError("profile document must be an object");
  v = UnifiedProfile{};
  v.patient_id = j.value("patient_id", std::string{});
  for (const auto& f : profile_fields()) set_field(v, f.name, at_or_null(j, std::string(f.name).c_str()));
  if (auto it = j.find("provenance"); it != j.end()) {
    for (const auto& [k, p] : it->items()) {
      auto e = parse_expert(p.at("expert").get<std::string>());
      if (!e) throw DataError("invalid provenance expert for " + k);
      v.provenance[k] = Provenance{*e, p.at("confidence").get<double>()};
    }
  }
  if (auto it = j.find("conflicts"); it != j.end()) v.conflicts = it->get<std::vector<ConflictNote>>();
}

void to_json(json& j, const Outcome& v) {
  j = {{"os_gt_12m", v.os_gt_12m}, {"psa_response", v.psa_response}};
}

void from_json(const json& j, Outcome& v) {
  if (!j.contains("psa_response") || !j.contains("os_gt_12m")) {
    throw DataError("outcome requires both psa_response and os_gt_12m");
  }
  v.psa_response = j.at("psa_response").get<bool>();
  v.os_gt_12m = j.at("os_gt_12m").get<bool>();
}

void to_json(json& j, const IndexKey& v) {
  j = {{"liver_met", to_string(v.liver_met)},
       {"lung_met", to_string(v.lung_met)},
       {"prior_chemo", to_string(v.prior_chemo)},
       {"psma_level", to_string(v.psma_level)}};
}

void from_json(const json& j, IndexKey& v) {
  auto tri = [&](const char* k) {
    auto t = parse_tri(j.at(k).get<std::string>());
    if (!t) throw DataError(std::string("invalid index key field ") + k);
    return *t;
  };
  auto p = parse_psma(j.at("psma_level").get<std::string>());
  if (!p) throw DataError("invalid index key psma_level");
  v = IndexKey{*p, tri("liver_met"), tri("lung_met"), tri("prior_chemo")};
}

void to_json(json& j, const PatientRecord& v) {
  j = {{"clinical_notes", v.clinical_notes},
       {"lab_report", v.lab_report},
       {"patient_id", v.patient_id},
       {"pet_report", v.pet_report}};
  j["language_hint"] = v.language_hint ? json(*v.language_hint) : json(nullptr);
}

void from_json(const json& j, PatientRecord& v) {
  v.patient_id = j.at("patient_id").get<std::string>();
  v.pet_report = j.value("pet_report", std::string{});
  v.lab_report = j.value("lab_report", std::string{});
  v.clinical_notes = j.value("clinical_notes", std::string{});
  const auto& hint = at_or_null(j, "language_hint");
  v.language_hint = hint.is_null() ? std::nullopt : std::optional<std::string>(hint.get<std::string>());
}

std::string encode_profile(const UnifiedProfile& p) { return json(p).dump(); }

UnifiedProfile decode_profile(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("profile document is not valid JSON: ") + e.what());
  }
  return j.get<UnifiedProfile>();
}

// ---- labels ---------------------------------------------------------------

LabelMap parse_labels(std::string_view text) {
  LabelMap out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, psa, os;
    if (!(fields >> id >> psa >> os)) throw DataError("labels line " + std::to_string(lineno) + ": expected 3 fields");
    if (id == "patient_id") continue;
    auto bit = [&](const std::string& s) {
      if (s == "0") return false;
      if (s == "1") return true;
      throw DataError("labels line " + std::to_string(lineno) + ": label must be 0 or 1");
    };
    if (!out.emplace(id, Outcome{bit(psa), bit(os)}).second) {
      throw DataError("labels: duplicate patient_id " + id);
    }
  }
  return out;
}

std::string format_labels(const LabelMap& labels) {
  std::string out = "patient_id\tpsa_response\tos_gt_12m\n";
  for (const auto& [id, o] : labels) {
    out += id + '\t' + (o.psa_response ? '1' : '0') + '\t' + (o.os_gt_12m ? '1' : '0') + '\n';
  }
  return out;
}

LabelMap read_labels(const std::string& path) { return parse_labels(read_text_file(path)); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace theraloop
