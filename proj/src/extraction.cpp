#include "theraloop/extraction.hpp"

#include <algorithm>
#include <future>
#include <set>

#include "theraloop/text.hpp"

namespace theraloop {

using text::Clause;
using text::Token;

std::string_view to_string(Mode m) { return m == Mode::Model ? "model" : "deterministic"; }

std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "model") return Mode::Model;
  if (s == "deterministic") return Mode::Deterministic;
  return std::nullopt;
}

namespace {

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

}  // namespace

DeterministicParseError::DeterministicParseError(Expert expert, std::vector<std::string> unresolved)
    : std::runtime_error(std::string(to_string(expert)) + ": template grammar left fields unresolved: " +
                         join(unresolved, ", ")),
      expert_(expert),
      unresolved_(std::move(unresolved)) {}

bool has_sentinel(std::string_view document) { return text::starts_with(document, kSentinelPrefix); }

// ---- prompt library -------------------------------------------------------

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
  PromptLibrary lib;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw ConfigError("prompt directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      lib.add(entry.path().filename().string(), read_text_file(entry.path().string()));
    }
  }
  return lib;
}

void PromptLibrary::add(std::string template_id, std::string body) { templates_[std::move(template_id)] = std::move(body); }

bool PromptLibrary::has(std::string_view template_id) const { return templates_.find(template_id) != templates_.end(); }

const std::string& PromptLibrary::get(std::string_view template_id) const {
  auto it = templates_.find(template_id);
  if (it == templates_.end()) throw ConfigError("prompt template not found: " + std::string(template_id));
  return it->second;
}

std::string PromptLibrary::render(std::string_view template_id, const std::map<std::string, std::string>& slots) const {
  std::string out = get(template_id);
  for (const auto& [name, value] : slots) out = text::replace_all(std::move(out), "{{" + name + "}}", value);
  return out;
}

// ---- shared rule machinery ------------------------------------------------

namespace {

using WordSet = std::set<std::string, std::less<>>;

const WordSet kNegators{"no", "not", "without", "absent", "negative", "none", "never", "nil", "free"};
const WordSet kPostNegators{"unremarkable", "clear", "normal", "naive", "naïve", "absent", "negative"};
const WordSet kIndicators{"lesion",   "lesions",    "metastasis", "metastases", "metastatic", "avid",
                          "involvement", "involved", "deposit",    "deposits",   "disease",    "uptake",
                          "present",  "focus",      "foci",       "spread",     "mets"};

struct Site {
  std::string_view field;
  WordSet words;
};

const std::vector<Site>& sites() {
  static const std::vector<Site> s{
      {"bone_met", {"bone", "bones", "osseous", "skeletal", "skeleton"}},
      {"lymph_met", {"lymph", "nodal", "node", "nodes", "lymphadenopathy"}},
      {"liver_met", {"liver", "hepatic"}},
      {"lung_met", {"lung", "lungs", "pulmonary"}},
      {"visceral_met", {"visceral", "viscera"}},
  };
  return s;
}

bool is_word(const Token& t, std::string_view w) { return t.kind == Token::Kind::Word && t.text == w; }
bool in(const Token& t, const WordSet& s) { return t.kind == Token::Kind::Word && s.contains(t.text); }

std::optional<std::size_t> colon_index(const Clause& c) {
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    if (c.tokens[i].kind == Token::Kind::Colon) return i;
  }
  return std::nullopt;
}

bool any_in(const Clause& c, std::size_t from, std::size_t to, const WordSet& s) {
  for (std::size_t i = from; i < to && i < c.tokens.size(); ++i) {
    if (in(c.tokens[i], s)) return true;
  }
  return false;
}

std::optional<std::size_t> first_word(const Clause& c, std::size_t from) {
  for (std::size_t i = from; i < c.tokens.size(); ++i) {
    if (c.tokens[i].kind == Token::Kind::Word || c.tokens[i].kind == Token::Kind::Number) return i;
  }
  return std::nullopt;
}

// Collects every value a document asserts for a field; a field resolves only
// when all assertions agree.
class Evidence {
 public:
  void add(std::string_view field, json value) { seen_[std::string(field)].push_back(std::move(value)); }
  bool mentioned(std::string_view field) const { return seen_.contains(std::string(field)); }

  json resolve(std::string_view field) const {
    auto it = seen_.find(std::string(field));
    if (it == seen_.end()) return nullptr;
    const json& first = it->second.front();
    for (const auto& v : it->second) {
      if (v != first) return nullptr;
    }
    return first;
  }

 private:
  std::map<std::string, std::vector<json>> seen_;
};

// Polarity of a mention at token index i. `needs_indicator` is set for
// anatomical sites, where a bare mention ("bone scan") is not a finding.
std::optional<Tri> mention_polarity(const Clause& c, std::size_t i, bool needs_indicator,
                                    const WordSet& same_kind_words) {
  const auto colon = colon_index(c);
  const auto& t = c.tokens;
  if (colon && i < *colon) {
    // Header mention ("Liver: ..."); defer to the body if it names the site again.
    if (any_in(c, *colon + 1, t.size(), same_kind_words)) return std::nullopt;
    auto fw = first_word(c, *colon + 1);
    if (!fw) return std::nullopt;
    if (in(t[*fw], kNegators) || in(t[*fw], kPostNegators)) return Tri::No;
    if (!needs_indicator || any_in(c, *colon + 1, t.size(), kIndicators)) return Tri::Yes;
    return std::nullopt;
  }
  const std::size_t body = colon ? *colon + 1 : 0;
  bool negated = false;
  for (std::size_t k = body; k < i; ++k) {
    if (in(t[k], kNegators)) negated = true;
    if (is_word(t[k], "but") || is_word(t[k], "however")) negated = false;
  }
  for (std::size_t k = i + 1; k < t.size() && k <= i + 3; ++k) {
    if (in(t[k], kPostNegators)) negated = true;
  }
  if (negated) return Tri::No;
  if (!needs_indicator || any_in(c, body, t.size(), kIndicators)) return Tri::Yes;
  return std::nullopt;
}

json tri_json(Tri v) { return std::string(to_string(v)); }

std::optional<PsmaLevel> psma_word(const Token& t) {
  if (t.kind != Token::Kind::Word) return std::nullopt;
  if (t.text == "high" || t.text == "intense" || t.text == "strong") return PsmaLevel::High;
  if (t.text == "moderate" || t.text == "intermediate") return PsmaLevel::Moderate;
  if (t.text == "low" || t.text == "faint" || t.text == "weak") return PsmaLevel::Low;
  if (t.text == "heterogeneous" || t.text == "mixed") return PsmaLevel::Heterogeneous;
  return std::nullopt;
}

std::optional<TumorBurden> burden_word(const Token& t) {
  if (t.kind != Token::Kind::Word) return std::nullopt;
  if (t.text == "low") return TumorBurden::Low;
  if (t.text == "moderate" || t.text == "intermediate") return TumorBurden::Moderate;
  if (t.text == "high") return TumorBurden::High;
  return std::nullopt;
}

void scan_psma(const Clause& c, Evidence& ev) {
  const WordSet kind{"expression", "uptake", "avidity"};
  const auto& t = c.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!is_word(t[i], "psma")) continue;
    if (i > 0) {
      if (auto lvl = psma_word(t[i - 1]); lvl && i + 1 < t.size() && in(t[i + 1], kind)) {
        ev.add("psma_expression", std::string(to_string(*lvl)));
        continue;
      }
    }
    for (std::size_t j = i + 1; j < t.size() && j <= i + 3; ++j) {
      if (!in(t[j], kind)) continue;
      for (std::size_t k = j + 1; k < t.size() && k <= j + 3; ++k) {
        if (auto lvl = psma_word(t[k])) {
          ev.add("psma_expression", std::string(to_string(*lvl)));
          break;
        }
      }
      break;
    }
  }
}

void scan_suv(const Clause& c, Evidence& ev) {
  const auto& t = c.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    bool hit = is_word(t[i], "suvmax");
    std::size_t from = i + 1;
    if (!hit && is_word(t[i], "suv")) {
      for (std::size_t k = i + 1; k < t.size() && k <= i + 2; ++k) {
        if (is_word(t[k], "max")) {
          hit = true;
          from = k + 1;
        }
      }
    }
    if (!hit) continue;
    for (std::size_t k = from; k < t.size() && k <= from + 3; ++k) {
      if (t[k].kind == Token::Kind::Number) {
        ev.add("suv_max", t[k].number);
        break;
      }
    }
  }
}

void scan_burden(const Clause& c, Evidence& ev) {
  const auto& t = c.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!is_word(t[i], "burden")) continue;
    std::optional<TumorBurden> lvl;
    for (std::size_t k = i + 1; k < t.size() && k <= i + 3 && !lvl; ++k) lvl = burden_word(t[k]);
    for (std::size_t back = 1; back <= 2 && !lvl && i >= back; ++back) lvl = burden_word(t[i - back]);
    if (lvl) ev.add("tumor_burden", std::string(to_string(*lvl)));
  }
}

// ---- numeric lab values ---------------------------------------------------

struct UnitRule {
  std::string_view unit;
  double mul;
  double div;
};

struct LabSpec {
  std::string_view field;
  std::vector<std::vector<std::string_view>> keywords;  // token sequences
  std::vector<UnitRule> units;                          // "" is the default unit
};

const std::vector<LabSpec>& lab_specs() {
  static const std::vector<LabSpec> specs{
      {"psa", {{"psa"}}, {{"", 1, 1}, {"ng/ml", 1, 1}, {"µg/l", 1, 1}, {"μg/l", 1, 1}, {"ug/l", 1, 1}}},
      {"hemoglobin",
       {{"hb"}, {"hgb"}, {"hemoglobin"}, {"haemoglobin"}},
       {{"", 1, 1}, {"g/dl", 1, 1}, {"g/l", 1, 10}, {"mmol/l", 1.6114, 1}}},
      {"alp",
       {{"alp"}, {"alkaline", "phosphatase"}},
       {{"", 1, 1}, {"u/l", 1, 1}, {"iu/l", 1, 1}, {"µkat/l", 60, 1}, {"μkat/l", 60, 1}, {"ukat/l", 60, 1}}},
      {"ldh",
       {{"ldh"}, {"lactate", "dehydrogenase"}},
       {{"", 1, 1}, {"u/l", 1, 1}, {"iu/l", 1, 1}, {"µkat/l", 60, 1}, {"μkat/l", 60, 1}, {"ukat/l", 60, 1}}},
      {"egfr",
       {{"egfr"}},
       {{"", 1, 1},
        {"ml/min", 1, 1},
        {"ml/min/1.73m²", 1, 1},
        {"ml/min/1.73m2", 1, 1},
        {"ml/min/1.73", 1, 1}}},
      // Accepted so that its number is not mistaken for another value; not stored.
      {"creatinine", {{"creatinine"}}, {{"", 1, 1}, {"µmol/l", 1, 1}, {"umol/l", 1, 1}, {"mg/dl", 1, 1}}},
  };
  return specs;
}

bool unit_like(std::string_view unit) {
  static const WordSet kBare{"mg", "g", "mmol", "iu", "u", "ng", "pg", "µg", "ug", "ml", "l", "%"};
  return text::contains(unit, "/") || text::contains(unit, "%") || kBare.contains(unit);
}

const WordSet kLookbackGuards{"doubling", "time", "nadir", "velocity", "ago", "previous", "earlier", "prior",
                              "baseline_"};

// Value for the lab keyword ending at token index `kw_end` (exclusive).
// nullopt: no number; json null: number present but unit unrecognized.
std::optional<json> lab_value(const Clause& c, std::size_t kw_end, const LabSpec& spec, bool convert_units) {
  const auto& t = c.tokens;
  for (std::size_t k = kw_end; k < t.size() && k < kw_end + 5; ++k) {
    if (in(t[k], kLookbackGuards)) return std::nullopt;
    if (t[k].kind != Token::Kind::Number) continue;
    std::string unit = text::unit_after(c.raw, t[k].end);
    const UnitRule* rule = nullptr;
    for (const auto& u : spec.units) {
      if (u.unit == unit) rule = &u;
    }
    if (!rule && !unit_like(unit)) rule = &spec.units.front();
    if (!rule) return json(nullptr);
    if (!convert_units && (rule->mul != 1 || rule->div != 1)) return json(nullptr);
    return json(t[k].number * rule->mul / rule->div);
  }
  return std::nullopt;
}

void scan_labs(const Clause& c, Evidence& ev, bool convert_units, const std::set<std::string_view>& wanted) {
  const auto& t = c.tokens;
  for (const auto& spec : lab_specs()) {
    if (!wanted.contains(spec.field)) continue;
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (const auto& kw : spec.keywords) {
        if (i + kw.size() > t.size()) continue;
        bool match = true;
        for (std::size_t m = 0; m < kw.size(); ++m) match = match && is_word(t[i + m], kw[m]);
        if (!match) continue;
        if (auto v = lab_value(c, i + kw.size(), spec, convert_units)) ev.add(spec.field, *v);
      }
    }
  }
}

void scan_trend(const Clause& c, Evidence& ev) {
  bool has_psa = false;
  for (const auto& t : c.tokens) has_psa = has_psa || is_word(t, "psa");
  if (!has_psa) return;
  static const WordSet kRising{"rising", "increasing", "rise", "rose", "climbing"};
  static const WordSet kStable{"stable", "plateau", "plateaued", "unchanged"};
  static const WordSet kFalling{"falling", "declining", "decreasing", "decline", "fell"};
  for (const auto& t : c.tokens) {
    if (in(t, kRising)) ev.add("psa_trend", "rising");
    else if (in(t, kStable)) ev.add("psa_trend", "stable");
    else if (in(t, kFalling)) ev.add("psa_trend", "falling");
  }
}

// ---- clinical -------------------------------------------------------------

const WordSet kAdtWords{"adt", "lhrh", "gnrh", "leuprolide", "goserelin", "degarelix", "orchiectomy"};
const WordSet kChemoWords{"chemotherapy", "chemo", "docetaxel", "cabazitaxel", "taxane"};

bool clause_has(const Clause& c, const WordSet& words) { return any_in(c, 0, c.tokens.size(), words); }

bool is_adt_at(const Clause& c, std::size_t i) {
  const auto& t = c.tokens;
  if (in(t[i], kAdtWords)) return true;
  return is_word(t[i], "androgen") && i + 1 < t.size() && is_word(t[i + 1], "deprivation");
}

std::optional<int> lines_in(const Clause& c) {
  for (const auto& t : c.tokens) {
    if (t.kind == Token::Kind::Number && t.number == static_cast<int>(t.number)) return static_cast<int>(t.number);
    if (t.kind == Token::Kind::Word) {
      if (auto n = text::parse_number_word(t.text)) return static_cast<int>(*n);
    }
  }
  return std::nullopt;
}

void scan_treatments(const Clause& c, Evidence& ev, bool scoped) {
  const bool is_lines = clause_has(c, {"line", "lines"});
  const auto& t = c.tokens;
  // A line-count clause states chemo_lines; its chemo words carry no separate polarity.
  const bool line_count = is_lines && clause_has(c, kChemoWords);
  if (line_count) {
    if (auto n = lines_in(c)) ev.add("chemo_lines", *n);
  }
  WordSet adt_kind = kAdtWords;
  adt_kind.insert("androgen");
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool adt = is_adt_at(c, i);
    const bool chemo = !line_count && in(t[i], kChemoWords);
    if (!adt && !chemo) continue;
    std::optional<Tri> pol;
    if (scoped) {
      pol = mention_polarity(c, i, false, adt ? adt_kind : kChemoWords);
    } else {
      pol = any_in(c, 0, t.size(), kNegators) ? Tri::No : Tri::Yes;
    }
    if (pol) ev.add(adt ? "prior_adt" : "prior_chemo", tri_json(*pol));
  }
}

void scan_ecog(const Clause& c, Evidence& ev) {
  const auto& t = c.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!is_word(t[i], "ecog")) continue;
    for (std::size_t k = i + 1; k < t.size() && k <= i + 4; ++k) {
      std::optional<double> n;
      if (t[k].kind == Token::Kind::Number) n = t[k].number;
      else if (t[k].kind == Token::Kind::Word) n = text::parse_number_word(t[k].text);
      if (n) {
        if (*n == static_cast<int>(*n)) ev.add("ecog", static_cast<int>(*n));
        break;
      }
    }
  }
}

void scan_comorbidities(const Clause& c, Evidence& ev) {
  if (c.tokens.size() < 2) return;
  if (!(is_word(c.tokens[0], "comorbidities") || is_word(c.tokens[0], "comorbidity"))) return;
  if (c.tokens[1].kind != Token::Kind::Colon) return;
  const std::string rest = text::trim(std::string_view(c.raw).substr(c.tokens[1].end));
  std::vector<std::string> items;
  if (rest == "none" || rest == "nil" || rest == "none known" || rest == "no") {
    ev.add("comorbidities", json::array());
    return;
  }
  std::string normalized = text::replace_all(rest, " and ", ",");
  for (auto& part : text::split(normalized, ',')) {
    std::string item = text::collapse_spaces(text::trim(part));
    if (!item.empty()) items.push_back(std::move(item));
  }
  if (!items.empty()) ev.add("comorbidities", items);
}

// ---- assembly -------------------------------------------------------------

std::vector<std::string> owned_fields(Expert e) {
  std::vector<std::string> out;
  for (const auto& f : profile_fields()) {
    if (f.owner == e) out.emplace_back(f.name);
  }
  return out;
}

ExpertOutput assemble(Expert expert, const Evidence& ev, bool strict, std::string notes) {
  UnifiedProfile tmp;
  std::vector<std::string> unresolved;
  const auto fields = owned_fields(expert);
  int grounded = 0;
  for (const auto& f : fields) {
    json v = ev.resolve(f);
    if (!is_unknown(v)) {
      set_field(tmp, f, v);
      ++grounded;
    } else if (strict) {
      unresolved.push_back(f);
    }
  }
  if (!unresolved.empty()) throw DeterministicParseError(expert, unresolved);
  ExpertOutput out;
  out.expert = expert;
  switch (expert) {
    case Expert::Radiologist: out.fragment = tmp.radiology; break;
    case Expert::Biochemist: out.fragment = tmp.labs; break;
    default: out.fragment = tmp.clinical; break;
  }
  out.confidence = fields.empty() ? 0.0 : static_cast<double>(grounded) / static_cast<double>(fields.size());
  out.notes = std::move(notes);
  return out;
}

}  // namespace

ExpertOutput empty_output(Expert expert) {
  ExpertOutput out;
  out.expert = expert;
  switch (expert) {
    case Expert::Radiologist: out.fragment = RadiologyFeatures{}; break;
    case Expert::Biochemist: out.fragment = LabFeatures{}; break;
    default: out.fragment = ClinicalFeatures{}; break;
  }
  out.confidence = 0.0;
  return out;
}

ExpertOutput read_radiology(std::string_view pet_report, bool strict) {
  Evidence ev;
  for (const auto& c : text::clauses(pet_report)) {
    scan_psma(c, ev);
    scan_suv(c, ev);
    scan_burden(c, ev);
    const auto& t = c.tokens;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (is_word(t[i], "bone") && i + 1 < t.size()) {
        const std::size_t k = t[i + 1].kind == Token::Kind::Other && i + 2 < t.size() ? i + 2 : i + 1;
        if (is_word(t[k], "only")) {
          ev.add("bone_met", "yes");
          ev.add("lymph_met", "no");
          ev.add("visceral_met", "no");
          continue;
        }
      }
      for (const auto& site : sites()) {
        if (!in(t[i], site.words)) continue;
        if (auto pol = mention_polarity(c, i, true, site.words)) ev.add(site.field, tri_json(*pol));
      }
    }
  }
  // Anatomical entailment: liver and lung are visceral sites.
  const json visceral = ev.resolve("visceral_met");
  if (visceral == "no") {
    if (!ev.mentioned("liver_met")) ev.add("liver_met", "no");
    if (!ev.mentioned("lung_met")) ev.add("lung_met", "no");
  }
  if (!ev.mentioned("visceral_met") && (ev.resolve("liver_met") == "yes" || ev.resolve("lung_met") == "yes")) {
    ev.add("visceral_met", "yes");
  }
  return assemble(Expert::Radiologist, ev, strict, "");
}

ExpertOutput read_labs(std::string_view lab_report, bool strict) {
  Evidence ev;
  const std::set<std::string_view> wanted{"psa", "hemoglobin", "alp", "ldh", "egfr", "creatinine"};
  for (const auto& c : text::clauses(lab_report)) {
    scan_labs(c, ev, true, wanted);
    scan_trend(c, ev);
  }
  return assemble(Expert::Biochemist, ev, strict, "");
}

ExpertOutput read_clinical(std::string_view notes, bool strict) {
  Evidence ev;
  Evidence cross;
  for (const auto& c : text::clauses(notes)) {
    scan_treatments(c, ev, true);
    scan_ecog(c, ev);
    scan_comorbidities(c, ev);
    scan_labs(c, cross, true, {"psa"});
  }
  const json lines = ev.resolve("chemo_lines");
  if (!ev.mentioned("prior_chemo") && lines.is_number()) ev.add("prior_chemo", lines.get<int>() >= 1 ? "yes" : "no");
  ExpertOutput out = assemble(Expert::Oncologist, ev, strict, "");
  if (json psa = cross.resolve("psa"); !is_unknown(psa)) out.cross_fields["psa"] = psa;
  return out;
}

UnifiedProfile read_combined(const PatientRecord& record, double* confidence) {
  const std::string all = record.pet_report + "\n" + record.lab_report + "\n" + record.clinical_notes;
  std::map<std::string, json> last;
  std::set<std::string_view> labs{"psa", "hemoglobin", "alp", "ldh", "egfr", "creatinine"};
  for (const auto& c : text::clauses(all)) {
    Evidence ev;
    scan_psma(c, ev);
    scan_suv(c, ev);
    scan_burden(c, ev);
    scan_labs(c, ev, false, labs);
    scan_trend(c, ev);
    scan_treatments(c, ev, false);
    scan_ecog(c, ev);
    scan_comorbidities(c, ev);
    const bool negated = any_in(c, 0, c.tokens.size(), kNegators);
    const bool indicated = any_in(c, 0, c.tokens.size(), kIndicators);
    for (const auto& site : sites()) {
      if (!any_in(c, 0, c.tokens.size(), site.words)) continue;
      if (negated) ev.add(site.field, "no");
      else if (indicated) ev.add(site.field, "yes");
    }
    for (const auto& f : profile_fields()) {
      json v = ev.resolve(f.name);
      if (ev.mentioned(f.name)) last[std::string(f.name)] = v;  // later clauses override
    }
  }
  UnifiedProfile p;
  p.patient_id = record.patient_id;
  int grounded = 0;
  for (const auto& [name, v] : last) {
    if (is_unknown(v)) continue;
    set_field(p, name, v);
    ++grounded;
  }
  const double conf = static_cast<double>(grounded) / static_cast<double>(profile_fields().size());
  for (const auto& f : profile_fields()) {
    if (!is_unknown(get_field(p, f.name))) p.provenance[std::string(f.name)] = Provenance{Expert::Generalist, conf};
  }
  if (confidence) *confidence = conf;
  return p;
}

// ---- model path -----------------------------------------------------------

namespace {

std::vector<std::string> check_fields_object(const json& fields, const std::set<std::string>& allowed) {
  std::vector<std::string> v;
  if (!fields.is_object()) return {"'fields' must be an object"};
  for (const auto& [k, val] : fields.items()) {
    if (!allowed.contains(k)) {
      v.push_back("unexpected field '" + k + "'");
      continue;
    }
    UnifiedProfile tmp;
    try {
      set_field(tmp, k, val);
    } catch (const DataError& e) {
      v.emplace_back(e.what());
    }
  }
  return v;
}

SchemaRegistry::Validator expert_validator(std::optional<Expert> expert) {
  return [expert](const json& j) {
    std::vector<std::string> v;
    if (!j.contains("fields")) return std::vector<std::string>{"missing 'fields'"};
    std::set<std::string> own, other;
    for (const auto& f : profile_fields()) {
      (!expert || f.owner == *expert ? own : other).insert(std::string(f.name));
    }
    auto fv = check_fields_object(j.at("fields"), own);
    v.insert(v.end(), fv.begin(), fv.end());
    if (j.contains("cross_fields")) {
      auto cv = check_fields_object(j.at("cross_fields"), other);
      v.insert(v.end(), cv.begin(), cv.end());
    }
    if (j.contains("confidence") && !j.at("confidence").is_number()) v.emplace_back("'confidence' must be a number");
    if (j.contains("field_confidences") && !j.at("field_confidences").is_object()) {
      v.emplace_back("'field_confidences' must be an object");
    }
    if (j.contains("notes") && !j.at("notes").is_string()) v.emplace_back("'notes' must be a string");
    return v;
  };
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

bool language_supported(const ExtractionContext& ctx) {
  if (!ctx.language_hint || ctx.config.language_fallback) return true;
  return text::starts_with(text::lower(*ctx.language_hint), "en");
}

ExpertOutput run_expert(Expert expert, std::string_view doc, const ExtractionContext& ctx) {
  if (text::trim(doc).empty()) return empty_output(expert);
  if (!language_supported(ctx)) {
    ExpertOutput out = empty_output(expert);
    out.notes = "language '" + *ctx.language_hint + "' not supported without language_fallback";
    return out;
  }
  if (ctx.config.mode == Mode::Deterministic) {
    const bool strict = has_sentinel(doc);
    switch (expert) {
      case Expert::Radiologist: return read_radiology(doc, strict);
      case Expert::Biochemist: return read_labs(doc, strict);
      default: return read_clinical(doc, strict);
    }
  }
  if (!ctx.gateway || !ctx.prompts) throw ConfigError("Model-mode extraction requires a gateway and prompt library");
  std::string_view template_id;
  std::string_view schema;
  switch (expert) {
    case Expert::Radiologist: template_id = kRadiologistTemplate; schema = kRadiologySchema; break;
    case Expert::Biochemist: template_id = kBiochemistTemplate; schema = kLabsSchema; break;
    default: template_id = kOncologistTemplate; schema = kClinicalSchema; break;
  }
  PromptRequest req;
  req.template_id = std::string(template_id);
  req.rendered_prompt =
      ctx.prompts->render(template_id, {{"document", std::string(doc)}, {"language", ctx.language_hint.value_or("en")}});
  req.temperature = 0.0;
  StructuredText st = ctx.gateway->complete_structured(std::move(req), schema);
  return expert_output_from_json(expert, st.value);
}

}  // namespace

void register_extraction_schemas(SchemaRegistry& registry) {
  registry.add(std::string(kRadiologySchema), expert_validator(Expert::Radiologist));
  registry.add(std::string(kLabsSchema), expert_validator(Expert::Biochemist));
  registry.add(std::string(kClinicalSchema), expert_validator(Expert::Oncologist));
  registry.add(std::string(kGeneralistSchema), expert_validator(std::nullopt));
}

ExpertOutput expert_output_from_json(Expert expert, const json& response) {
  UnifiedProfile tmp;
  for (const auto& [k, v] : response.at("fields").items()) set_field(tmp, k, v);
  ExpertOutput out;
  out.expert = expert;
  switch (expert) {
    case Expert::Radiologist: out.fragment = tmp.radiology; break;
    case Expert::Biochemist: out.fragment = tmp.labs; break;
    default: out.fragment = tmp.clinical; break;
  }
  out.confidence = response.contains("confidence") ? clamp01(response.at("confidence").get<double>()) : 0.5;
  if (auto it = response.find("field_confidences"); it != response.end()) {
    for (const auto& [k, v] : it->items()) {
      if (v.is_number()) out.field_confidences[k] = clamp01(v.get<double>());
    }
  }
  if (auto it = response.find("cross_fields"); it != response.end()) {
    for (const auto& [k, v] : it->items()) {
      if (!is_unknown(v)) out.cross_fields[k] = v;
    }
  }
  out.notes = response.value("notes", std::string{});
  return out;
}

json expert_output_to_response(const ExpertOutput& out) {
  json fields = json::object();
  for (const auto& [k, v] : fragment_fields(out.fragment)) {
    if (!is_unknown(v)) fields[k] = v;
  }
  json j = {{"fields", fields}, {"confidence", out.confidence}, {"notes", out.notes}};
  if (!out.cross_fields.empty()) j["cross_fields"] = out.cross_fields;
  return j;
}

ExpertOutput extract_radiology(std::string_view pet_report, const ExtractionContext& ctx) {
  return run_expert(Expert::Radiologist, pet_report, ctx);
}

ExpertOutput extract_labs(std::string_view lab_report, const ExtractionContext& ctx) {
  return run_expert(Expert::Biochemist, lab_report, ctx);
}

ExpertOutput extract_clinical(std::string_view notes, const ExtractionContext& ctx) {
  return run_expert(Expert::Oncologist, notes, ctx);
}

ExtractionResult extract_all(const PatientRecord& record, const ExtractionContext& ctx) {
  const std::array<std::string_view, 3> docs{record.pet_report, record.lab_report, record.clinical_notes};
  std::array<std::future<ExpertOutput>, 3> futures;
  for (std::size_t i = 0; i < 3; ++i) {
    futures[i] = std::async(std::launch::async, [&, i] { return run_expert(kExperts[i], docs[i], ctx); });
  }
  ExtractionResult result;
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      result.outputs[i] = futures[i].get();
    } catch (const std::exception& e) {
      result.outputs[i] = empty_output(kExperts[i]);
      result.outputs[i].notes = e.what();
      result.failures.push_back({kExperts[i], e.what()});
    }
  }
  return result;
}

UnifiedProfile extract_combined(const PatientRecord& record, const ExtractionContext& ctx) {
  if (ctx.config.mode == Mode::Deterministic) return read_combined(record);
  if (!ctx.gateway || !ctx.prompts) throw ConfigError("Model-mode extraction requires a gateway and prompt library");
  PromptRequest req;
  req.template_id = std::string(kGeneralistTemplate);
  req.rendered_prompt = ctx.prompts->render(kGeneralistTemplate, {{"pet_report", record.pet_report},
                                                                  {"lab_report", record.lab_report},
                                                                  {"clinical_notes", record.clinical_notes},
                                                                  {"language", ctx.language_hint.value_or("en")}});
  StructuredText st = ctx.gateway->complete_structured(std::move(req), kGeneralistSchema);
  UnifiedProfile p;
  p.patient_id = record.patient_id;
  for (const auto& [k, v] : st.value.at("fields").items()) set_field(p, k, v);
  const double conf =
      st.value.contains("confidence") ? std::clamp(st.value.at("confidence").get<double>(), 0.0, 1.0) : 0.5;
  for (const auto& f : profile_fields()) {
    if (!is_unknown(get_field(p, f.name))) p.provenance[std::string(f.name)] = Provenance{Expert::Generalist, conf};
  }
  return p;
}

}  // namespace theraloop
