#include "theraloop/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "theraloop/text.hpp"

namespace theraloop {

std::string_view to_string(CitationKind k) {
  switch (k) {
    case CitationKind::Profile: return "profile";
    case CitationKind::Case: return "case";
    default: return "trial";
  }
}

namespace {

std::optional<CitationKind> parse_kind(std::string_view s) {
  if (s == "profile") return CitationKind::Profile;
  if (s == "case") return CitationKind::Case;
  if (s == "trial") return CitationKind::Trial;
  return std::nullopt;
}

}  // namespace

void to_json(json& j, const Prediction& p) {
  json cites = json::array();
  for (const auto& c : p.citations) {
    json cj = {{"kind", to_string(c.kind)}, {"ref", c.ref}};
    if (!c.quote.empty()) cj["quote"] = c.quote;
    cites.push_back(std::move(cj));
  }
  j = {{"patient_id", p.patient_id},
       {"target", to_string(p.target)},
       {"label", p.label},
       {"probability", p.probability},
       {"mode", to_string(p.mode)},
       {"citations", cites},
       {"rationale", p.rationale},
       {"warning", p.warning},
       {"attempts", p.attempts}};
}

void from_json(const json& j, Prediction& p) {
  p.patient_id = j.at("patient_id").get<std::string>();
  auto t = parse_target(j.at("target").get<std::string>());
  auto m = parse_mode(j.at("mode").get<std::string>());
  if (!t || !m) throw DataError("prediction record has an invalid target or mode");
  p.target = *t;
  p.mode = *m;
  p.label = j.at("label").get<bool>();
  p.probability = j.at("probability").get<double>();
  p.rationale = j.value("rationale", std::string{});
  p.warning = j.value("warning", false);
  p.attempts = j.value("attempts", 1);
  p.citations.clear();
  for (const auto& c : j.at("citations")) {
    auto kind = parse_kind(c.at("kind").get<std::string>());
    if (!kind) throw DataError("prediction citation has an invalid kind");
    p.citations.push_back({*kind, c.at("ref").get<std::string>(), c.value("quote", std::string{})});
  }
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double smoothed_rate(int positives, int n) { return (positives + 1.0) / (n + 2.0); }

double factor_effect(const PrognosticFactor& f, double prior, double delta) {
  const double sign = f.direction == Direction::Favorable ? 1.0 : -1.0;
  switch (f.kind) {
    case EffectKind::ResponseRate: {
      const double e = logit(f.effect) - logit(prior);
      return f.direction == Direction::Favorable ? std::max(0.0, e) : std::min(0.0, e);
    }
    case EffectKind::HazardRatio: return -std::log(f.effect);
    default: return sign * delta;
  }
}

namespace {

// Profile fields read by the similarity function.
constexpr std::array<std::string_view, 11> kSimilarityFields{
    "psma_expression", "liver_met", "lung_met", "visceral_met", "prior_chemo", "ecog",
    "bone_met",        "tumor_burden", "psa", "alp",          "hemoglobin"};

std::string effect_text(const PrognosticFactor& f) {
  switch (f.kind) {
    case EffectKind::ResponseRate: return "response rate " + text::format_number(f.effect);
    case EffectKind::HazardRatio: return "HR " + text::format_number(f.effect);
    default: return std::string(to_string(f.direction)) + ", direction only";
  }
}

std::string fixed(double v, int decimals) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << v;
  return os.str();
}

void add_unique(std::vector<Citation>& out, Citation c) {
  for (const auto& e : out) {
    if (e.kind == c.kind && e.ref == c.ref) return;
  }
  out.push_back(std::move(c));
}

}  // namespace

Prediction deterministic_score(const ReasoningInputs& in, Target target, const ReasonParams& params) {
  const auto ti = static_cast<std::size_t>(target);
  Prediction pred;
  pred.patient_id = in.profile.patient_id;
  pred.target = target;
  pred.mode = Mode::Deterministic;

  const auto [mem_pos, mem_n] = in.memory_counts[ti];
  const double prior = smoothed_rate(mem_pos, mem_n);
  double z = logit(prior);
  std::vector<std::string> why;
  why.push_back("prior " + fixed(prior, 3) + (mem_n > 0 ? " (" + std::to_string(mem_n) + " stored cases)" : " (no memory)"));

  std::vector<Citation> profile_cites, case_cites, trial_cites;
  bool any_factor = false;
  for (const auto& f : in.factors) {
    if (f.target != target) continue;
    any_factor = true;
    const double e = factor_effect(f, prior, params.delta);
    z += e;
    why.push_back(f.condition() + " [" + effect_text(f) + "] " + (e >= 0 ? "+" : "") + fixed(e, 3));
    add_unique(profile_cites, {CitationKind::Profile, f.field, get_field(in.profile, f.field).dump()});
    add_unique(trial_cites, {CitationKind::Trial, f.factor_id, f.condition() + ": " + effect_text(f) + " (" + f.source + ")"});
    for (const auto& hit : in.evidence) {
      if (std::find(hit.query.factor_ids.begin(), hit.query.factor_ids.end(), f.factor_id) == hit.query.factor_ids.end()) {
        continue;
      }
      for (const auto& c : hit.chunks) {
        add_unique(trial_cites, {CitationKind::Trial, c.chunk_id, text::collapse_spaces(c.text).substr(0, 160)});
      }
    }
  }

  const int labeled = in.retrieval.labeled;
  if (labeled > 0) {
    const int pos = in.retrieval.positives[ti];
    const double p_tilde = smoothed_rate(pos, labeled);
    const double blend = params.lambda * (logit(p_tilde) - logit(prior));
    z += blend;
    why.push_back(std::to_string(pos) + "/" + std::to_string(labeled) + " similar cases positive, blend " +
                  (blend >= 0 ? "+" : "") + fixed(blend, 3));
    for (const auto& c : in.retrieval.cases) {
      if (!c.entry->outcome) continue;
      add_unique(case_cites, {CitationKind::Case, c.entry->entry_id,
                              "similarity " + fixed(c.similarity, 3) + "; " + std::string(to_string(target)) + "=" +
                                  (c.entry->outcome->get(target) ? "1" : "0")});
    }
    for (auto name : kSimilarityFields) {
      json v = get_field(in.profile, name);
      if (!is_unknown(v)) add_unique(profile_cites, {CitationKind::Profile, std::string(name), v.dump()});
    }
  }

  if (!any_factor && labeled == 0 && mem_n == 0) {
    pred.probability = 0.5;
    pred.label = true;
    pred.warning = true;
    pred.citations = {{CitationKind::Profile, "patient_id", in.profile.patient_id}};
    pred.rationale = "insufficient inputs: no factors, no similar cases and no memory prior; fallback 0.5";
    return pred;
  }

  pred.probability = sigmoid(z);
  pred.label = pred.probability >= 0.5;
  pred.citations = std::move(profile_cites);
  pred.citations.insert(pred.citations.end(), case_cites.begin(), case_cites.end());
  pred.citations.insert(pred.citations.end(), trial_cites.begin(), trial_cites.end());
  if (pred.citations.empty()) pred.citations.push_back({CitationKind::Profile, "patient_id", in.profile.patient_id});
  why.push_back("p=" + fixed(pred.probability, 3));
  std::string r;
  for (std::size_t i = 0; i < why.size(); ++i) r += (i ? "; " : "") + why[i];
  pred.rationale = std::move(r);
  return pred;
}

SuppliedRefs supplied_refs(const ReasoningInputs& in) {
  SuppliedRefs refs;
  refs.profile.insert("patient_id");
  for (const auto& f : profile_fields()) {
    if (!is_unknown(get_field(in.profile, f.name))) refs.profile.insert(std::string(f.name));
  }
  for (const auto& c : in.retrieval.cases) refs.cases.insert(c.entry->entry_id);
  for (const auto& f : in.factors) refs.trials.insert(f.factor_id);
  for (const auto& hit : in.evidence) {
    for (const auto& c : hit.chunks) refs.trials.insert(c.chunk_id);
  }
  return refs;
}

CitationReport validate_citations(const Prediction& pred, const SuppliedRefs& refs) {
  CitationReport r;
  if (pred.citations.empty()) r.violations.emplace_back("citations non-empty");
  for (const auto& c : pred.citations) {
    const auto& pool = c.kind == CitationKind::Profile ? refs.profile
                       : c.kind == CitationKind::Case  ? refs.cases
                                                       : refs.trials;
    if (!pool.contains(c.ref)) r.unresolved.push_back(citation_tag(c));
  }
  return r;
}

// ---- model path -----------------------------------------------------------

std::string citation_tag(const Citation& c) {
  const char* prefix = c.kind == CitationKind::Profile ? "P:" : c.kind == CitationKind::Case ? "C:" : "T:";
  return prefix + c.ref;
}

std::optional<Citation> parse_citation_tag(std::string_view tag) {
  if (tag.size() < 3 || tag[1] != ':') return std::nullopt;
  Citation c;
  switch (tag[0]) {
    case 'P': c.kind = CitationKind::Profile; break;
    case 'C': c.kind = CitationKind::Case; break;
    case 'T': c.kind = CitationKind::Trial; break;
    default: return std::nullopt;
  }
  c.ref = std::string(tag.substr(2));
  return c;
}

void register_reasoning_schemas(SchemaRegistry& registry) {
  registry.add(std::string(kReasonerSchema), [](const json& j) {
    std::vector<std::string> v;
    if (!j.is_object() || !j.contains("predictions") || !j.at("predictions").is_array()) {
      return std::vector<std::string>{"missing 'predictions' array"};
    }
    std::set<std::string> seen;
    for (const auto& p : j.at("predictions")) {
      if (!p.is_object()) {
        v.emplace_back("prediction must be an object");
        continue;
      }
      const std::string t = p.value("target", std::string{});
      if (!parse_target(t)) v.push_back("invalid target '" + t + "'");
      else if (!seen.insert(t).second) v.push_back("duplicate target '" + t + "'");
      if (!p.contains("label") || !p.at("label").is_boolean()) v.emplace_back(t + ": 'label' must be a boolean");
      if (!p.contains("probability") || !p.at("probability").is_number()) {
        v.emplace_back(t + ": 'probability' must be a number");
      } else if (double x = p.at("probability").get<double>(); x < 0 || x > 1) {
        v.emplace_back(t + ": 'probability' must lie in [0,1]");
      }
      if (!p.contains("citations") || !p.at("citations").is_array() || p.at("citations").empty()) {
        v.emplace_back(t + ": 'citations' must be a non-empty array");
      } else {
        for (const auto& c : p.at("citations")) {
          if (!c.is_string() || !parse_citation_tag(c.get<std::string>())) {
            v.emplace_back(t + ": citation " + c.dump() + " is not a P:/C:/T: tag");
          }
        }
      }
    }
    for (Target t : kTargets) {
      if (!seen.contains(std::string(to_string(t)))) v.push_back("missing prediction for " + std::string(to_string(t)));
    }
    return v;
  });
}

std::string render_reasoner_prompt(const ReasoningInputs& in, const PromptLibrary& prompts) {
  std::string profile, cases, patterns, trials;
  for (const auto& f : profile_fields()) {
    json v = get_field(in.profile, f.name);
    if (!is_unknown(v)) profile += "[P:" + std::string(f.name) + "] " + v.dump() + "\n";
  }
  for (const auto& c : in.retrieval.cases) {
    cases += "[C:" + c.entry->entry_id + "] similarity=" + fixed(c.similarity, 3);
    if (c.entry->outcome) {
      cases += std::string(" psa_response=") + (c.entry->outcome->psa_response ? "1" : "0") +
               " os_gt_12m=" + (c.entry->outcome->os_gt_12m ? "1" : "0");
    } else {
      cases += " outcome=pending";
    }
    cases += "\n";
  }
  for (const auto& p : in.retrieval.matched_patterns) {
    patterns += "- " + p.describe() + " -> " + std::string(to_string(p.target)) + " " + std::to_string(p.positives) +
                "/" + std::to_string(p.support) + "\n";
  }
  for (const auto& f : in.factors) {
    trials += "[T:" + f.factor_id + "] " + f.condition() + " -> " + std::string(to_string(f.target)) + " " +
              std::string(to_string(f.direction)) + " (" + effect_text(f) + "; " + f.source + ")\n";
  }
  std::set<std::string> seen;
  for (const auto& hit : in.evidence) {
    for (const auto& c : hit.chunks) {
      if (!seen.insert(c.chunk_id).second) continue;
      trials += "[T:" + c.chunk_id + "] (" + c.source_tag + ") " + text::collapse_spaces(c.text) + "\n";
    }
  }
  std::string base;
  for (Target t : kTargets) {
    const auto [pos, n] = in.memory_counts[static_cast<std::size_t>(t)];
    base += std::string(to_string(t)) + ": " + std::to_string(pos) + "/" + std::to_string(n) + "\n";
  }
  auto or_none = [](std::string s) { return s.empty() ? std::string("(none)\n") : s; };
  return prompts.render(kReasonerTemplate, {{"patient_id", in.profile.patient_id},
                                            {"profile", or_none(profile)},
                                            {"cases", or_none(cases)},
                                            {"patterns", or_none(patterns)},
                                            {"trials", or_none(trials)},
                                            {"base_rates", base}});
}

namespace {

std::vector<Prediction> parse_model_predictions(const ReasoningInputs& in, const json& value, int attempts) {
  std::vector<Prediction> out;
  for (Target t : kTargets) {
    for (const auto& p : value.at("predictions")) {
      if (p.at("target").get<std::string>() != to_string(t)) continue;
      Prediction pred;
      pred.patient_id = in.profile.patient_id;
      pred.target = t;
      pred.mode = Mode::Model;
      pred.label = p.at("label").get<bool>();
      pred.probability = p.at("probability").get<double>();
      pred.rationale = p.value("rationale", std::string{});
      pred.attempts = attempts;
      for (const auto& c : p.at("citations")) add_unique(pred.citations, *parse_citation_tag(c.get<std::string>()));
      out.push_back(std::move(pred));
    }
  }
  return out;
}

}  // namespace

std::vector<Prediction> model_predict(const ReasoningInputs& in, Gateway& gateway, const PromptLibrary& prompts,
                                      const ReasonParams& params) {
  const SuppliedRefs refs = supplied_refs(in);
  const std::string prompt = render_reasoner_prompt(in, prompts);
  std::string repair;
  int attempts = 0;
  for (int round = 0; round < 2; ++round) {
    PromptRequest req;
    req.template_id = std::string(kReasonerTemplate);
    req.rendered_prompt = prompt + repair;
    StructuredText st;
    try {
      st = gateway.complete_structured(std::move(req), kReasonerSchema);
    } catch (const SchemaFailure&) {
      attempts += gateway.options().retries;
      break;
    }
    attempts += st.attempts;
    auto preds = parse_model_predictions(in, st.value, attempts);
    std::vector<std::string> unresolved;
    for (const auto& p : preds) {
      auto rep = validate_citations(p, refs);
      unresolved.insert(unresolved.end(), rep.unresolved.begin(), rep.unresolved.end());
    }
    if (unresolved.empty()) return preds;
    repair = "\n\nCitation errors (cite only the bracketed tags supplied above):\n";
    for (const auto& u : unresolved) repair += "- " + u + " was not supplied\n";
  }
  std::vector<Prediction> out;
  for (Target t : kTargets) {
    Prediction p = deterministic_score(in, t, params);
    p.attempts = std::max(1, attempts);
    p.rationale = "model output rejected; deterministic fallback. " + p.rationale;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace theraloop
