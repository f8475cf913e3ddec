#include "theraloop/consensus.hpp"

#include <algorithm>
#include <array>

namespace theraloop {

int precedence_rank(FieldGroup group, Expert expert) {
  static constexpr std::array<std::array<Expert, 3>, 3> kOrder{{
      {Expert::Radiologist, Expert::Biochemist, Expert::Oncologist},
      {Expert::Biochemist, Expert::Oncologist, Expert::Radiologist},
      {Expert::Oncologist, Expert::Biochemist, Expert::Radiologist},
  }};
  const auto& order = kOrder[static_cast<std::size_t>(group)];
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == expert) return static_cast<int>(i);
  }
  return static_cast<int>(order.size());
}

void register_consensus_schemas(SchemaRegistry& registry) {
  registry.add(std::string(kAdjudicationSchema), [](const json& j) {
    std::vector<std::string> v;
    if (!j.is_object()) return std::vector<std::string>{"response must be an object"};
    if (!j.contains("field") || !j.at("field").is_string()) v.emplace_back("missing string 'field'");
    if (!j.contains("value")) v.emplace_back("missing 'value'");
    else if (j.at("value").is_null()) v.emplace_back("'value' must not be null");
    return v;
  });
}

namespace {

double field_confidence(const ExpertOutput& out, const std::string& field) {
  auto it = out.field_confidences.find(field);
  return std::clamp(it != out.field_confidences.end() ? it->second : out.confidence, 0.0, 1.0);
}

// Highest confidence first, then group precedence.
bool ranks_before(const ConflictCandidate& a, const ConflictCandidate& b, FieldGroup g) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return precedence_rank(g, a.expert) < precedence_rank(g, b.expert);
}

std::optional<json> adjudicate(const std::string& field, const std::vector<ConflictCandidate>& candidates,
                               const IntegrationContext& ctx) {
  json quoted = json::array();
  for (const auto& c : candidates) {
    quoted.push_back({{"expert", to_string(c.expert)}, {"value", c.value}, {"confidence", c.confidence}});
  }
  PromptRequest req;
  req.template_id = std::string(kIntegratorTemplate);
  req.rendered_prompt = ctx.prompts->render(kIntegratorTemplate, {{"field", field}, {"candidates", quoted.dump(2)}});
  try {
    StructuredText st = ctx.gateway->complete_structured(std::move(req), kAdjudicationSchema);
    const json& v = st.value.at("value");
    for (const auto& c : candidates) {
      if (c.value == v) return v;
    }
  } catch (const SchemaFailure&) {
  }
  return std::nullopt;
}

}  // namespace

UnifiedProfile integrate(const std::string& patient_id, std::span<const ExpertOutput> outputs,
                         const IntegrationContext& ctx) {
  if (outputs.size() != 3) {
    throw ArityError("integrate expects exactly 3 expert outputs, got " + std::to_string(outputs.size()));
  }
  std::array<const ExpertOutput*, 3> by_role{};
  for (const auto& out : outputs) {
    const auto role = static_cast<std::size_t>(out.expert);
    if (role >= by_role.size() || by_role[role]) {
      throw ArityError("integrate expects one output per expert role; duplicate or invalid " +
                       std::string(to_string(out.expert)));
    }
    if (fragment_owner(out.fragment) != out.expert) {
      throw DataError("fragment variant does not match expert " + std::string(to_string(out.expert)));
    }
    by_role[role] = &out;
  }
  if (ctx.mode == Mode::Model && (!ctx.gateway || !ctx.prompts)) {
    throw ConfigError("Model-mode integration requires a gateway and prompt library");
  }

  std::array<std::map<std::string, json>, 3> own;
  for (std::size_t r = 0; r < 3; ++r) own[r] = fragment_fields(by_role[r]->fragment);

  UnifiedProfile p;
  p.patient_id = patient_id;
  for (const auto& info : profile_fields()) {
    const std::string name(info.name);
    std::vector<ConflictCandidate> cands;
    for (std::size_t r = 0; r < 3; ++r) {
      const ExpertOutput& out = *by_role[r];
      json v = out.expert == info.owner ? own[r].at(name) : json(nullptr);
      if (out.expert != info.owner) {
        if (auto it = out.cross_fields.find(name); it != out.cross_fields.end()) v = it->second;
      }
      if (!is_unknown(v)) cands.push_back({out.expert, std::move(v), field_confidence(out, name)});
    }
    if (cands.empty()) continue;
    std::sort(cands.begin(), cands.end(),
              [&](const auto& a, const auto& b) { return ranks_before(a, b, info.group); });
    const bool disagree = std::any_of(cands.begin(), cands.end(), [&](const auto& c) { return c.value != cands[0].value; });

    const ConflictCandidate* winner = &cands.front();
    if (disagree) {
      ConflictNote note;
      note.field = name;
      note.rule = cands.size() > 1 && cands[0].confidence > cands[1].confidence ? ResolutionRule::HigherConfidence
                                                                                : ResolutionRule::ExpertPrecedence;
      if (ctx.mode == Mode::Model) {
        if (auto chosen = adjudicate(name, cands, ctx)) {
          for (const auto& c : cands) {
            if (c.value == *chosen) {
              winner = &c;
              break;
            }
          }
          note.rule = ResolutionRule::EvidenceReview;
        }
      }
      note.resolution = winner->value;
      note.candidates = cands;
      p.conflicts.push_back(std::move(note));
    }
    try {
      set_field(p, name, winner->value);
    } catch (const DataError& e) {
      throw DataError("integrate: field " + name + ": " + e.what());
    }
    p.provenance[name] = Provenance{winner->expert, winner->confidence};
  }
  return p;
}

double overall_confidence(const UnifiedProfile& profile) {
  double sum = 0.0;
  int n = 0;
  for (const auto& info : profile_fields()) {
    if (is_unknown(get_field(profile, info.name))) continue;
    auto it = profile.provenance.find(std::string(info.name));
    sum += it != profile.provenance.end() ? it->second.confidence : 0.0;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

}  // namespace theraloop
