#include "trialsum/provenance.hpp"

#include "trialsum/errors.hpp"

#include <cmath>

namespace trialsum {

TokenAttribution attribute(const DecoderStepOutput& step) {
  if (step.weights.size() == 0) throw Unsupported(std::string(kNoProvenance));
  TokenAttribution a;
  a.weights = step.weights;
  const Index k = argmax(step.weights);
  a.aspect = static_cast<Aspect>(k);
  a.confidence = step.weights(k);
  for (Index i = 0; i < step.weights.size(); ++i) {
    const double z = step.weights(i);
    if (z > 0.0) a.entropy -= z * std::log(z);
  }
  return a;
}

std::vector<TokenAttribution> trace_summary(std::span<const DecoderStepOutput> trace, std::size_t n_tokens) {
  if (trace.size() != n_tokens) {
    throw InputError("trace has " + std::to_string(trace.size()) + " steps for " + std::to_string(n_tokens) + " tokens");
  }
  std::vector<TokenAttribution> out;
  out.reserve(trace.size());
  for (const auto& s : trace) out.push_back(attribute(s));
  return out;
}

ProvenanceView snippets_for_token(std::size_t index, std::span<const std::string> token_texts,
                                  std::span<const TokenAttribution> attributions,
                                  std::span<const TrialRecord> records) {
  if (token_texts.size() != attributions.size()) throw InputError("token texts and attributions differ in length");
  if (index >= attributions.size()) {
    throw InputError("token index " + std::to_string(index) + " out of range for " +
                     std::to_string(attributions.size()) + " tokens");
  }
  const auto& at = attributions[index];
  ProvenanceView v;
  v.token = token_texts[index];
  v.aspect = at.aspect;
  v.confidence = at.confidence;
  for (const auto& r : records) v.snippets.push_back({r.id, r.aspect_text(at.aspect)});
  return v;
}

ProvenanceView no_provenance(std::string token, std::string_view note) {
  ProvenanceView v;
  v.token = std::move(token);
  v.note = std::string(note);
  return v;
}

nlohmann::json to_json(const ProvenanceView& view) {
  nlohmann::json snippets = nlohmann::json::array();
  for (const auto& s : view.snippets) snippets.push_back({{"trial_id", s.trial_id}, {"text", s.text}});
  nlohmann::json j{{"token", view.token},
                   {"aspect", view.aspect ? nlohmann::json(aspect_name(*view.aspect)) : nlohmann::json(nullptr)},
                   {"confidence", view.confidence ? nlohmann::json(*view.confidence) : nlohmann::json(nullptr)},
                   {"literal", view.literal},
                   {"snippets", snippets}};
  if (!view.note.empty()) j["note"] = view.note;
  return j;
}

}  // namespace trialsum
