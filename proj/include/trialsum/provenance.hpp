#pragma once

#include "trialsum/aspect.hpp"
#include "trialsum/model.hpp"
#include "trialsum/trial_store.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trialsum {

/// Which aspect's distribution dominated one output token.
struct TokenAttribution {
  Aspect aspect = Aspect::population;  // argmax of z; lowest index on ties
  double confidence = 0.0;             // z at the argmax, in [1/K, 1]
  double entropy = 0.0;                // of z, in nats
  Eigen::VectorXd weights;             // z
};

/// Throws Unsupported when the step carries no mixture weights (baseline).
TokenAttribution attribute(const DecoderStepOutput& step);

/// One attribution per output token. Throws InputError if the lengths differ.
std::vector<TokenAttribution> trace_summary(std::span<const DecoderStepOutput> trace, std::size_t n_tokens);

struct Snippet {
  std::string trial_id;
  std::string text;
};

struct ProvenanceView {
  std::string token;
  std::optional<Aspect> aspect;
  std::optional<double> confidence;
  bool literal = false;  // copied from a template rather than generated
  std::vector<Snippet> snippets;
  std::string note;  // set when no provenance is available
};

inline constexpr std::string_view kNoProvenance = "no provenance available: the baseline model has no mixture weights";
inline constexpr std::string_view kLiteralProvenance = "template literal: not generated by the model";

/// The attributed aspect's field from every record, in retrieval order.
ProvenanceView snippets_for_token(std::size_t index, std::span<const std::string> token_texts,
                                  std::span<const TokenAttribution> attributions,
                                  std::span<const TrialRecord> records);

ProvenanceView no_provenance(std::string token, std::string_view note = kNoProvenance);

nlohmann::json to_json(const ProvenanceView& view);

}  // namespace trialsum
