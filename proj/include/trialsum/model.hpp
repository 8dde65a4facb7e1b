#pragma once

// Toy-scale encoder-decoder summarisers.
//
// Baseline: one encoder pass over the tagged, document-interleaved input and a
// single decoder stack.
//
// Multihead: each aspect sequence is encoded separately by the shared encoder.
// Each aspect k then runs its own decoder stream: the lower decoder layers
// share parameters across aspects, the top `n_aspect_layers` are aspect
// specific, and every layer of stream k cross-attends only to the encoding of
// aspect k. The streams share the output projection (tied to the embedding),
// giving per-aspect distributions p_k. The gate vector w maps each stream's
// final state y_k to a logit y_k . w; z = softmax(logits) mixes the streams:
//     p = sum_k z_k p_k.

#include "trialsum/aspect.hpp"
#include "trialsum/autograd.hpp"
#include "trialsum/tokenizer.hpp"
#include "trialsum/trial_store.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trialsum {

enum class Architecture { baseline, multihead };

std::string_view architecture_name(Architecture a);
std::optional<Architecture> parse_architecture(std::string_view s);

struct ModelConfig {
  Architecture architecture = Architecture::multihead;
  int num_aspects = kNumAspects;
  int vocab_size = 0;
  int width = 64;
  int n_heads = 4;
  int ffn_mult = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 4;
  int n_aspect_layers = 2;  // top decoder layers with per-aspect parameters
  int max_src_len = 256;    // per aspect
  int max_tgt_len = 300;

  int num_streams() const { return architecture == Architecture::multihead ? num_aspects : 1; }
  int shared_dec_layers() const { return n_dec_layers - n_aspect_layers; }

  /// Throws InputError on an inconsistent configuration.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Model input built from k trial records.
struct AspectBundle {
  // aspects[k]: <tag_k> doc1 <doc> doc2 ... </tag_k>
  std::array<std::vector<TokenId>, kNumAspects> aspects;
  // per document all four tagged spans, documents separated by <doc>
  std::vector<TokenId> interleaved;

  /// True when no aspect carries any token besides its tag pair.
  bool empty() const;
  bool aspect_empty(Aspect a) const { return aspects[static_cast<std::size_t>(aspect_index(a))].size() <= 2; }
};

/// Each aspect sequence is cut to max_src_len tokens from the document tail;
/// tag pairs are always kept. The interleaved sequence gets K times that budget.
AspectBundle make_bundle(const Vocabulary& vocab, std::span<const TrialRecord> records, int max_src_len);

/// Teacher-forcing view of one (input, target) pair.
struct TrainingExample {
  AspectBundle source;
  std::vector<TokenId> target;  // ends with EOS
  std::vector<int> labels;      // aspect index per target position, -1 outside tagged spans
};

/// Multihead targets drop the tag tokens and keep them as labels; baseline
/// targets keep tags as ordinary tokens. Throws InputError on malformed tags.
TrainingExample make_training_example(const Vocabulary& vocab, std::span<const TrialRecord> records,
                                      std::string_view tagged_target, const ModelConfig& config);

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
struct AttentionParams {
  ag::Parameter<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename Scalar>
struct NormParams {
  ag::Parameter<Scalar> gain, bias;
};

template <typename Scalar>
struct FeedForwardParams {
  ag::Parameter<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct EncoderLayerParams {
  NormParams<Scalar> norm1;
  AttentionParams<Scalar> self_attn;
  NormParams<Scalar> norm2;
  FeedForwardParams<Scalar> ffn;
};

template <typename Scalar>
struct DecoderLayerParams {
  NormParams<Scalar> norm1;
  AttentionParams<Scalar> self_attn;
  NormParams<Scalar> norm2;
  AttentionParams<Scalar> cross_attn;
  NormParams<Scalar> norm3;
  FeedForwardParams<Scalar> ffn;
};

template <typename Scalar>
struct DecoderTopParams {
  std::vector<DecoderLayerParams<Scalar>> layers;
  NormParams<Scalar> final_norm;
};

template <typename Scalar>
struct ModelParams {
  ag::Parameter<Scalar> embedding;    // V x D, tied with the output projection
  ag::Parameter<Scalar> output_bias;  // 1 x V
  std::vector<EncoderLayerParams<Scalar>> encoder;
  NormParams<Scalar> encoder_norm;
  std::vector<DecoderLayerParams<Scalar>> decoder;  // shared lower layers
  std::vector<DecoderTopParams<Scalar>> tops;       // one per stream
  ag::Parameter<Scalar> gate;                       // D x 1; 0 x 0 for baseline
};

/// Visits every parameter in a fixed order with a dotted name.
template <typename Params, typename Fn>
void for_each_parameter(Params& p, Fn&& fn) {
  auto attn = [&](const std::string& pre, auto& a) {
    fn(pre + ".wq", a.wq), fn(pre + ".bq", a.bq), fn(pre + ".wk", a.wk), fn(pre + ".bk", a.bk);
    fn(pre + ".wv", a.wv), fn(pre + ".bv", a.bv), fn(pre + ".wo", a.wo), fn(pre + ".bo", a.bo);
  };
  auto norm = [&](const std::string& pre, auto& n) { fn(pre + ".gain", n.gain), fn(pre + ".bias", n.bias); };
  auto ffn = [&](const std::string& pre, auto& f) {
    fn(pre + ".w1", f.w1), fn(pre + ".b1", f.b1), fn(pre + ".w2", f.w2), fn(pre + ".b2", f.b2);
  };
  auto dec = [&](const std::string& pre, auto& l) {
    norm(pre + ".norm1", l.norm1), attn(pre + ".self_attn", l.self_attn), norm(pre + ".norm2", l.norm2);
    attn(pre + ".cross_attn", l.cross_attn), norm(pre + ".norm3", l.norm3), ffn(pre + ".ffn", l.ffn);
  };
  fn(std::string("embedding"), p.embedding);
  fn(std::string("output_bias"), p.output_bias);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    auto& l = p.encoder[i];
    norm(pre + ".norm1", l.norm1), attn(pre + ".self_attn", l.self_attn), norm(pre + ".norm2", l.norm2);
    ffn(pre + ".ffn", l.ffn);
  }
  norm("encoder_norm", p.encoder_norm);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) dec("decoder." + std::to_string(i), p.decoder[i]);
  for (std::size_t k = 0; k < p.tops.size(); ++k) {
    const std::string pre = "tops." + std::to_string(k);
    for (std::size_t i = 0; i < p.tops[k].layers.size(); ++i) dec(pre + ".layers." + std::to_string(i), p.tops[k].layers[i]);
    norm(pre + ".final_norm", p.tops[k].final_norm);
  }
  if (p.gate.size() > 0) fn(std::string("gate"), p.gate);
}

/// Correctly shaped, zero-valued parameters.
template <typename Scalar>
ModelParams<Scalar> allocate_params(const ModelConfig& config);

/// Random initialisation: weights ~ N(0, 1/fan_in), norm gains 1, biases 0.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelConfig& config, const ModelParams<From>& from) {
  auto out = allocate_params<To>(config);
  std::vector<const ag::Parameter<From>*> src;
  for_each_parameter(from, [&](const std::string&, const ag::Parameter<From>& p) { src.push_back(&p); });
  std::size_t i = 0;
  for_each_parameter(out, [&](const std::string&, ag::Parameter<To>& p) {
    p.value = src.at(i++)->value.template cast<To>();
    p.zero_grad();
  });
  return out;
}

template <typename Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& p) {
  std::size_t n = 0;
  for_each_parameter(p, [&](const std::string&, const ag::Parameter<Scalar>& x) { n += static_cast<std::size_t>(x.size()); });
  return n;
}

// ---------------------------------------------------------------------------
// Forward passes

/// One decoding step. Probabilities are always double precision.
struct DecoderStepOutput {
  std::vector<Eigen::VectorXd> states;        // y_k, one per stream (D each)
  std::vector<Eigen::VectorXd> aspect_probs;  // p_k; empty for baseline
  Eigen::VectorXd gate_logits;                // y_k . w; empty for baseline
  Eigen::VectorXd weights;                    // z; empty for baseline
  Eigen::VectorXd probs;                      // mixed next-token distribution
};

/// sum_k weights[k] * dists[k]
Eigen::VectorXd mix(std::span<const Eigen::VectorXd> dists, const Eigen::VectorXd& weights);

/// Test hook: given the prefix length, optionally replaces the mixture weights z.
using GateOverride = std::function<std::optional<Eigen::VectorXd>(std::size_t prefix_length)>;

template <typename Scalar>
struct Encodings {
  std::vector<Matrix<Scalar>> streams;  // per aspect (multihead) or one (baseline)
};

template <typename Scalar>
struct LossResult {
  ag::Var<Scalar> loss;
  double nll = 0.0;  // mean token negative log-likelihood
  double aux = 0.0;  // mean gate cross-entropy over labelled tokens
  std::size_t labelled = 0;
};

template <typename Scalar>
class SummaryModel {
 public:
  SummaryModel(ModelConfig config, ModelParams<Scalar> params);

  const ModelConfig& config() const { return config_; }
  Architecture architecture() const { return config_.architecture; }
  const ModelParams<Scalar>& params() const { return params_; }
  ModelParams<Scalar>& mutable_params() { return params_; }

  /// Throws InputError if every aspect is empty.
  Encodings<Scalar> encode(const AspectBundle& bundle) const;

  /// Next-token distributions after `prefix` (which starts with BOS).
  DecoderStepOutput step(std::span<const TokenId> prefix, const Encodings<Scalar>& enc,
                         const GateOverride& gate_override = {}) const;

  /// Output i is the step after BOS + tokens[0..i); computed in one decoder pass.
  std::vector<DecoderStepOutput> teacher_force(std::span<const TokenId> tokens, const Encodings<Scalar>& enc) const;

  /// NLL of the target under the (mixed) distribution, plus lambda times the
  /// gate cross-entropy against tag labels (multihead only). Records on `tape`.
  LossResult<Scalar> forward_loss(const TrainingExample& example, Scalar lambda, ag::Tape<Scalar>& tape) const;

 private:
  ag::Var<Scalar> encode_sequence(ag::Tape<Scalar>& tape, std::span<const TokenId> ids) const;
  ag::Var<Scalar> embed_target(ag::Tape<Scalar>& tape, std::span<const TokenId> ids) const;
  ag::Var<Scalar> decode_stream(ag::Tape<Scalar>& tape, ag::Var<Scalar> x, ag::Var<Scalar> memory, int stream) const;
  std::vector<ag::Var<Scalar>> encode_all(ag::Tape<Scalar>& tape, const AspectBundle& bundle) const;
  std::vector<ag::Var<Scalar>> decode_all(ag::Tape<Scalar>& tape, std::span<const TokenId> dec_in,
                                          std::span<const ag::Var<Scalar>> memories) const;
  DecoderStepOutput readout(std::span<const ag::Var<Scalar>> states, Index row, std::size_t prefix_length,
                            const GateOverride& gate_override) const;

  ModelConfig config_;
  ModelParams<Scalar> params_;
  Matrix<Scalar> positions_;  // sinusoidal table
};

extern template class SummaryModel<float>;
extern template class SummaryModel<double>;

}  // namespace trialsum
