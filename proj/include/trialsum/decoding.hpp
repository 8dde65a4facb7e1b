#pragma once

// Greedy and beam-search decoding over anything that can produce a
// next-token distribution for a prefix.

#include "trialsum/errors.hpp"
#include "trialsum/model.hpp"
#include "trialsum/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <vector>

namespace trialsum {

struct DecodeConfig {
  int beam_size = 3;
  int min_len = 10;    // tokens before EOS is allowed
  int max_len = 300;   // tokens emitted, EOS included
  double alpha = 0.0;  // length normalisation exponent

  void validate() const {
    if (beam_size < 1 || beam_size > 16) throw InputError("beam_size must be in [1, 16]");
    if (min_len < 1 || min_len > max_len) throw InputError("need 1 <= min_len <= max_len");
    if (!(alpha >= 0.0)) throw InputError("alpha must be >= 0");
  }
};

/// `step(prefix)` returns the distribution after `prefix`, which starts with BOS.
template <typename S>
concept StepSource = requires(const S& s, std::span<const TokenId> prefix) {
  { s.step(prefix) } -> std::convertible_to<DecoderStepOutput>;
  { s.vocab_size() } -> std::convertible_to<std::size_t>;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // excludes BOS; ends with EOS when finished
  double score = 0.0;           // sum of log-probabilities
  bool finished = false;
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::vector<DecoderStepOutput> trace;  // trace[i] is the step that emitted tokens[i]
  double score = 0.0;
  bool finished = false;
  std::vector<Hypothesis> beam;  // final beam, best first (beam search only)
};

namespace detail {

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); }

inline std::vector<TokenId> with_bos(std::span<const TokenId> tokens) {
  std::vector<TokenId> out{special::bos};
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

/// One output per token: the distribution that emitted it.
template <StepSource S>
std::vector<DecoderStepOutput> replay(const S& source, std::span<const TokenId> tokens) {
  if constexpr (requires { { source.teacher_force(tokens) } -> std::convertible_to<std::vector<DecoderStepOutput>>; }) {
    return source.teacher_force(tokens);
  } else {
    std::vector<DecoderStepOutput> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(source.step(with_bos(tokens.first(i))));
    return out;
  }
}

inline double ranked_score(const Hypothesis& h, double alpha) {
  if (alpha == 0.0 || h.tokens.empty()) return h.score;
  return h.score / std::pow(static_cast<double>(h.tokens.size()), alpha);
}

// Score descending, then token ids lexicographically ascending.
inline bool hyp_before(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = ranked_score(a, alpha);
  const double sb = ranked_score(b, alpha);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Sum of log-probabilities of `tokens` under `trace`.
inline double sequence_score(std::span<const DecoderStepOutput> trace, std::span<const TokenId> tokens) {
  if (trace.size() != tokens.size()) throw InputError("trace and tokens differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) s += detail::safe_log(trace[i].probs(tokens[i]));
  return s;
}

/// Argmax token each step (lowest id on ties); EOS masked before min_len.
template <StepSource S>
DecodeResult greedy(const S& source, const DecodeConfig& config) {
  config.validate();
  DecodeResult r;
  std::vector<TokenId> prefix{special::bos};
  for (int t = 0; t < config.max_len; ++t) {
    auto out = source.step(prefix);
    TokenId best = -1;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (Index v = 0; v < out.probs.size(); ++v) {
      if (v == special::eos && t < config.min_len) continue;
      const double lp = detail::safe_log(out.probs(v));
      if (best < 0 || lp > best_lp) {
        best = static_cast<TokenId>(v);
        best_lp = lp;
      }
    }
    r.tokens.push_back(best);
    r.score += best_lp;
    r.trace.push_back(std::move(out));
    prefix.push_back(best);
    if (best == special::eos) {
      r.finished = true;
      break;
    }
  }
  return r;
}

/// Length-synchronous beam search. Finished hypotheses keep their beam slot,
/// so beam_size 1 reproduces greedy exactly. The returned trace is recomputed
/// by teacher forcing the winning sequence.
template <StepSource S>
DecodeResult beam_search(const S& source, const DecodeConfig& config) {
  config.validate();
  const auto B = static_cast<std::size_t>(config.beam_size);
  const double alpha = config.alpha;
  auto before = [alpha](const Hypothesis& a, const Hypothesis& b) { return detail::hyp_before(a, b, alpha); };

  std::vector<Hypothesis> beam{Hypothesis{}};
  for (int t = 0; t < config.max_len; ++t) {
    std::vector<Hypothesis> cand;
    for (const auto& h : beam) {
      if (h.finished) {
        cand.push_back(h);
        continue;
      }
      const auto out = source.step(detail::with_bos(h.tokens));
      // Per-parent top-B is enough for the global top-B.
      std::vector<std::pair<double, TokenId>> next;
      for (Index v = 0; v < out.probs.size(); ++v) {
        if (v == special::eos && t < config.min_len) continue;
        next.emplace_back(detail::safe_log(out.probs(v)), static_cast<TokenId>(v));
      }
      const std::size_t keep = std::min(B, next.size());
      std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                        [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      for (std::size_t i = 0; i < keep; ++i) {
        Hypothesis c = h;
        c.tokens.push_back(next[i].second);
        c.score += next[i].first;
        c.finished = next[i].second == special::eos;
        cand.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(B, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), before);
    cand.resize(keep);
    beam = std::move(cand);

    const bool all_done = std::all_of(beam.begin(), beam.end(), [](const Hypothesis& h) { return h.finished; });
    if (all_done) break;
    // Live scores only decrease, so a finished leader cannot be overtaken.
    if (alpha == 0.0 && beam.front().finished) break;
  }
  std::sort(beam.begin(), beam.end(), before);

  DecodeResult r;
  r.tokens = beam.front().tokens;
  r.score = beam.front().score;
  r.finished = beam.front().finished;
  r.trace = detail::replay(source, r.tokens);
  r.beam = std::move(beam);
  return r;
}

/// A model bound to one input bundle.
template <typename Scalar>
class ModelSession {
 public:
  ModelSession(const SummaryModel<Scalar>& model, const AspectBundle& bundle, GateOverride gate_override = {})
      : model_(&model), enc_(model.encode(bundle)), override_(std::move(gate_override)) {}

  const SummaryModel<Scalar>& model() const { return *model_; }
  const Encodings<Scalar>& encodings() const { return enc_; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(model_->config().vocab_size); }

  DecoderStepOutput step(std::span<const TokenId> prefix) const { return model_->step(prefix, enc_, override_); }

  std::vector<DecoderStepOutput> teacher_force(std::span<const TokenId> tokens) const {
    if (!override_) return model_->teacher_force(tokens, enc_);
    std::vector<DecoderStepOutput> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(step(detail::with_bos(tokens.first(i))));
    return out;
  }

 private:
  const SummaryModel<Scalar>* model_;
  Encodings<Scalar> enc_;
  GateOverride override_;
};

}  // namespace trialsum
