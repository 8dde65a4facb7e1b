#pragma once

// Shared fixtures: tiny random models, random inputs, a synthetic store.

#include "trialsum/corpus_synth.hpp"
#include "trialsum/decoding.hpp"
#include "trialsum/model.hpp"
#include "trialsum/tokenizer.hpp"

#include <random>
#include <vector>

namespace trialsum::testing {

inline ModelConfig tiny_config(Architecture arch, int vocab_size, int width = 8) {
  ModelConfig c;
  c.architecture = arch;
  c.vocab_size = vocab_size;
  c.width = width;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.n_aspect_layers = 1;
  c.max_src_len = 24;
  c.max_tgt_len = 40;
  return c;
}

template <typename Scalar>
SummaryModel<Scalar> tiny_model(Architecture arch, int vocab_size, std::uint64_t seed, int width = 8) {
  const auto c = tiny_config(arch, vocab_size, width);
  return SummaryModel<Scalar>(c, init_params<Scalar>(c, seed));
}

/// Random word ids from the non-special range.
inline std::vector<TokenId> random_words(std::mt19937_64& rng, int vocab_size, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> word(special::count, static_cast<TokenId>(vocab_size - 1));
  std::vector<TokenId> out(static_cast<std::size_t>(len(rng)));
  for (auto& t : out) t = word(rng);
  return out;
}

/// A bundle with one document and 1..6 random words per aspect.
inline AspectBundle random_bundle(std::mt19937_64& rng, int vocab_size) {
  AspectBundle b;
  for (Aspect a : kAllAspects) {
    auto& seq = b.aspects[static_cast<std::size_t>(aspect_index(a))];
    seq.push_back(special::open_tag(a));
    const auto words = random_words(rng, vocab_size, 1, 6);
    seq.insert(seq.end(), words.begin(), words.end());
    seq.push_back(special::close_tag(a));
    b.interleaved.insert(b.interleaved.end(), seq.begin(), seq.end());
  }
  return b;
}

/// Generated topics plus a store over their records.
struct SynthFixture {
  std::vector<SynthExample> examples;
  TrialStore store;
  Vocabulary vocab;

  explicit SynthFixture(std::uint64_t seed = 0, int topics = 4, int trials = 3)
      : examples(generate(SynthSpec{seed, topics, trials, {}})),
        store(TrialStore::parse(records_jsonl(examples))),
        vocab(training_vocabulary(examples)) {}
};

}  // namespace trialsum::testing
