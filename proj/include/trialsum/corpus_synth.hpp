#pragma once

#include "trialsum/direction.hpp"
#include "trialsum/tokenizer.hpp"
#include "trialsum/trial_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace trialsum {

/// Term and sentence-frame banks the synthetic corpus is drawn from.
struct PhraseBanks {
  struct Term {
    std::string text;
    std::string mesh;
  };
  std::vector<Term> populations, interventions, outcomes;
  std::vector<std::string> population_frames, intervention_frames, outcome_frames, title_frames;
  std::map<Direction, std::vector<std::string>> punchline_frames;
  // "[I] ... [O] ... [P]" frames; words outside slots become punchline spans
  std::map<Direction, std::vector<std::string>> target_frames;

  static PhraseBanks from_json(const nlohmann::json& j);
  /// The checked-in banks (data/phrase_banks.json).
  static const PhraseBanks& builtin();
};

struct SynthSpec {
  std::uint64_t seed = 0;
  int n_topics = 20;
  int trials_per_topic = 5;
  // One per topic; empty means drawn from the seed.
  std::vector<Direction> directions;
};

struct SynthExample {
  std::string topic_id;
  std::vector<TrialRecord> records;
  std::string target;  // aspect spans wrapped in tag pairs
  Direction direction = Direction::effective;
};

/// Deterministic in the spec: the same seed gives a byte-identical corpus.
std::vector<SynthExample> generate(const SynthSpec& spec, const PhraseBanks& banks = PhraseBanks::builtin());

/// Renders a target frame with its slots filled, as tagged text.
std::string render_target_frame(std::string_view frame, std::string_view intervention, std::string_view outcome,
                                std::string_view population);

/// One text per bank entry; covers every word the generator can emit.
std::vector<std::string> lexicon(const PhraseBanks& banks = PhraseBanks::builtin());

/// Vocabulary over the examples' records and targets plus the bank lexicon,
/// so held-out topics drawn from the same banks have no unknown words.
Vocabulary training_vocabulary(std::span<const SynthExample> examples, const PhraseBanks& banks = PhraseBanks::builtin());

/// Removes tag strings and normalises whitespace.
std::string strip_tags(std::string_view tagged);

std::string records_jsonl(const std::vector<SynthExample>& examples);
std::string targets_jsonl(const std::vector<SynthExample>& examples);

/// Joins a targets file against the store's records.
std::vector<SynthExample> load_examples(const TrialStore& store, const std::filesystem::path& targets_path);
std::vector<SynthExample> parse_examples(const TrialStore& store, std::string_view targets_jsonl);

}  // namespace trialsum
