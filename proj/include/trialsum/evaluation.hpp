#pragma once

#include "trialsum/corpus_synth.hpp"
#include "trialsum/decoding.hpp"
#include "trialsum/direction.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace trialsum {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Length of the longest common subsequence.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Sentence-level ROUGE-L over normalised tokens with tags removed. An empty
/// side scores (0, 0, 0).
RougeScore rouge_l(std::string_view hypothesis, std::string_view reference);

enum class DirectionLabel { significant, not_significant };

std::string_view label_name(DirectionLabel l);

/// significant for effective; not_significant otherwise.
DirectionLabel expected_label(Direction d);

struct Classification {
  DirectionLabel label = DirectionLabel::not_significant;
  int significant_cues = 0;
  int not_significant_cues = 0;
  bool defaulted = false;  // no cue fired
};

class DirectionClassifier {
 public:
  virtual ~DirectionClassifier() = default;
  virtual Classification classify(std::string_view text) const = 0;
};

/// Cue-phrase rules. Scanning left to right, the longest cue starting at each
/// position wins and consumes its tokens. A significant cue with a negator in
/// the three preceding tokens counts as not significant. The label is
/// significant only when significant cues outnumber the rest; with no cue at
/// all it defaults to not significant.
class RuleClassifier final : public DirectionClassifier {
 public:
  RuleClassifier();
  Classification classify(std::string_view text) const override;

  static const std::vector<std::string>& significant_cues();
  static const std::vector<std::string>& not_significant_cues();
  static const std::vector<std::string>& negators();

 private:
  struct Cue {
    std::vector<std::string> tokens;
    bool significant;
  };
  std::vector<Cue> cues_;  // longest first
};

Classification classify_direction(std::string_view text);

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Binary F1 with significant as the positive class. P, R and F1 are 1 when
/// neither side has a positive, and 0 when their denominators vanish otherwise.
F1Score f1_from_counts(long tp, long fp, long fn, long tn);

/// Throws InputError when the lists differ in length.
F1Score directionality_f1(std::span<const std::string> hypotheses, std::span<const std::string> references,
                          const DirectionClassifier& classifier);
F1Score directionality_f1(std::span<const std::string> hypotheses, std::span<const std::string> references);

struct EvalReport {
  std::string split;
  std::size_t n_examples = 0;
  RougeScore rouge_l;  // macro average
  F1Score directionality;
  std::size_t defaulted_hypotheses = 0;
  std::size_t defaulted_references = 0;
};

/// Throws InputError on an empty or misaligned split.
EvalReport score_split(std::string split, std::span<const std::string> hypotheses,
                       std::span<const std::string> references);

/// Decodes every example (beam search) and scores it against its untagged target.
template <typename Scalar>
EvalReport evaluate_split(const SummaryModel<Scalar>& model, const Vocabulary& vocab,
                          std::span<const SynthExample> examples, const DecodeConfig& config, std::string split,
                          std::vector<std::string>* hypotheses = nullptr);

nlohmann::json to_json(const EvalReport& r);

/// Aligned columns, values in percent with one decimal.
std::string format_table(std::span<const EvalReport> reports);

}  // namespace trialsum
