#include "trialsum/evaluation.hpp"

#include "trialsum/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace trialsum {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::string_view hypothesis, std::string_view reference) {
  const auto h = split_tokens(strip_tags(hypothesis));
  const auto r = split_tokens(strip_tags(reference));
  if (h.empty() || r.empty()) return {};
  const auto l = static_cast<double>(lcs_length(h, r));
  RougeScore s;
  s.precision = l / static_cast<double>(h.size());
  s.recall = l / static_cast<double>(r.size());
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::string_view label_name(DirectionLabel l) {
  return l == DirectionLabel::significant ? "significant" : "not_significant";
}

DirectionLabel expected_label(Direction d) {
  return d == Direction::effective ? DirectionLabel::significant : DirectionLabel::not_significant;
}

const std::vector<std::string>& RuleClassifier::significant_cues() {
  static const std::vector<std::string> cues = {
      "significantly reduced", "significantly reduce",  "significantly reduces", "significantly improved",
      "significantly improve",  "significantly improves", "significantly lowered", "significantly lower",
      "significantly decreased", "significantly increased", "significantly better", "significantly",
      "significant reduction",  "significant improvement", "significant benefit",  "significant decrease",
      "significant effect",     "significant",            "is effective",          "was effective",
      "were effective",         "effective",              "beneficial",            "reduced the risk",
      "lowered the risk",       "superior to",            "improved",              "reduced",
      "reduces",                "reduce",                 "efficacious"};
  return cues;
}

const std::vector<std::string>& RuleClassifier::not_significant_cues() {
  static const std::vector<std::string> cues = {
      "no significant",     "not significantly", "not significant",      "non-significant",
      "nonsignificant",     "no effect",         "no difference",        "no benefit",
      "no change",          "no improvement",    "no evidence",          "insufficient evidence",
      "inconclusive",       "uncertain",         "inconsistent",         "mixed",
      "imprecise",          "did not",           "does not",             "failed to",
      "not effective",      "ineffective",       "similar to placebo",   "did not differ",
      "no significant difference", "no significant effect", "no significant benefit",
      "no significant improvement", "no significant change"};
  return cues;
}

const std::vector<std::string>& RuleClassifier::negators() {
  static const std::vector<std::string> words = {"no", "not", "never", "without", "neither", "nor", "lack", "absence"};
  return words;
}

RuleClassifier::RuleClassifier() {
  for (const auto& c : significant_cues()) cues_.push_back({split_tokens(c), true});
  for (const auto& c : not_significant_cues()) cues_.push_back({split_tokens(c), false});
  std::stable_sort(cues_.begin(), cues_.end(),
                   [](const Cue& a, const Cue& b) { return a.tokens.size() > b.tokens.size(); });
}

Classification RuleClassifier::classify(std::string_view text) const {
  const auto toks = split_tokens(strip_tags(text));
  const auto& neg = negators();
  Classification c;
  std::size_t i = 0;
  while (i < toks.size()) {
    const Cue* hit = nullptr;
    for (const auto& cue : cues_) {
      if (i + cue.tokens.size() <= toks.size() && std::equal(cue.tokens.begin(), cue.tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
        hit = &cue;
        break;
      }
    }
    if (!hit) {
      ++i;
      continue;
    }
    bool significant = hit->significant;
    if (significant) {
      for (std::size_t j = i >= 3 ? i - 3 : 0; j < i; ++j) {
        if (std::find(neg.begin(), neg.end(), toks[j]) != neg.end()) significant = false;
      }
    }
    ++(significant ? c.significant_cues : c.not_significant_cues);
    i += hit->tokens.size();
  }
  c.defaulted = c.significant_cues == 0 && c.not_significant_cues == 0;
  c.label = c.significant_cues > c.not_significant_cues ? DirectionLabel::significant : DirectionLabel::not_significant;
  return c;
}

Classification classify_direction(std::string_view text) {
  static const RuleClassifier classifier;
  return classifier.classify(text);
}

F1Score f1_from_counts(long tp, long fp, long fn, long tn) {
  F1Score s;
  s.tp = tp, s.fp = fp, s.fn = fn, s.tn = tn;
  if (tp + fp + fn == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

F1Score directionality_f1(std::span<const std::string> hypotheses, std::span<const std::string> references,
                          const DirectionClassifier& classifier) {
  if (hypotheses.size() != references.size()) throw InputError("hypotheses and references differ in length");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const bool h = classifier.classify(hypotheses[i]).label == DirectionLabel::significant;
    const bool r = classifier.classify(references[i]).label == DirectionLabel::significant;
    if (h && r) ++tp;
    if (h && !r) ++fp;
    if (!h && r) ++fn;
    if (!h && !r) ++tn;
  }
  return f1_from_counts(tp, fp, fn, tn);
}

F1Score directionality_f1(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  static const RuleClassifier classifier;
  return directionality_f1(hypotheses, references, classifier);
}

EvalReport score_split(std::string split, std::span<const std::string> hypotheses,
                       std::span<const std::string> references) {
  if (hypotheses.empty()) throw InputError("cannot evaluate an empty split");
  if (hypotheses.size() != references.size()) throw InputError("hypotheses and references differ in length");
  EvalReport r;
  r.split = std::move(split);
  r.n_examples = hypotheses.size();
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto s = rouge_l(hypotheses[i], references[i]);
    r.rouge_l.precision += s.precision;
    r.rouge_l.recall += s.recall;
    r.rouge_l.f += s.f;
    r.defaulted_hypotheses += classify_direction(hypotheses[i]).defaulted ? 1 : 0;
    r.defaulted_references += classify_direction(references[i]).defaulted ? 1 : 0;
  }
  const auto n = static_cast<double>(hypotheses.size());
  r.rouge_l.precision /= n;
  r.rouge_l.recall /= n;
  r.rouge_l.f /= n;
  r.directionality = directionality_f1(hypotheses, references);
  return r;
}

template <typename Scalar>
EvalReport evaluate_split(const SummaryModel<Scalar>& model, const Vocabulary& vocab,
                          std::span<const SynthExample> examples, const DecodeConfig& config, std::string split,
                          std::vector<std::string>* hypotheses) {
  if (examples.empty()) throw InputError("cannot evaluate an empty split");
  std::vector<std::string> hyps, refs;
  for (const auto& ex : examples) {
    const ModelSession<Scalar> session(model, make_bundle(vocab, ex.records, model.config().max_src_len));
    hyps.push_back(vocab.render(beam_search(session, config).tokens));
    refs.push_back(strip_tags(ex.target));
  }
  auto report = score_split(std::move(split), hyps, refs);
  if (hypotheses) *hypotheses = std::move(hyps);
  return report;
}

template EvalReport evaluate_split<float>(const SummaryModel<float>&, const Vocabulary&, std::span<const SynthExample>,
                                          const DecodeConfig&, std::string, std::vector<std::string>*);
template EvalReport evaluate_split<double>(const SummaryModel<double>&, const Vocabulary&, std::span<const SynthExample>,
                                           const DecodeConfig&, std::string, std::vector<std::string>*);

nlohmann::json to_json(const EvalReport& r) {
  return {{"split", r.split},
          {"n_examples", r.n_examples},
          {"rouge_l", {{"precision", r.rouge_l.precision}, {"recall", r.rouge_l.recall}, {"f", r.rouge_l.f}}},
          {"directionality",
           {{"precision", r.directionality.precision},
            {"recall", r.directionality.recall},
            {"f1", r.directionality.f1},
            {"tp", r.directionality.tp},
            {"fp", r.directionality.fp},
            {"fn", r.directionality.fn},
            {"tn", r.directionality.tn}}},
          {"defaulted_hypotheses", r.defaulted_hypotheses},
          {"defaulted_references", r.defaulted_references}};
}

std::string format_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %5s %10s %10s %10s %8s %8s %8s\n", "split", "n", "ROUGE-L P", "ROUGE-L R",
                "ROUGE-L F", "Dir P", "Dir R", "Dir F1");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-8s %5zu %10.1f %10.1f %10.1f %8.1f %8.1f %8.1f\n", r.split.c_str(),
                  r.n_examples, 100.0 * r.rouge_l.precision, 100.0 * r.rouge_l.recall, 100.0 * r.rouge_l.f,
                  100.0 * r.directionality.precision, 100.0 * r.directionality.recall, 100.0 * r.directionality.f1);
    out << line;
  }
  return out.str();
}

}  // namespace trialsum
