#pragma once

#include "trialsum/corpus_synth.hpp"
#include "trialsum/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace trialsum {

/// Tensor views of synthetic examples for the given architecture.
std::vector<TrainingExample> make_training_set(const Vocabulary& vocab, std::span<const SynthExample> examples,
                                               const ModelConfig& config);

struct TrainConfig {
  int batch_size = 2;
  int epochs = 3;
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 0.5;     // weight of the gate cross-entropy
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
  // Stop after the first epoch whose mean loss is below this; 0 disables.
  double target_loss = 0.0;
  std::uint64_t seed = 0;

  /// Short fine-tuning schedule (batch 2, 3 epochs, lr 3e-5).
  static TrainConfig finetune();
  /// From-scratch toy training: lr 1e-3, up to 400 epochs, stop below loss 0.1.
  static TrainConfig toy();

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;  // mean over examples
  double nll = 0.0;
  double aux = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  long steps = 0;
  bool reached_target = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch Adam over shuffled examples. Deterministic in config.seed.
/// Throws Error naming the step if the loss becomes NaN or infinite.
template <typename Scalar>
TrainResult train(SummaryModel<Scalar>& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Loss value without recording a tape.
template <typename Scalar>
double evaluate_loss(const SummaryModel<Scalar>& model, const TrainingExample& example, double lambda);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t gate_coordinates = 0;
  double grad_norm = 0.0;  // norm of the full analytic gradient
};

struct GradCheckConfig {
  std::size_t coordinates = 256;  // sampled, in addition to every gate entry
  double step = 1e-5;
  double floor = 1e-5;  // relative error is |a - n| / max(|a|, |n|, floor)
  double lambda = 0.5;
  std::uint64_t seed = 0;
};

/// Analytic gradient of forward_loss against central finite differences.
GradCheckResult gradient_check(SummaryModel<double>& model, const TrainingExample& example,
                               const GradCheckConfig& config = {});

}  // namespace trialsum
