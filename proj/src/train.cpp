#include "trialsum/train.hpp"

#include "trialsum/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace trialsum {

std::vector<TrainingExample> make_training_set(const Vocabulary& vocab, std::span<const SynthExample> examples,
                                               const ModelConfig& config) {
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    try {
      out.push_back(make_training_example(vocab, ex.records, ex.target, config));
    } catch (const InputError& e) {
      throw InputError("example " + ex.topic_id + ": " + e.what());
    }
  }
  return out;
}

TrainConfig TrainConfig::finetune() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 400;
  c.target_loss = 0.1;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (epochs < 1) throw InputError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
  if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw InputError("Adam betas must be in [0, 1)");
}

namespace {

template <typename Scalar>
std::vector<ag::Parameter<Scalar>*> parameter_list(ModelParams<Scalar>& p) {
  std::vector<ag::Parameter<Scalar>*> out;
  for_each_parameter(p, [&](const std::string&, ag::Parameter<Scalar>& x) { out.push_back(&x); });
  return out;
}

template <typename Scalar>
class Adam {
 public:
  Adam(const std::vector<ag::Parameter<Scalar>*>& params, const TrainConfig& c) : c_(c) {
    for (const auto* p : params) {
      m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void update(const std::vector<ag::Parameter<Scalar>*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(c_.beta1);
    const auto b2 = static_cast<Scalar>(c_.beta2);
    const auto step = static_cast<Scalar>(c_.learning_rate / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(c_.adam_eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= step * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  TrainConfig c_;
  long t_ = 0;
  std::vector<Matrix<Scalar>> m_, v_;
};

}  // namespace

template <typename Scalar>
TrainResult train(SummaryModel<Scalar>& model, std::span<const TrainingExample> data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw InputError("training set is empty");
  auto params = parameter_list(model.mutable_params());
  Adam<Scalar> adam(params, config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto lambda = static_cast<Scalar>(config.lambda);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto scale = static_cast<Scalar>(1.0 / static_cast<double>(end - start));
      ++result.steps;
      for (auto* p : params) p->zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        ag::Tape<Scalar> tape;
        auto loss = model.forward_loss(data[order[i]], lambda, tape);
        const double value = static_cast<double>(loss.loss.value()(0, 0));
        if (!std::isfinite(value)) {
          throw Error("training diverged: loss is " + std::to_string(value) + " at step " +
                      std::to_string(result.steps) + " (epoch " + std::to_string(epoch) + ")");
        }
        stats.loss += value;
        stats.nll += loss.nll;
        stats.aux += loss.aux;
        tape.backward(loss.loss, scale);
        for (auto* p : params) {
          if (const auto* g = tape.gradient_of(*p)) p->grad += *g;
        }
      }
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto* p : params) sq += static_cast<double>(p->grad.squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
          const auto f = static_cast<Scalar>(config.clip_norm / norm);
          for (auto* p : params) p->grad *= f;
        }
      }
      adam.update(params);
    }
    const auto n = static_cast<double>(data.size());
    stats.loss /= n;
    stats.nll /= n;
    stats.aux /= n;
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (config.target_loss > 0.0 && stats.loss < config.target_loss) {
      result.reached_target = true;
      break;
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

template <typename Scalar>
double evaluate_loss(const SummaryModel<Scalar>& model, const TrainingExample& example, double lambda) {
  ag::Tape<Scalar> tape(false);
  return static_cast<double>(model.forward_loss(example, static_cast<Scalar>(lambda), tape).loss.value()(0, 0));
}

template TrainResult train<float>(SummaryModel<float>&, std::span<const TrainingExample>, const TrainConfig&,
                                  const EpochCallback&);
template TrainResult train<double>(SummaryModel<double>&, std::span<const TrainingExample>, const TrainConfig&,
                                   const EpochCallback&);
template double evaluate_loss<float>(const SummaryModel<float>&, const TrainingExample&, double);
template double evaluate_loss<double>(const SummaryModel<double>&, const TrainingExample&, double);

GradCheckResult gradient_check(SummaryModel<double>& model, const TrainingExample& example,
                               const GradCheckConfig& config) {
  auto& mp = model.mutable_params();
  std::vector<ag::Parameter<double>*> params;
  std::vector<std::string> names;
  for_each_parameter(mp, [&](const std::string& name, ag::Parameter<double>& x) {
    params.push_back(&x);
    names.push_back(name);
  });

  // Analytic gradient, copied out of the tape.
  std::vector<Matrix<double>> analytic;
  {
    ag::Tape<double> tape;
    auto loss = model.forward_loss(example, config.lambda, tape);
    tape.backward(loss.loss);
    for (const auto* p : params) {
      const auto* g = tape.gradient_of(*p);
      analytic.push_back(g ? *g : Matrix<double>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  GradCheckResult result;
  double sq = 0.0;
  for (const auto& g : analytic) sq += g.squaredNorm();
  result.grad_norm = std::sqrt(sq);

  // Every gate entry, then uniformly sampled coordinates over all parameters.
  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i] != "gate") continue;
    for (Index j = 0; j < params[i]->value.size(); ++j) coords.emplace_back(i, j);
  }
  result.gate_coordinates = coords.size();
  std::vector<Index> offsets{0};
  for (const auto* p : params) offsets.push_back(offsets.back() + p->value.size());
  std::mt19937_64 rng(config.seed);
  for (std::size_t n = 0; n < config.coordinates; ++n) {
    const auto flat = static_cast<Index>(rng() % static_cast<std::uint64_t>(offsets.back()));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const auto i = static_cast<std::size_t>(it - offsets.begin() - 1);
    coords.emplace_back(i, flat - offsets[i]);
  }

  for (const auto& [i, j] : coords) {
    double& x = params[i]->value.data()[j];
    const double saved = x;
    x = saved + config.step;
    const double up = evaluate_loss(model, example, config.lambda);
    x = saved - config.step;
    const double down = evaluate_loss(model, example, config.lambda);
    x = saved;
    const double numeric = (up - down) / (2.0 * config.step);
    const double a = analytic[i].data()[j];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), config.floor});
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  result.coordinates = coords.size();
  return result;
}

}  // namespace trialsum
