#include "support.hpp"

#include "trialsum/errors.hpp"
#include "trialsum/train.hpp"

#include <doctest.h>

#include <limits>

using namespace trialsum;
using namespace trialsum::testing;

namespace {

struct Setup {
  SynthFixture fx{0, 3, 2};
  ModelConfig config;
  std::vector<TrainingExample> data;

  explicit Setup(Architecture arch, int width = 8) {
    config = tiny_config(arch, static_cast<int>(fx.vocab.size()), width);
    config.max_src_len = 64;
    data = make_training_set(fx.vocab, fx.examples, config);
  }

  SummaryModel<float> model(std::uint64_t seed = 0) const {
    return SummaryModel<float>(config, init_params<float>(config, seed));
  }
};

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  std::vector<Matrix<float>> xs;
  for_each_parameter(a, [&](const std::string&, const ag::Parameter<float>& p) { xs.push_back(p.value); });
  std::size_t i = 0;
  bool same = true;
  for_each_parameter(b, [&](const std::string&, const ag::Parameter<float>& p) { same = same && xs[i++] == p.value; });
  return same;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(TrainConfig::toy().validate());
  CHECK_NOTHROW(TrainConfig::finetune().validate());
  CHECK(TrainConfig::finetune().batch_size == 2);
  CHECK(TrainConfig::finetune().epochs == 3);
  CHECK(TrainConfig::finetune().learning_rate == 3e-5);
  auto c = TrainConfig::toy();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig::toy();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig::toy();
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig::toy();
  c.lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), InputError);

  const Setup s(Architecture::multihead);
  auto m = s.model();
  CHECK_THROWS_AS(train(m, std::span<const TrainingExample>{}, TrainConfig::toy()), InputError);
}

TEST_CASE("training is deterministic in its seeds") {
  const Setup s(Architecture::multihead);
  auto tc = TrainConfig::toy();
  tc.epochs = 3;
  auto a = s.model(), b = s.model(), c = s.model();
  const auto ra = train(a, s.data, tc);
  const auto rb = train(b, s.data, tc);
  tc.seed = 1;
  train(c, s.data, tc);
  CHECK(same_params(a.params(), b.params()));
  CHECK_FALSE(same_params(a.params(), c.params()));
  REQUIRE(ra.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ra.epochs[i].loss == rb.epochs[i].loss);
  CHECK(ra.steps == 3 * 2);
}

TEST_CASE("loss decreases and early stopping fires") {
  for (auto arch : {Architecture::multihead, Architecture::baseline}) {
    const Setup s(arch, 16);
    auto m = s.model();
    auto tc = TrainConfig::toy();
    tc.epochs = 40;
    std::vector<double> seen;
    const auto r = train(m, s.data, tc, [&](const EpochStats& e) { seen.push_back(e.loss); });
    CHECK(seen.size() == r.epochs.size());
    CHECK(r.epochs.back().loss < 0.5 * r.epochs.front().loss);
    double after = 0.0;
    for (const auto& ex : s.data) after += evaluate_loss(m, ex, tc.lambda);
    CHECK(after / static_cast<double>(s.data.size()) < r.epochs.front().loss);
    if (arch == Architecture::baseline) {
      for (const auto& e : r.epochs) CHECK(e.aux == 0.0);
    }

    auto m2 = s.model();
    tc.target_loss = r.epochs[4].loss + 1e-9;
    const auto stopped = train(m2, s.data, tc);
    CHECK(stopped.reached_target);
    CHECK(stopped.epochs.size() <= 5);
    CHECK(stopped.epochs.back().loss < tc.target_loss);
  }
}

TEST_CASE("non-finite loss names the step") {
  const Setup s(Architecture::multihead);
  auto m = s.model();
  m.mutable_params().output_bias.value(0, special::eos) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(m, s.data, TrainConfig::toy());
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("training set errors name the topic") {
  SynthFixture fx(0, 2, 2);
  fx.examples[1].target = "<outcomes> unbalanced";
  ModelConfig c;
  c.vocab_size = static_cast<int>(fx.vocab.size());
  try {
    make_training_set(fx.vocab, fx.examples, c);
    FAIL("expected an InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(fx.examples[1].topic_id) != std::string::npos);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  for (auto arch : {Architecture::multihead, Architecture::baseline}) {
    SynthFixture fx(3, 1, 2);
    auto c = tiny_config(arch, static_cast<int>(fx.vocab.size()), 16);
    c.max_src_len = 64;
    SummaryModel<double> m(c, init_params<double>(c, 1));
    const auto ex = make_training_example(fx.vocab, fx.examples[0].records, fx.examples[0].target, c);
    GradCheckConfig gc;
    gc.coordinates = 200;
    const auto r = gradient_check(m, ex, gc);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coordinates >= 200);
    CHECK(r.grad_norm > 0.0);
    CHECK(r.gate_coordinates == (arch == Architecture::multihead ? 16u : 0u));
  }
}

TEST_CASE("gradient check is sensitive to a wrong loss weight") {
  // Analytic gradient taken at lambda 0.5 but differenced at lambda 5 disagrees.
  SynthFixture fx(3, 1, 2);
  auto c = tiny_config(Architecture::multihead, static_cast<int>(fx.vocab.size()), 16);
  c.max_src_len = 64;
  SummaryModel<double> m(c, init_params<double>(c, 1));
  const auto ex = make_training_example(fx.vocab, fx.examples[0].records, fx.examples[0].target, c);
  ag::Tape<double> tape;
  const auto loss = m.forward_loss(ex, 0.5, tape);
  tape.backward(loss.loss);
  const auto* g = tape.gradient_of(m.params().gate);
  REQUIRE(g != nullptr);
  double& x = m.mutable_params().gate.value(0, 0);
  const double saved = x;
  x = saved + 1e-5;
  const double up = evaluate_loss(m, ex, 5.0);
  x = saved - 1e-5;
  const double down = evaluate_loss(m, ex, 5.0);
  x = saved;
  const double numeric = (up - down) / 2e-5;
  CHECK(std::abs(numeric - (*g)(0, 0)) / std::max(std::abs(numeric), 1e-5) > 1e-3);
}
