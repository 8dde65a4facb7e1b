#include "support.hpp"

#include "trialsum/errors.hpp"
#include "trialsum/provenance.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace trialsum;
using namespace trialsum::testing;
using Eigen::VectorXd;

namespace {

DecoderStepOutput with_weights(std::initializer_list<double> z) {
  DecoderStepOutput o;
  o.weights = VectorXd(static_cast<Index>(z.size()));
  Index i = 0;
  for (double v : z) o.weights(i++) = v;
  return o;
}

}  // namespace

TEST_CASE("attribution picks the dominant aspect") {
  const auto a = attribute(with_weights({0.1, 0.6, 0.2, 0.1}));
  CHECK(a.aspect == Aspect::interventions);
  CHECK(a.confidence == 0.6);
  const double h = -(0.1 * std::log(0.1) * 2 + 0.6 * std::log(0.6) + 0.2 * std::log(0.2));
  CHECK(a.entropy == doctest::Approx(h).epsilon(1e-12));

  const auto u = attribute(with_weights({0.25, 0.25, 0.25, 0.25}));
  CHECK(u.aspect == Aspect::population);
  CHECK(u.confidence == 0.25);
  CHECK(u.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  const auto tie = attribute(with_weights({0.1, 0.1, 0.4, 0.4}));
  CHECK(tie.aspect == Aspect::outcomes);

  const auto sure = attribute(with_weights({0.0, 0.0, 0.0, 1.0}));
  CHECK(sure.aspect == Aspect::punchline);
  CHECK(sure.entropy == 0.0);
}

TEST_CASE("baseline steps have no provenance") {
  DecoderStepOutput o;
  o.probs = VectorXd::Constant(4, 0.25);
  CHECK_THROWS_AS(attribute(o), Unsupported);
  const auto v = no_provenance("pain");
  const auto j = to_json(v);
  CHECK(j["token"] == "pain");
  CHECK(j["aspect"].is_null());
  CHECK(j["confidence"].is_null());
  CHECK(j["snippets"].empty());
  CHECK(j["note"] == std::string(kNoProvenance));
}

TEST_CASE("forced gates are reported faithfully") {
  std::mt19937_64 rng(4);
  const auto model = tiny_model<double>(Architecture::multihead, 25, 2);
  const auto bundle = random_bundle(rng, 25);
  for (int k = 0; k < 4; ++k) {
    const VectorXd z = VectorXd::Unit(4, k);
    const ModelSession<double> s(model, bundle, [&](std::size_t) { return std::optional<VectorXd>(z); });
    const auto r = greedy(s, DecodeConfig{1, 1, 8, 0.0});
    const auto attrs = trace_summary(r.trace, r.tokens.size());
    for (const auto& a : attrs) {
      CHECK(aspect_index(a.aspect) == k);
      CHECK(a.confidence == 1.0);
    }
  }
  const ModelSession<double> free(model, bundle);
  const auto r = greedy(free, DecodeConfig{1, 1, 8, 0.0});
  CHECK_THROWS_AS(trace_summary(r.trace, r.tokens.size() + 1), InputError);
}

TEST_CASE("snippets are verbatim record fields") {
  const SynthFixture fx(2, 2, 3);
  const auto& recs = fx.examples[0].records;
  const std::vector<std::string> texts{"a", "b", "c", "d"};
  std::vector<TokenAttribution> attrs;
  for (double hi : {0.0, 1.0, 2.0, 3.0}) {
    VectorXd z = VectorXd::Constant(4, 0.1);
    z(static_cast<Index>(hi)) = 0.7;
    DecoderStepOutput o;
    o.weights = z;
    attrs.push_back(attribute(o));
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto v = snippets_for_token(i, texts, attrs, recs);
    CHECK(v.token == texts[i]);
    REQUIRE(v.aspect);
    CHECK(aspect_index(*v.aspect) == static_cast<int>(i));
    CHECK(*v.confidence == 0.7);
    REQUIRE(v.snippets.size() == recs.size());
    for (std::size_t r = 0; r < recs.size(); ++r) {
      CHECK(v.snippets[r].trial_id == recs[r].id);
      CHECK(v.snippets[r].text == recs[r].aspect_text(*v.aspect));
      CHECK(recs[r].abstract.find(v.snippets[r].text) != std::string::npos);
    }
    const auto j = to_json(v);
    CHECK(j["aspect"] == std::string(aspect_name(*v.aspect)));
    CHECK(j["snippets"].size() == recs.size());
    CHECK_FALSE(j.contains("note"));
  }
  CHECK_THROWS_AS(snippets_for_token(4, texts, attrs, recs), InputError);
  const std::vector<std::string> short_texts{"a"};
  CHECK_THROWS_AS(snippets_for_token(0, short_texts, attrs, recs), InputError);
}
