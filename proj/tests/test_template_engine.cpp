#include "support.hpp"

#include "trialsum/errors.hpp"
#include "trialsum/template_engine.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace trialsum;
using namespace trialsum::testing;
using Eigen::VectorXd;

namespace {

Template x_blank_y(Aspect a) {
  return template_from_json(nlohmann::json::parse(R"({"id": "t", "direction": "effective", "segments": [
      {"kind": "literal", "text": "x"},
      {"kind": "blank", "aspect": ")" + std::string(aspect_name(a)) + R"("},
      {"kind": "literal", "text": "y"}]})"));
}

struct Env {
  Vocabulary vocab = Vocabulary::build(std::vector<std::string>{"x y a b c d e f g h"});
  SummaryModel<double> model = tiny_model<double>(Architecture::multihead, static_cast<int>(vocab.size()), 5);
  AspectBundle bundle;
  Env() {
    std::mt19937_64 rng(1);
    bundle = random_bundle(rng, static_cast<int>(vocab.size()));
  }
  /// One-hot gate on `first` while the prefix is shorter than `switch_at`, then on `then`.
  ModelSession<double> forced(int first, int then, std::size_t switch_at) const {
    return ModelSession<double>(model, bundle, [=](std::size_t len) {
      return std::optional<VectorXd>(VectorXd::Unit(4, len < switch_at ? first : then));
    });
  }
};

void write_file(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("blank ends when the gate shifts") {
  const Env env;
  const auto t = x_blank_y(Aspect::outcomes);
  // Prefix is BOS x, then blank tokens; the gate moves away at prefix length 5.
  const auto s = env.forced(2, 0, 5);
  const auto r = infill(t, s, env.bundle, env.vocab);
  REQUIRE(r.spans.size() == 1);
  CHECK(r.spans[0].begin == 1);
  CHECK(r.spans[0].end == 4);
  CHECK_FALSE(r.spans[0].truncated);
  CHECK(r.spans[0].stop_weights == VectorXd::Unit(4, 0));
  REQUIRE(r.tokens.size() == 5);
  CHECK(r.texts.front() == "x");
  CHECK(r.texts.back() == "y");
  CHECK(r.literal == std::vector<bool>{true, false, false, false, true});
  CHECK(r.trace.size() == r.tokens.size());
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK_FALSE(special::is_special(r.tokens[i]));
    CHECK(r.texts[i] == env.vocab.token(r.tokens[i]));
  }
}

TEST_CASE("blank stops at the cap") {
  const Env env;
  const auto t = x_blank_y(Aspect::population);
  const auto s = env.forced(0, 0, 0);
  const auto r = infill(t, s, env.bundle, env.vocab);
  CHECK(r.spans[0].end - r.spans[0].begin == 30);
  CHECK(r.spans[0].truncated);
  CHECK(r.spans[0].stop_weights.size() == 0);
  const auto small = infill(t, s, env.bundle, env.vocab, InfillConfig{1, 4});
  CHECK(small.spans[0].end - small.spans[0].begin == 4);
  CHECK(small.tokens.size() == 6);
}

TEST_CASE("minimum blank length overrides an early shift") {
  const Env env;
  const auto t = x_blank_y(Aspect::punchline);
  const auto s = env.forced(0, 0, 0);
  for (int min_len : {0, 1, 2, 5}) {
    const auto r = infill(t, s, env.bundle, env.vocab, InfillConfig{min_len, 30});
    CHECK(r.spans[0].end - r.spans[0].begin == static_cast<std::size_t>(min_len));
    CHECK_FALSE(r.spans[0].truncated);
  }
  CHECK_THROWS_AS(infill(t, s, env.bundle, env.vocab, InfillConfig{3, 2}), InputError);
  CHECK_THROWS_AS(infill(t, s, env.bundle, env.vocab, InfillConfig{0, 0}), InputError);
}

TEST_CASE("literals are preserved token for token") {
  const SynthFixture fx(0, 3, 3);
  const auto model = tiny_model<float>(Architecture::multihead, static_cast<int>(fx.vocab.size()), 7, 16);
  for (const auto& ex : fx.examples) {
    const auto bundle = make_bundle(fx.vocab, ex.records, 64);
    const ModelSession<float> s(model, bundle);
    for (const auto& t : builtin_templates()) {
      const auto r = infill(t, s, bundle, fx.vocab);
      std::vector<std::string> want, got;
      for (const auto& seg : t.segments) {
        if (seg.kind != TemplateSegment::Kind::literal) continue;
        const auto toks = split_tokens(seg.text);
        want.insert(want.end(), toks.begin(), toks.end());
      }
      for (std::size_t i = 0; i < r.texts.size(); ++i) {
        if (r.literal[i]) got.push_back(r.texts[i]);
      }
      CHECK(got == want);
      CHECK(r.text.find("<") == std::string::npos);
    }
  }
}

TEST_CASE("unsupported and invalid inputs") {
  const Env env;
  const auto base = tiny_model<double>(Architecture::baseline, static_cast<int>(env.vocab.size()), 1);
  const ModelSession<double> bs(base, env.bundle);
  CHECK_THROWS_AS(infill(x_blank_y(Aspect::outcomes), bs, env.bundle, env.vocab), Unsupported);

  auto partial = env.bundle;
  partial.aspects[2] = {special::open_tag(Aspect::outcomes), special::close_tag(Aspect::outcomes)};
  const ModelSession<double> s(env.model, partial);
  CHECK_THROWS_AS(infill(x_blank_y(Aspect::outcomes), s, partial, env.vocab), InputError);
  CHECK_NOTHROW(infill(x_blank_y(Aspect::population), s, partial, env.vocab));
}

TEST_CASE("built-in catalog") {
  const auto& b = builtin_templates();
  REQUIRE(b.size() == 3);
  std::set<Direction> dirs;
  for (const auto& t : b) {
    dirs.insert(t.direction);
    CHECK(template_from_json(template_to_json(t)).id == t.id);
    CHECK(template_to_json(template_from_json(template_to_json(t))) == template_to_json(t));
  }
  CHECK(dirs.size() == 3);
  REQUIRE(find_template(b, "no_effect") != nullptr);
  CHECK(find_template(b, "no_effect")->direction == Direction::no_effect);
  CHECK(find_template(b, "nope") == nullptr);
}

TEST_CASE("template validation names the segment") {
  auto error_of = [](const std::string& text) -> std::string {
    try {
      parse_templates(text);
    } catch (const InputError& e) {
      return e.what();
    }
    return "";
  };
  const std::string head = R"([{"id": "a", "direction": "effective", "segments": [{"kind": "blank", "aspect": "outcomes"}]}, )";
  CHECK(error_of(head + R"({"id": "b", "direction": "effective", "segments": [{"kind": "blank", "aspect": "outcomes"}, {"kind": "gap"}]}])")
            .find("template 1: segment 1") != std::string::npos);
  CHECK(error_of(head + R"({"id": "b", "direction": "effective", "segments": [{"kind": "blank", "aspect": "dose"}]}])")
            .find("segment 0") != std::string::npos);
  CHECK(error_of(R"([{"id": "b", "direction": "effective", "segments": [{"kind": "literal", "text": "x <doc>"}, {"kind": "blank", "aspect": "outcomes"}]}])")
            .find("segment 0") != std::string::npos);
  CHECK(error_of(R"([{"id": "b", "direction": "effective", "segments": [{"kind": "blank", "aspect": "outcomes"}, {"kind": "blank", "aspect": "outcomes"}]}])")
            .find("segment 1") != std::string::npos);
  CHECK_FALSE(error_of(R"([{"id": "b", "direction": "sideways", "segments": []}])").empty());
  CHECK_FALSE(error_of(R"([{"id": "b", "direction": "effective", "segments": [{"kind": "literal", "text": "x"}]}])").empty());
  CHECK_FALSE(error_of("{not json").empty());
  CHECK_FALSE(error_of("{}").empty());
}

TEST_CASE("user catalogs extend the built-ins") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto good = dir / "trialsum_templates_good.json";
  const auto dup = dir / "trialsum_templates_dup.json";
  write_file(good, R"([{"id": "harm", "direction": "no_effect", "segments": [
      {"kind": "literal", "text": "no gain from"}, {"kind": "blank", "aspect": "interventions"}]}])");
  write_file(dup, R"([{"id": "effective", "direction": "effective", "segments": [{"kind": "blank", "aspect": "outcomes"}]}])");
  const auto cat = load_catalog(good);
  CHECK(cat.size() == 4);
  CHECK(cat.back().id == "harm");
  CHECK(load_catalog().size() == 3);
  CHECK_THROWS_AS(load_catalog(dup), InputError);
  CHECK_THROWS_AS(load_catalog(dir / "trialsum_templates_missing.json"), InputError);
  std::filesystem::remove(good);
  std::filesystem::remove(dup);
}

TEST_CASE("blanks yield to the model's length limit") {
  Env env;
  auto c = env.model.config();
  c.max_tgt_len = 12;
  const SummaryModel<double> small(c, init_params<double>(c, 5));
  const ModelSession<double> s(small, env.bundle, [](std::size_t) { return std::optional<VectorXd>(VectorXd::Unit(4, 1)); });
  const auto t = template_from_json(nlohmann::json::parse(R"({"id": "t", "direction": "effective", "segments": [
      {"kind": "blank", "aspect": "interventions"}, {"kind": "literal", "text": "x y"},
      {"kind": "blank", "aspect": "interventions"}, {"kind": "literal", "text": "y"}]})"));
  const auto r = infill(t, s, env.bundle, env.vocab);
  CHECK(r.tokens.size() == 12);
  CHECK(r.spans[0].truncated);
  CHECK(r.spans[1].end - r.spans[1].begin == 1);
  CHECK(r.texts.back() == "y");
  c.max_tgt_len = 3;
  const SummaryModel<double> tiny(c, init_params<double>(c, 5));
  const ModelSession<double> ts(tiny, env.bundle);
  CHECK_THROWS_AS(infill(t, ts, env.bundle, env.vocab), InputError);
}
