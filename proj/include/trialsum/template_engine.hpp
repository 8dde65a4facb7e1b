#pragma once

// Template in-filling. Literal segments are fed to the decoder verbatim; each
// blank is generated greedily from its aspect's distribution alone and ends
// once the free mixture weights favour another aspect.

#include "trialsum/aspect.hpp"
#include "trialsum/decoding.hpp"
#include "trialsum/direction.hpp"
#include "trialsum/model.hpp"
#include "trialsum/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace trialsum {

struct TemplateSegment {
  enum class Kind { literal, blank };
  Kind kind = Kind::literal;
  std::string text;                    // literal only
  Aspect aspect = Aspect::punchline;   // blank only
};

struct Template {
  std::string id;
  Direction direction = Direction::effective;
  std::vector<TemplateSegment> segments;
};

/// Errors name the offending segment index.
Template template_from_json(const nlohmann::json& j);
nlohmann::json template_to_json(const Template& t);

/// Parses a JSON array of templates; errors are prefixed with the template index.
std::vector<Template> parse_templates(std::string_view json_text);

/// The packaged templates, one per direction.
const std::vector<Template>& builtin_templates();

/// Built-ins followed by the file's templates. Throws on duplicate ids.
std::vector<Template> load_catalog(const std::filesystem::path& user_file = {});

const Template* find_template(std::span<const Template> catalog, std::string_view id);

struct InfillConfig {
  int min_blank_len = 1;
  int blank_cap = 30;
};

struct FilledSpan {
  std::size_t begin = 0;  // token range [begin, end) in InfillResult::tokens
  std::size_t end = 0;
  Aspect aspect = Aspect::punchline;
  bool truncated = false;          // hit blank_cap or the length budget before the stop rule fired
  Eigen::VectorXd stop_weights;    // free z at the step that ended the blank
};

struct InfillResult {
  std::vector<TokenId> tokens;
  std::vector<std::string> texts;  // display text per token
  std::vector<bool> literal;
  std::vector<DecoderStepOutput> trace;  // one step per token
  std::vector<FilledSpan> spans;
  std::string text;
};

/// Throws Unsupported for a baseline model and InputError when a blank's
/// aspect has no text in the bundle.
template <typename Scalar>
InfillResult infill(const Template& tmpl, const ModelSession<Scalar>& session, const AspectBundle& bundle,
                    const Vocabulary& vocab, const InfillConfig& config = {});

}  // namespace trialsum
