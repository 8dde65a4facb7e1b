#include "trialsum/template_engine.hpp"

#include "embedded_data.hpp"
#include "trialsum/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace trialsum {

namespace {

std::string segment_error(std::size_t i, std::string_view what) {
  return "segment " + std::to_string(i) + ": " + std::string(what);
}

}  // namespace

Template template_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("template is not a JSON object");
  Template t;
  if (!j.contains("id") || !j.at("id").is_string() || j.at("id").get<std::string>().empty()) {
    throw InputError("field \"id\": expected non-empty string");
  }
  t.id = j.at("id").get<std::string>();
  if (!j.contains("direction") || !j.at("direction").is_string()) throw InputError("field \"direction\": expected string");
  const auto dir = parse_direction(j.at("direction").get<std::string>());
  if (!dir) throw InputError("field \"direction\": unknown direction");
  t.direction = *dir;
  if (!j.contains("segments") || !j.at("segments").is_array()) throw InputError("field \"segments\": expected array");

  const auto& segs = j.at("segments");
  std::size_t blanks = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    if (!s.is_object() || !s.contains("kind") || !s.at("kind").is_string()) {
      throw InputError(segment_error(i, "expected an object with a \"kind\""));
    }
    const auto kind = s.at("kind").get<std::string>();
    TemplateSegment seg;
    if (kind == "literal") {
      if (!s.contains("text") || !s.at("text").is_string()) throw InputError(segment_error(i, "literal needs \"text\""));
      if (s.contains("aspect")) throw InputError(segment_error(i, "literal cannot have an \"aspect\""));
      seg.kind = TemplateSegment::Kind::literal;
      seg.text = s.at("text").get<std::string>();
      for (const auto& tok : split_tokens(seg.text)) {
        if (tok.size() > 1 && tok.front() == '<') throw InputError(segment_error(i, "literal contains a special token"));
      }
    } else if (kind == "blank") {
      if (!s.contains("aspect") || !s.at("aspect").is_string()) throw InputError(segment_error(i, "blank needs \"aspect\""));
      if (s.contains("text")) throw InputError(segment_error(i, "blank cannot have \"text\""));
      const auto a = parse_aspect(s.at("aspect").get<std::string>());
      if (!a) throw InputError(segment_error(i, "unknown aspect"));
      seg.kind = TemplateSegment::Kind::blank;
      seg.aspect = *a;
      if (!t.segments.empty() && t.segments.back().kind == TemplateSegment::Kind::blank &&
          t.segments.back().aspect == seg.aspect) {
        throw InputError(segment_error(i, "adjacent blanks share an aspect"));
      }
      ++blanks;
    } else {
      throw InputError(segment_error(i, "unknown kind \"" + kind + "\""));
    }
    t.segments.push_back(std::move(seg));
  }
  if (blanks == 0) throw InputError("template \"" + t.id + "\" has no blanks");
  return t;
}

nlohmann::json template_to_json(const Template& t) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : t.segments) {
    if (s.kind == TemplateSegment::Kind::literal) {
      segs.push_back({{"kind", "literal"}, {"text", s.text}});
    } else {
      segs.push_back({{"kind", "blank"}, {"aspect", aspect_name(s.aspect)}});
    }
  }
  return {{"id", t.id}, {"direction", direction_name(t.direction)}, {"segments", segs}};
}

std::vector<Template> parse_templates(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("templates: malformed JSON: ") + e.what());
  }
  if (!j.is_array()) throw InputError("templates: expected a JSON array");
  std::vector<Template> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(template_from_json(j[i]));
    } catch (const InputError& e) {
      throw InputError("template " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

const std::vector<Template>& builtin_templates() {
  static const std::vector<Template> t = parse_templates(embedded::templates());
  return t;
}

std::vector<Template> load_catalog(const std::filesystem::path& user_file) {
  std::vector<Template> out = builtin_templates();
  if (user_file.empty()) return out;
  std::ifstream in(user_file, std::ios::binary);
  if (!in) throw InputError("cannot open template file " + user_file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::set<std::string> ids;
  for (const auto& t : out) ids.insert(t.id);
  for (auto& t : parse_templates(ss.str())) {
    if (!ids.insert(t.id).second) throw InputError("duplicate template id \"" + t.id + "\"");
    out.push_back(std::move(t));
  }
  return out;
}

const Template* find_template(std::span<const Template> catalog, std::string_view id) {
  for (const auto& t : catalog) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

template <typename Scalar>
InfillResult infill(const Template& tmpl, const ModelSession<Scalar>& session, const AspectBundle& bundle,
                    const Vocabulary& vocab, const InfillConfig& config) {
  if (session.model().architecture() != Architecture::multihead) {
    throw Unsupported("template in-filling needs the multihead model");
  }
  if (config.min_blank_len < 0 || config.blank_cap < 1 || config.min_blank_len > config.blank_cap) {
    throw InputError("need 0 <= min_blank_len <= blank_cap and blank_cap >= 1");
  }
  for (const auto& s : tmpl.segments) {
    if (s.kind == TemplateSegment::Kind::blank && bundle.aspect_empty(s.aspect)) {
      throw InputError("aspect \"" + std::string(aspect_name(s.aspect)) + "\" has no text in the input");
    }
  }

  // Tokens still owed after segment i: its successors' literals plus their minimum blanks.
  std::vector<std::size_t> reserved(tmpl.segments.size() + 1, 0);
  for (std::size_t i = tmpl.segments.size(); i-- > 0;) {
    const auto& s = tmpl.segments[i];
    reserved[i] = reserved[i + 1] + (s.kind == TemplateSegment::Kind::literal
                                         ? split_tokens(s.text).size()
                                         : static_cast<std::size_t>(config.min_blank_len));
  }
  const auto max_tokens = static_cast<std::size_t>(session.model().config().max_tgt_len);
  if (reserved[0] > max_tokens) throw InputError("template \"" + tmpl.id + "\" is longer than the model allows");

  InfillResult r;
  std::vector<TokenId> prefix{special::bos};
  auto emit = [&](TokenId id, std::string text, bool literal, DecoderStepOutput out) {
    r.tokens.push_back(id);
    r.texts.push_back(std::move(text));
    r.literal.push_back(literal);
    r.trace.push_back(std::move(out));
    prefix.push_back(id);
  };

  for (std::size_t si = 0; si < tmpl.segments.size(); ++si) {
    const auto& seg = tmpl.segments[si];
    if (seg.kind == TemplateSegment::Kind::literal) {
      for (auto& tok : split_tokens(seg.text)) {
        const TokenId id = vocab.find(tok).value_or(special::unk);
        emit(id, std::move(tok), true, session.step(prefix));
      }
      continue;
    }
    const Index a = aspect_index(seg.aspect);
    FilledSpan span;
    span.aspect = seg.aspect;
    span.begin = r.tokens.size();
    for (int n = 0;; ++n) {
      if (n == config.blank_cap || (n >= config.min_blank_len && r.tokens.size() + reserved[si + 1] >= max_tokens)) {
        span.truncated = true;
        break;
      }
      auto out = session.step(prefix);
      if (n >= config.min_blank_len && argmax(out.weights) != a) {
        span.stop_weights = out.weights;
        break;
      }
      // Greedy over the designated head; structural tokens are never emitted.
      const Eigen::VectorXd& p = out.aspect_probs[static_cast<std::size_t>(a)];
      Index best = -1;
      for (Index v = 0; v < p.size(); ++v) {
        if (special::is_special(static_cast<TokenId>(v)) && v != special::unk) continue;
        if (best < 0 || p(v) > p(best)) best = v;
      }
      const auto id = static_cast<TokenId>(best);
      emit(id, vocab.token(id), false, std::move(out));
    }
    span.end = r.tokens.size();
    r.spans.push_back(std::move(span));
  }

  for (const auto& t : r.texts) {
    if (!r.text.empty()) r.text.push_back(' ');
    r.text += t;
  }
  return r;
}

template InfillResult infill<float>(const Template&, const ModelSession<float>&, const AspectBundle&,
                                    const Vocabulary&, const InfillConfig&);
template InfillResult infill<double>(const Template&, const ModelSession<double>&, const AspectBundle&,
                                     const Vocabulary&, const InfillConfig&);

}  // namespace trialsum
