#include "trialsum/tokenizer.hpp"

#include "trialsum/errors.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace trialsum {

namespace special {

const std::vector<std::string>& strings() {
  static const std::vector<std::string> s = {
      "<pad>",        "<s>",        "</s>",           "<unk>",           "<doc>",
      "<population>", "</population>", "<interventions>", "</interventions>", "<outcomes>",
      "</outcomes>",  "<punchline>", "</punchline>"};
  return s;
}

std::optional<Aspect> opened_aspect(TokenId id) {
  if (id < 5 || id >= count || (id - 5) % 2 != 0) return std::nullopt;
  return static_cast<Aspect>((id - 5) / 2);
}

std::optional<Aspect> closed_aspect(TokenId id) {
  if (id < 6 || id >= count || (id - 6) % 2 != 0) return std::nullopt;
  return static_cast<Aspect>((id - 6) / 2);
}

}  // namespace special

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  const auto& specials = special::strings();
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '<') {
      bool matched = false;
      for (const auto& s : specials) {
        if (text.substr(i, s.size()) == s) {
          out.push_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (is_word_byte(c)) {
      std::string word;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) word.push_back(lower(text[i++]));
      out.push_back(std::move(word));
      continue;
    }
    out.emplace_back(1, static_cast<char>(c));
    ++i;
  }
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& t : split_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special::strings();
  if (tokens_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw InputError("vocabulary must start with the 13 reserved special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InputError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int min_freq) {
  if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, long> freq;
  for (const auto& text : corpus) {
    for (auto& t : split_tokens(text)) {
      if (t.front() == '<' && t.size() > 1) {
        const auto& s = special::strings();
        if (std::find(s.begin(), s.end(), t) != s.end()) continue;
      }
      ++freq[t];
    }
  }
  std::vector<std::pair<std::string, long>> items;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) items.emplace_back(tok, n);
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special::strings();
  for (auto& [tok, n] : items) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) { return Vocabulary(std::move(tokens)); }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("vocabulary JSON must be an array of strings");
  std::vector<std::string> tokens;
  for (const auto& t : j) {
    if (!t.is_string()) throw InputError("vocabulary JSON must be an array of strings");
    tokens.push_back(t.get<std::string>());
  }
  return Vocabulary(std::move(tokens));
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json(tokens_); }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : split_tokens(text)) ids.push_back(find(t).value_or(special::unk));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

std::string Vocabulary::render(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& t = token(id);
    if (special::is_special(id) && id != special::unk) continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace trialsum
