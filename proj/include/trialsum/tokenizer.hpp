#pragma once

#include "trialsum/aspect.hpp"
#include "trialsum/linalg.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trialsum {

/// Reserved token ids. These are fixed for every vocabulary.
namespace special {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId unk = 3;
inline constexpr TokenId doc_sep = 4;
constexpr TokenId open_tag(Aspect a) { return 5 + 2 * aspect_index(a); }
constexpr TokenId close_tag(Aspect a) { return 6 + 2 * aspect_index(a); }
inline constexpr TokenId count = 13;

/// Literal strings for ids 0..12.
const std::vector<std::string>& strings();

constexpr bool is_special(TokenId id) { return id >= 0 && id < count; }

/// The aspect whose open tag is `id`, if any.
std::optional<Aspect> opened_aspect(TokenId id);
/// The aspect whose close tag is `id`, if any.
std::optional<Aspect> closed_aspect(TokenId id);
}  // namespace special

/// Splits text into lowercased word and punctuation tokens. Special tag
/// strings (e.g. "<population>") are kept whole.
std::vector<std::string> split_tokens(std::string_view text);

/// Tokens of `text` joined by single spaces.
std::string normalize(std::string_view text);

/// Frozen token <-> id bijection; ids 0..12 are the specials.
class Vocabulary {
 public:
  /// Words with frequency >= min_freq, ordered by frequency desc then lexicographically.
  static Vocabulary build(std::span<const std::string> corpus, int min_freq = 1);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary from_json(const nlohmann::json& j);

  nlohmann::json to_json() const;

  std::size_t size() const { return tokens_.size(); }
  std::span<const std::string> tokens() const { return tokens_; }

  /// Throws std::out_of_range for ids outside the vocabulary.
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;

  /// Unknown words map to UNK.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Inverse of encode up to normalisation; specials other than UNK are dropped.
  std::string decode(std::span<const TokenId> ids) const;
  /// Like decode but drops structural specials (everything except UNK).
  std::string render(std::span<const TokenId> ids) const;

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace trialsum
