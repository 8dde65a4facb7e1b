#pragma once

#include <optional>
#include <string_view>

namespace trialsum {

/// Aggregate effect direction of a body of evidence.
enum class Direction { effective, no_effect, inconclusive };

constexpr std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::effective: return "effective";
    case Direction::no_effect: return "no_effect";
    case Direction::inconclusive: return "inconclusive";
  }
  return "";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  for (Direction d : {Direction::effective, Direction::no_effect, Direction::inconclusive}) {
    if (direction_name(d) == s) return d;
  }
  return std::nullopt;
}

}  // namespace trialsum
