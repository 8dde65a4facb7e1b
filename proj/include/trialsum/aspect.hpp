#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace trialsum {

enum class Aspect : int { population = 0, interventions = 1, outcomes = 2, punchline = 3 };

inline constexpr int kNumAspects = 4;

inline constexpr std::array<Aspect, kNumAspects> kAllAspects = {
    Aspect::population, Aspect::interventions, Aspect::outcomes, Aspect::punchline};

constexpr std::string_view aspect_name(Aspect a) {
  switch (a) {
    case Aspect::population: return "population";
    case Aspect::interventions: return "interventions";
    case Aspect::outcomes: return "outcomes";
    case Aspect::punchline: return "punchline";
  }
  return "";
}

constexpr int aspect_index(Aspect a) { return static_cast<int>(a); }

inline std::optional<Aspect> parse_aspect(std::string_view name) {
  for (Aspect a : kAllAspects) {
    if (aspect_name(a) == name) return a;
  }
  return std::nullopt;
}

}  // namespace trialsum
