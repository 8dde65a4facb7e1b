#pragma once

#include <string_view>

namespace trialsum::embedded {

// Contents of data/phrase_banks.json and data/templates.json, compiled in.
std::string_view phrase_banks();
std::string_view templates();

}  // namespace trialsum::embedded
