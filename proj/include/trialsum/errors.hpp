#pragma once

#include <stdexcept>
#include <string>

namespace trialsum {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or invalid input data (records, templates, requests).
struct InputError : Error {
  using Error::Error;
};

struct NotFound : Error {
  using Error::Error;
};

// Operation not available for the given model architecture.
struct Unsupported : Error {
  using Error::Error;
};

}  // namespace trialsum
