#pragma once

// Self-describing parameter file:
//   "TSCK" | u32 version | u64 manifest length | manifest JSON | float32 tensor data
// The manifest holds the model config, the vocabulary and, per tensor, its
// name, shape, dtype and byte offset into the data section. Little-endian.

#include "trialsum/model.hpp"
#include "trialsum/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace trialsum {

struct Checkpoint {
  Vocabulary vocab;
  SummaryModel<float> model;
  nlohmann::json meta;  // free-form training metadata
};

std::string serialize_checkpoint(const SummaryModel<float>& model, const Vocabulary& vocab,
                                 const nlohmann::json& meta = nlohmann::json::object());
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const SummaryModel<float>& model, const Vocabulary& vocab,
                     const nlohmann::json& meta = nlohmann::json::object());
/// Throws InputError on a missing, truncated or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trialsum
