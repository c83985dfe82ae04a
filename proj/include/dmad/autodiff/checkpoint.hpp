#pragma once

#include <filesystem>
#include <string>

#include "dmad/autodiff/tensor.hpp"

namespace dmad::ad {

inline constexpr int kCheckpointSchema = 1;

// Writes `<stem>.json` (names, shapes, byte offsets) and `<stem>.bin`
// (little-endian float64 values in manifest order).
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem);

// Loads into an existing store. Every manifest entry must name a parameter of
// identical shape and every store parameter must be present.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& stem);

// FNV-1a over every parameter name and value; stable fingerprint of a model.
std::string parameter_digest(const ParameterStore& store);

}  // namespace dmad::ad
