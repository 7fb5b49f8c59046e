#pragma once
// Checkpoint container: an 8-byte magic, a little-endian uint64 header length,
// a JSON header (caller metadata plus the tensor table), then raw float32 data.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "ichseg/nn/layers.hpp"

namespace ichseg::nn {

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const ConstParamRefs& params);

/// Returns the caller metadata without touching tensor data.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

/// Fills every parameter by name. Missing names and shape mismatches throw.
nlohmann::json load_checkpoint(const std::filesystem::path& path, const ParamRefs& params);

}  // namespace ichseg::nn
