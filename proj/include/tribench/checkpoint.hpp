#pragma once

#include "tribench/autodiff.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace tribench {

// Binary checkpoint: "CUTB", u32 version (1), u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, f32 payload.
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, ad::Tensor>;

// Written to a temporary file and renamed into place.
void write_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_checkpoint(const std::filesystem::path& path);

}  // namespace tribench
