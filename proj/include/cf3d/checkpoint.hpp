#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cf3d/nn.hpp"

namespace cf3d::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: "CF3D", u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, u64 dims, f64 values (all LE).
std::vector<std::uint8_t> encode_checkpoint(const ParamList& params);
/// Copies values into `params`; names, order and shapes must match.
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ParamList& params);

void save_checkpoint(const std::filesystem::path& path, const ParamList& params);
void load_checkpoint(const std::filesystem::path& path, const ParamList& params);

}  // namespace cf3d::ad
