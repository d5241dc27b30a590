#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cf3d/dataset.hpp"
#include "cf3d/scenario.hpp"

namespace cf3d {

// Files are a 4-byte magic, a u32 JSON header length, the JSON header, then
// little-endian binary blobs.

std::vector<std::uint8_t> encode_scenario(const Scenario& scn);
Scenario decode_scenario(const std::vector<std::uint8_t>& bytes);
void save_scenario(const std::filesystem::path& path, const Scenario& scn);
Scenario load_scenario(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_store(const CfStore& store);
CfStore decode_store(const std::vector<std::uint8_t>& bytes);
void save_store(const std::filesystem::path& path, const CfStore& store);
CfStore load_store(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_grid(const GroundMeasurementGrid& grid);
GroundMeasurementGrid decode_grid(const std::vector<std::uint8_t>& bytes);
void save_grid(const std::filesystem::path& path, const GroundMeasurementGrid& grid);
GroundMeasurementGrid load_grid(const std::filesystem::path& path);

}  // namespace cf3d
