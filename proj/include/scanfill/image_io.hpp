#pragma once

#include <filesystem>

#include <json.hpp>

#include "scanfill/renderer.hpp"

namespace scanfill {

/// Single-channel PFM, little-endian, rows stored bottom to top.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). Pixels > 0 are written as 255; reading maps to [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& mask);
Image read_pgm(const std::filesystem::path& path);

nlohmann::json camera_to_json(const Camera& camera);
/// Throws IoError naming the missing or malformed field.
Camera camera_from_json(const nlohmann::json& j);
void write_camera(const std::filesystem::path& path, const Camera& camera);
Camera read_camera(const std::filesystem::path& path);

}  // namespace scanfill
