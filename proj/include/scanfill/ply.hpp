#pragma once

#include <filesystem>

#include "scanfill/point_cloud.hpp"

namespace scanfill {

/// Reads an ASCII PLY with a single vertex element carrying float x, y, z and
/// optionally nx, ny, nz. Errors name the file and line.
PointCloud read_ply(const std::filesystem::path& path);

/// Writes ASCII PLY with 17 significant digits, so doubles round-trip exactly;
/// normals are written when present.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace scanfill
