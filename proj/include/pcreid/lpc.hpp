#pragma once

#include <filesystem>

#include "pcreid/geometry.hpp"

namespace pcreid {

// Binary point-cloud container: magic "LPC1", uint32 little-endian point
// count, then N*3 float32 little-endian coordinates (x, y, z in meters).
void write_lpc(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_lpc(const std::filesystem::path& path);

}  // namespace pcreid
