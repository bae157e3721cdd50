#pragma once

#include <filesystem>

#include "fakepcd/point_cloud.hpp"

namespace fakepcd {

// xyz: UTF-8 text, one "x y z" line per point, '#' lines ignored.
// pcda: "PCDA" magic, u32-LE count, then count*3 float32-LE (x, y, z).
enum class CloudFormat { auto_detect, xyz, pcda };

// auto_detect reads the leading bytes: a PCDA magic selects the binary
// format, anything else is treated as xyz text.
PointCloud read_point_cloud(const std::filesystem::path& path,
                            CloudFormat format = CloudFormat::auto_detect);

// auto_detect picks pcda for a ".pcda" extension and xyz otherwise. xyz is
// written with six decimal places; pcda stores float32.
void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                       CloudFormat format = CloudFormat::auto_detect);

} // namespace fakepcd
