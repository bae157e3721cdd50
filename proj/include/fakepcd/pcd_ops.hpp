#pragma once

#include <cstdint>

#include "fakepcd/point_cloud.hpp"

namespace fakepcd {

// Seeded uniform sampling without replacement; identity when m >= |cloud|.
// The survivors keep their original relative order.
PointCloud downsample(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

// Symmetric Chamfer distance: mean squared nearest-neighbor distance from a
// to b plus the same from b to a.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec);

// Center on the centroid and scale so the farthest point sits on the unit
// sphere. A degenerate (single/coincident points) cloud is only centered.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

} // namespace fakepcd
