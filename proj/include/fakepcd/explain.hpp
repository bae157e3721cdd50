#pragma once

#include <Eigen/Dense>
#include <filesystem>

#include "fakepcd/nnet.hpp"
#include "fakepcd/point_cloud.hpp"

namespace fakepcd::explain {

// Indices of the points that win at least one channel of the max pool.
// Re-encoding just these points reproduces the full global feature exactly.
struct CriticalPointSet {
    std::vector<int> indices; // sorted, unique

    PointCloud subset_of(const PointCloud& cloud) const;
};

CriticalPointSet critical_points(const nnet::Model& model, const PointCloud& cloud);
CriticalPointSet critical_points(const nnet::ForwardTrace& trace);

enum class Plane { xy, xz, yz };

enum class BoundsMode {
    fixed, // [-1, 1]^2; out-of-bounds points are skipped
    automatic,
};

struct DepthImage {
    int width = 0;
    int height = 0;
    Eigen::MatrixXd cells; // height x width, values in [0, 1], 0 = empty
    Plane plane = Plane::xy;
    double min_u = 0, max_u = 0, min_v = 0, max_v = 0; // bounds actually used
    bool any_in_bounds = true; // false when every point fell outside fixed bounds
};

// Orthographic projection; each occupied cell holds the max out-of-plane
// coordinate of its points, min-max normalized to [0, 1] per image (a flat
// image maps occupied cells to 1). Rows index v, columns index u.
DepthImage depth_project(const std::vector<Point3>& points, Plane plane, int width, int height,
                         BoundsMode bounds = BoundsMode::fixed);

struct Fingerprint {
    Eigen::MatrixXd cells; // cellwise mean of the member depth images
    int width = 0;
    int height = 0;
    int members = 0; // M
    std::string source_name;
};

// M seeded-random clouds of one source: critical points -> unit-sphere
// normalization -> fixed-bounds depth image -> cellwise average.
Fingerprint build_fingerprint(const nnet::Model& model, const Dataset& source_clouds, int members,
                              int width, int height, std::uint64_t seed);

// Index of the candidate closest to the query by Chamfer distance;
// ties resolve to the first.
std::size_t match_similar(const PointCloud& query, const Dataset& candidates);

// Plain P2 ASCII PGM, maxval 255, gray = round(255 * cell), row-major.
void write_pgm(const Eigen::MatrixXd& cells, const std::filesystem::path& path);
Eigen::MatrixXd read_pgm(const std::filesystem::path& path);

} // namespace fakepcd::explain
