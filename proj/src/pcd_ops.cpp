#include "fakepcd/pcd_ops.hpp"

#include <cmath>
#include <limits>

#include "fakepcd/rng.hpp"

namespace fakepcd {

PointCloud downsample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
    cloud.validate();
    if (m == 0) throw std::invalid_argument("downsample: target count must be >= 1");
    if (m >= cloud.size()) return cloud;

    rng::Xoshiro256 gen(seed);
    const auto keep = gen.sample_without_replacement(cloud.size(), m);
    PointCloud out;
    out.source = cloud.source;
    out.shape_tag = cloud.shape_tag;
    out.points.reserve(m);
    for (const std::size_t idx : keep) out.points.push_back(cloud.points[idx]);
    return out;
}

namespace {

double mean_squared_nearest(const std::vector<Point3>& from, const std::vector<Point3>& to) {
    double total = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            const double d2 = squared_distance(p, q);
            if (d2 < best) best = d2;
        }
        total += best;
    }
    return total / static_cast<double>(from.size());
}

} // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty cloud");
    return mean_squared_nearest(a.points, b.points) + mean_squared_nearest(b.points, a.points);
}

namespace {

void rotate_about_axis(Point3& p, int axis, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    switch (axis) {
    case 0: { // x
        const double y = p.y * c - p.z * s;
        const double z = p.y * s + p.z * c;
        p.y = y;
        p.z = z;
        break;
    }
    case 1: { // y
        const double z = p.z * c - p.x * s;
        const double x = p.z * s + p.x * c;
        p.z = z;
        p.x = x;
        break;
    }
    default: { // z
        const double x = p.x * c - p.y * s;
        const double y = p.x * s + p.y * c;
        p.x = x;
        p.y = y;
        break;
    }
    }
}

} // namespace

PointCloud augment(const PointCloud& cloud, const AugmentSpec& spec) {
    cloud.validate();
    spec.validate();

    rng::Xoshiro256 gen(spec.rng_seed);
    PointCloud out = cloud;

    for (auto& p : out.points) {
        p = p + spec.translation;
    }
    if (spec.jitter_sigma > 0.0) {
        for (auto& p : out.points) {
            p.x += gen.normal(0.0, spec.jitter_sigma);
            p.y += gen.normal(0.0, spec.jitter_sigma);
            p.z += gen.normal(0.0, spec.jitter_sigma);
        }
    }
    const bool axes[3] = {spec.rotate_x, spec.rotate_y, spec.rotate_z};
    for (int axis = 0; axis < 3; ++axis) {
        if (!axes[axis]) continue;
        const double angle = gen.uniform(spec.angle_min, spec.angle_max);
        for (auto& p : out.points) rotate_about_axis(p, axis, angle);
    }
    return out;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    cloud.validate();
    const Point3 c = cloud.centroid();
    PointCloud out = cloud;
    for (auto& p : out.points) p = p - c;
    double r2 = 0.0;
    for (const auto& p : out.points) r2 = std::max(r2, p.dot(p));
    if (r2 > 0.0) {
        const double inv = 1.0 / std::sqrt(r2);
        for (auto& p : out.points) p = p * inv;
    }
    return out;
}

} // namespace fakepcd
