#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fakepcd/errors.hpp"

namespace fakepcd {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

    Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Point3 operator*(double s) const { return {x * s, y * s, z * s}; }

    double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
    Point3 cross(const Point3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
};

inline double squared_distance(const Point3& a, const Point3& b) {
    const Point3 d = a - b;
    return d.dot(d);
}

// Known sources carry a dense index in [0, K); everything else is the single
// catch-all unknown class.
struct SourceLabel {
    enum class Kind { known, unknown };

    Kind kind = Kind::unknown;
    int index = -1;
    std::string name; // display name; for unknowns this keeps the simulator id when available

    static SourceLabel known(int idx, std::string display_name) {
        if (idx < 0) throw std::invalid_argument("SourceLabel: known index must be >= 0");
        return SourceLabel{Kind::known, idx, std::move(display_name)};
    }
    static SourceLabel unknown(std::string display_name = "") {
        return SourceLabel{Kind::unknown, -1, std::move(display_name)};
    }

    bool is_known() const { return kind == Kind::known; }

    // Verdict equality: known labels compare by index, unknowns are one class.
    friend bool operator==(const SourceLabel& a, const SourceLabel& b) {
        if (a.kind != b.kind) return false;
        return a.kind == Kind::unknown || a.index == b.index;
    }
};

struct PointCloud {
    std::vector<Point3> points;
    std::optional<SourceLabel> source;
    std::optional<std::string> shape_tag;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    bool all_finite() const {
        for (const auto& p : points) {
            if (!p.finite()) return false;
        }
        return true;
    }

    void validate() const {
        if (points.empty()) throw ValidationError("point cloud must contain at least one point");
        if (!all_finite()) throw ValidationError("point cloud contains non-finite coordinates");
    }

    Point3 centroid() const {
        Point3 c;
        for (const auto& p : points) c = c + p;
        const double inv = 1.0 / static_cast<double>(points.size());
        return c * inv;
    }

    // Max distance from the centroid; 0 for a single point.
    double radius() const {
        const Point3 c = centroid();
        double r2 = 0.0;
        for (const auto& p : points) r2 = std::max(r2, squared_distance(p, c));
        return std::sqrt(r2);
    }
};

using Dataset = std::vector<PointCloud>;

// Translation, then per-coordinate Gaussian jitter, then rotation by a random
// angle drawn from [angle_min, angle_max] about each enabled axis (x, then y,
// then z). Everything is driven by rng_seed.
struct AugmentSpec {
    Point3 translation{};
    double jitter_sigma = 0.0;
    bool rotate_x = false;
    bool rotate_y = false;
    bool rotate_z = false;
    double angle_min = 0.0;
    double angle_max = 0.0;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(jitter_sigma >= 0.0)) throw ValidationError("augment: jitter_sigma must be >= 0");
        if (!translation.finite()) throw ValidationError("augment: translation must be finite");
        constexpr double two_pi = 6.283185307179586476925286766559;
        if (!(angle_min >= 0.0 && angle_max <= two_pi && angle_min <= angle_max))
            throw ValidationError("augment: angle range must satisfy 0 <= min <= max <= 2*pi");
    }
};

} // namespace fakepcd
