#include "fakepcd/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/rng.hpp"

namespace fakepcd::explain {

PointCloud CriticalPointSet::subset_of(const PointCloud& cloud) const {
    PointCloud out;
    out.source = cloud.source;
    out.shape_tag = cloud.shape_tag;
    out.points.reserve(indices.size());
    for (const int idx : indices) {
        if (idx < 0 || idx >= static_cast<int>(cloud.size()))
            throw std::invalid_argument("critical point index out of range");
        out.points.push_back(cloud.points[idx]);
    }
    return out;
}

CriticalPointSet critical_points(const nnet::ForwardTrace& trace) {
    std::set<int> unique(trace.argmax.begin(), trace.argmax.end());
    CriticalPointSet set;
    set.indices.assign(unique.begin(), unique.end());
    return set;
}

CriticalPointSet critical_points(const nnet::Model& model, const PointCloud& cloud) {
    return critical_points(nnet::encode(model, cloud));
}

namespace {

void project_axes(Plane plane, const Point3& p, double& u, double& v, double& depth) {
    switch (plane) {
    case Plane::xy:
        u = p.x;
        v = p.y;
        depth = p.z;
        break;
    case Plane::xz:
        u = p.x;
        v = p.z;
        depth = p.y;
        break;
    default:
        u = p.y;
        v = p.z;
        depth = p.x;
        break;
    }
}

} // namespace

DepthImage depth_project(const std::vector<Point3>& points, Plane plane, int width, int height,
                         BoundsMode bounds) {
    if (points.empty()) throw std::invalid_argument("depth_project: no points");
    if (width < 2 || height < 2)
        throw std::invalid_argument("depth_project: resolution must be at least 2x2");

    DepthImage image;
    image.width = width;
    image.height = height;
    image.plane = plane;

    if (bounds == BoundsMode::fixed) {
        image.min_u = image.min_v = -1.0;
        image.max_u = image.max_v = 1.0;
    } else {
        image.min_u = image.min_v = std::numeric_limits<double>::infinity();
        image.max_u = image.max_v = -std::numeric_limits<double>::infinity();
        for (const auto& p : points) {
            double u, v, depth;
            project_axes(plane, p, u, v, depth);
            image.min_u = std::min(image.min_u, u);
            image.max_u = std::max(image.max_u, u);
            image.min_v = std::min(image.min_v, v);
            image.max_v = std::max(image.max_v, v);
        }
        if (!(image.max_u > image.min_u) || !(image.max_v > image.min_v))
            throw std::invalid_argument("depth_project: degenerate bounds (zero extent)");
    }

    const double span_u = image.max_u - image.min_u;
    const double span_v = image.max_v - image.min_v;
    Eigen::MatrixXd depth_max =
        Eigen::MatrixXd::Constant(height, width, -std::numeric_limits<double>::infinity());
    bool any = false;
    for (const auto& p : points) {
        double u, v, depth;
        project_axes(plane, p, u, v, depth);
        if (u < image.min_u || u > image.max_u || v < image.min_v || v > image.max_v) continue;
        int col = static_cast<int>((u - image.min_u) / span_u * width);
        int row = static_cast<int>((v - image.min_v) / span_v * height);
        col = std::min(col, width - 1); // the max bound belongs to the last cell
        row = std::min(row, height - 1);
        depth_max(row, col) = std::max(depth_max(row, col), depth);
        any = true;
    }
    image.any_in_bounds = any;
    image.cells = Eigen::MatrixXd::Zero(height, width);
    if (!any) return image; // caller decides how loudly to warn

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (std::isinf(depth_max(r, c))) continue;
            lo = std::min(lo, depth_max(r, c));
            hi = std::max(hi, depth_max(r, c));
        }
    }
    const double range = hi - lo;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (std::isinf(depth_max(r, c))) continue;
            image.cells(r, c) = range > 0.0 ? (depth_max(r, c) - lo) / range : 1.0;
        }
    }
    return image;
}

Fingerprint build_fingerprint(const nnet::Model& model, const Dataset& source_clouds, int members,
                              int width, int height, std::uint64_t seed) {
    if (members < 1) throw std::invalid_argument("build_fingerprint: members must be >= 1");
    if (static_cast<int>(source_clouds.size()) < members)
        throw std::invalid_argument("build_fingerprint: need at least " + std::to_string(members) +
                                    " clouds, got " + std::to_string(source_clouds.size()));

    rng::Xoshiro256 gen(seed);
    const auto picks = gen.sample_without_replacement(source_clouds.size(), members);

    Fingerprint fp;
    fp.width = width;
    fp.height = height;
    fp.members = members;
    if (!source_clouds.empty() && source_clouds.front().source)
        fp.source_name = source_clouds.front().source->name;
    fp.cells = Eigen::MatrixXd::Zero(height, width);
    for (const std::size_t idx : picks) {
        const auto& cloud = source_clouds[idx];
        const auto critical = critical_points(model, cloud);
        const PointCloud aligned = normalize_unit_sphere(critical.subset_of(cloud));
        const DepthImage image =
            depth_project(aligned.points, Plane::xy, width, height, BoundsMode::fixed);
        fp.cells += image.cells;
    }
    fp.cells /= static_cast<double>(members);
    return fp;
}

std::size_t match_similar(const PointCloud& query, const Dataset& candidates) {
    if (candidates.empty()) throw std::invalid_argument("match_similar: no candidates");
    std::size_t best = 0;
    double best_cd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double cd = chamfer_distance(query, candidates[i]);
        if (cd < best_cd) { // strict: ties keep the first candidate
            best_cd = cd;
            best = i;
        }
    }
    return best;
}

void write_pgm(const Eigen::MatrixXd& cells, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out << "P2\n" << cells.cols() << " " << cells.rows() << "\n255\n";
    for (int r = 0; r < cells.rows(); ++r) {
        for (int c = 0; c < cells.cols(); ++c) {
            const double value = std::clamp(cells(r, c), 0.0, 1.0);
            out << static_cast<int>(std::lround(255.0 * value));
            out << (c + 1 == cells.cols() ? '\n' : ' ');
        }
    }
    if (!out) throw IoError("write failure: " + path.string());
}

Eigen::MatrixXd read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P2") throw ParseError("not a P2 PGM: " + path.string());
    int width = 0, height = 0, maxval = 0;
    in >> width >> height >> maxval;
    if (width < 1 || height < 1 || maxval < 1)
        throw ParseError("bad PGM header in " + path.string());
    Eigen::MatrixXd cells(height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            int gray;
            if (!(in >> gray)) throw ParseError("truncated PGM data in " + path.string());
            cells(r, c) = static_cast<double>(gray) / maxval;
        }
    }
    return cells;
}

} // namespace fakepcd::explain
