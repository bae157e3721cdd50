#include "fakepcd/simsource.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <variant>

#include "fakepcd/rng.hpp"

namespace fakepcd::simsource {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// --- analytic surface primitives ---------------------------------------------

struct Quad { // origin + a*u + b*v, a,b in [0,1)
    Point3 origin, edge_u, edge_v;
    double area() const { return edge_u.cross(edge_v).norm(); }
    Point3 sample(rng::Xoshiro256& gen) const {
        return origin + edge_u * gen.uniform01() + edge_v * gen.uniform01();
    }
};

struct CylinderSide { // lateral surface, axis-aligned
    Point3 center; // midpoint of the axis segment
    int axis = 2;
    double radius = 0.1;
    double half_length = 0.1;
    double area() const { return 2.0 * kPi * radius * 2.0 * half_length; }
    Point3 sample(rng::Xoshiro256& gen) const {
        const double theta = gen.uniform(0.0, 2.0 * kPi);
        const double along = gen.uniform(-half_length, half_length);
        const double c = radius * std::cos(theta);
        const double s = radius * std::sin(theta);
        Point3 p = center;
        switch (axis) {
        case 0: p.x += along; p.y += c; p.z += s; break;
        case 1: p.y += along; p.z += c; p.x += s; break;
        default: p.z += along; p.x += c; p.y += s; break;
        }
        return p;
    }
};

struct Disk { // normal +z
    Point3 center;
    double radius = 0.1;
    double area() const { return kPi * radius * radius; }
    Point3 sample(rng::Xoshiro256& gen) const {
        const double r = radius * std::sqrt(gen.uniform01());
        const double theta = gen.uniform(0.0, 2.0 * kPi);
        return {center.x + r * std::cos(theta), center.y + r * std::sin(theta), center.z};
    }
};

struct FrustumSide { // lateral cone surface, axis +z from base_center
    Point3 base_center;
    double radius_bottom = 0.3;
    double radius_top = 0.15;
    double height = 0.3;
    double area() const {
        const double slant = std::hypot(radius_top - radius_bottom, height);
        return kPi * (radius_bottom + radius_top) * slant;
    }
    Point3 sample(rng::Xoshiro256& gen) const {
        // density along t is proportional to the local radius
        const double r0 = radius_bottom;
        const double dr = radius_top - radius_bottom;
        const double u = gen.uniform01();
        double t;
        if (std::abs(dr) < 1e-12) {
            t = u;
        } else {
            const double mean_r = r0 + dr / 2.0;
            t = (-r0 + std::sqrt(r0 * r0 + dr * (2.0 * mean_r) * u)) / dr;
        }
        const double r = r0 + dr * t;
        const double theta = gen.uniform(0.0, 2.0 * kPi);
        return {base_center.x + r * std::cos(theta), base_center.y + r * std::sin(theta),
                base_center.z + height * t};
    }
};

using Primitive = std::variant<Quad, CylinderSide, Disk, FrustumSide>;

double primitive_area(const Primitive& p) {
    return std::visit([](const auto& prim) { return prim.area(); }, p);
}

Point3 primitive_sample(const Primitive& p, rng::Xoshiro256& gen) {
    return std::visit([&](const auto& prim) { return prim.sample(gen); }, p);
}

struct Surface {
    std::vector<Primitive> primitives;
    std::vector<double> cumulative_area;
    Point3 bbox_lo{1e9, 1e9, 1e9};
    Point3 bbox_hi{-1e9, -1e9, -1e9};

    void finish() {
        double total = 0.0;
        cumulative_area.clear();
        for (const auto& p : primitives) {
            total += primitive_area(p);
            cumulative_area.push_back(total);
        }
        // bbox from a coarse deterministic scan; plenty for density shaping
        rng::Xoshiro256 gen(0x62626f78);
        for (int i = 0; i < 4096; ++i) {
            const Point3 p = sample(gen);
            bbox_lo = {std::min(bbox_lo.x, p.x), std::min(bbox_lo.y, p.y), std::min(bbox_lo.z, p.z)};
            bbox_hi = {std::max(bbox_hi.x, p.x), std::max(bbox_hi.y, p.y), std::max(bbox_hi.z, p.z)};
        }
    }

    Point3 sample(rng::Xoshiro256& gen) const {
        const double u = gen.uniform01() * cumulative_area.back();
        const auto it =
            std::upper_bound(cumulative_area.begin(), cumulative_area.end(), u);
        const std::size_t idx = std::min<std::size_t>(
            static_cast<std::size_t>(it - cumulative_area.begin()), primitives.size() - 1);
        return primitive_sample(primitives[idx], gen);
    }
};

void add_box(Surface& s, Point3 center, Point3 half) {
    const double x0 = center.x - half.x, x1 = center.x + half.x;
    const double y0 = center.y - half.y, y1 = center.y + half.y;
    const double z0 = center.z - half.z, z1 = center.z + half.z;
    const Point3 dx{2 * half.x, 0, 0}, dy{0, 2 * half.y, 0}, dz{0, 0, 2 * half.z};
    s.primitives.push_back(Quad{{x0, y0, z0}, dx, dy}); // bottom
    s.primitives.push_back(Quad{{x0, y0, z1}, dx, dy}); // top
    s.primitives.push_back(Quad{{x0, y0, z0}, dx, dz}); // front
    s.primitives.push_back(Quad{{x0, y1, z0}, dx, dz}); // back
    s.primitives.push_back(Quad{{x0, y0, z0}, dy, dz}); // left
    s.primitives.push_back(Quad{{x1, y0, z0}, dy, dz}); // right
}

Surface make_airplane() {
    Surface s;
    add_box(s, {0.0, 0.0, 0.0}, {0.80, 0.10, 0.10});   // fuselage
    add_box(s, {0.10, 0.0, 0.02}, {0.22, 0.85, 0.015}); // main wings
    add_box(s, {-0.70, 0.0, 0.05}, {0.12, 0.30, 0.01}); // tail wings
    add_box(s, {-0.72, 0.0, 0.22}, {0.10, 0.012, 0.15}); // fin
    s.finish();
    return s;
}

Surface make_car() {
    Surface s;
    add_box(s, {0.0, 0.0, -0.05}, {0.70, 0.30, 0.15});  // body
    add_box(s, {-0.05, 0.0, 0.20}, {0.35, 0.28, 0.12}); // cabin
    for (const double sx : {-0.40, 0.40}) {
        for (const double sy : {-0.31, 0.31}) {
            s.primitives.push_back(CylinderSide{{sx, sy, -0.25}, 1, 0.14, 0.05});
        }
    }
    s.finish();
    return s;
}

Surface make_chair() {
    Surface s;
    add_box(s, {0.0, 0.0, 0.0}, {0.40, 0.40, 0.04});    // seat
    add_box(s, {-0.38, 0.0, 0.42}, {0.04, 0.40, 0.38}); // backrest
    for (const double sx : {-0.34, 0.34}) {
        for (const double sy : {-0.34, 0.34}) {
            add_box(s, {sx, sy, -0.35}, {0.04, 0.04, 0.31});
        }
    }
    s.finish();
    return s;
}

Surface make_bench() {
    Surface s;
    add_box(s, {0.0, 0.0, 0.0}, {0.80, 0.25, 0.04});    // seat
    add_box(s, {0.0, -0.28, 0.28}, {0.78, 0.03, 0.05}); // lower slat
    add_box(s, {0.0, -0.28, 0.46}, {0.78, 0.03, 0.05}); // upper slat
    add_box(s, {-0.70, 0.0, -0.30}, {0.05, 0.22, 0.26});
    add_box(s, {0.70, 0.0, -0.30}, {0.05, 0.22, 0.26});
    s.finish();
    return s;
}

Surface make_cabinet() {
    Surface s;
    add_box(s, {0.0, 0.0, 0.0}, {0.45, 0.35, 0.60});     // carcass
    add_box(s, {0.46, 0.0, 0.0}, {0.005, 0.012, 0.55});  // door seam
    add_box(s, {0.47, -0.10, 0.05}, {0.012, 0.02, 0.07}); // handles
    add_box(s, {0.47, 0.10, 0.05}, {0.012, 0.02, 0.07});
    s.finish();
    return s;
}

Surface make_lamp() {
    Surface s;
    s.primitives.push_back(Disk{{0.0, 0.0, -0.57}, 0.30});
    s.primitives.push_back(CylinderSide{{0.0, 0.0, -0.60}, 2, 0.30, 0.03});
    s.primitives.push_back(CylinderSide{{0.0, 0.0, -0.05}, 2, 0.035, 0.55});
    s.primitives.push_back(FrustumSide{{0.0, 0.0, 0.50}, 0.32, 0.16, 0.35});
    s.finish();
    return s;
}

const Surface& shape_surface(const std::string& name) {
    static const Surface airplane = make_airplane();
    static const Surface car = make_car();
    static const Surface chair = make_chair();
    static const Surface bench = make_bench();
    static const Surface cabinet = make_cabinet();
    static const Surface lamp = make_lamp();
    if (name == "airplane") return airplane;
    if (name == "car") return car;
    if (name == "chair") return chair;
    if (name == "bench") return bench;
    if (name == "cabinet") return cabinet;
    if (name == "lamp") return lamp;
    throw std::invalid_argument("unknown shape '" + name + "'");
}

// --- artifact signatures ------------------------------------------------------

std::vector<Point3> clean_points(const Surface& surface, int n, rng::Xoshiro256& gen) {
    std::vector<Point3> points;
    points.reserve(n);
    for (int i = 0; i < n; ++i) points.push_back(surface.sample(gen));
    return points;
}

void apply_quantize(std::vector<Point3>& points, double step) {
    for (auto& p : points) {
        p.x = std::round(p.x / step) * step;
        p.y = std::round(p.y / step) * step;
        p.z = std::round(p.z / step) * step;
    }
}

Point3 random_unit_vector(rng::Xoshiro256& gen) {
    while (true) {
        Point3 v{gen.uniform(-1, 1), gen.uniform(-1, 1), gen.uniform(-1, 1)};
        const double norm = v.norm();
        if (norm > 1e-3 && norm <= 1.0) return v * (1.0 / norm);
    }
}

// The warp field is a fixed property of the source (seeded by spec.seed
// alone): every cloud from this source carries the same spatial ripple, the
// way a generative model carries a systematic bias. Only the iid component
// varies per cloud.
struct WarpField {
    Point3 direction[3];
    double frequency[3];
    double phase[3];

    static WarpField for_source(std::uint64_t source_seed) {
        rng::Xoshiro256 gen(rng::derive(source_seed, 0x77617270));
        WarpField field;
        for (int axis = 0; axis < 3; ++axis) {
            field.direction[axis] = random_unit_vector(gen);
            field.frequency[axis] = gen.uniform(4.0, 9.0);
            field.phase[axis] = gen.uniform(0.0, 2.0 * kPi);
        }
        return field;
    }

    Point3 displacement(const Point3& p, double amplitude) const {
        return {amplitude * std::sin(frequency[0] * p.dot(direction[0]) + phase[0]),
                amplitude * std::sin(frequency[1] * p.dot(direction[1]) + phase[1]),
                amplitude * std::sin(frequency[2] * p.dot(direction[2]) + phase[2])};
    }
};

void apply_surface_noise(std::vector<Point3>& points, const ArtifactSignature& artifact,
                         std::uint64_t source_seed, rng::Xoshiro256& cloud_gen) {
    const WarpField field = WarpField::for_source(source_seed);
    const double ripple = artifact.sigma * artifact.correlation;
    const double iid = artifact.sigma * (1.0 - artifact.correlation);
    for (auto& p : points) {
        p = p + field.displacement(p, ripple);
        if (iid > 0.0) {
            p.x += cloud_gen.normal(0.0, iid);
            p.y += cloud_gen.normal(0.0, iid);
            p.z += cloud_gen.normal(0.0, iid);
        }
    }
}

std::vector<Point3> sample_density_bias(const Surface& surface, int n,
                                        const ArtifactSignature& artifact,
                                        rng::Xoshiro256& clean_gen, rng::Xoshiro256& artifact_gen) {
    const double lo = artifact.axis == 0   ? surface.bbox_lo.x
                      : artifact.axis == 1 ? surface.bbox_lo.y
                                           : surface.bbox_lo.z;
    const double hi = artifact.axis == 0   ? surface.bbox_hi.x
                      : artifact.axis == 1 ? surface.bbox_hi.y
                                           : surface.bbox_hi.z;
    const double span = std::max(hi - lo, 1e-9);
    std::vector<Point3> points;
    points.reserve(n);
    const long max_candidates = 2000L * n;
    for (long tries = 0; static_cast<int>(points.size()) < n; ++tries) {
        const Point3 p = surface.sample(clean_gen);
        if (tries < max_candidates) {
            const double coord = artifact.axis == 0 ? p.x : artifact.axis == 1 ? p.y : p.z;
            const double t = std::clamp((coord - lo) / span, 0.0, 1.0);
            const double accept = std::pow(t, artifact.exponent);
            if (artifact_gen.uniform01() >= accept) continue;
        }
        points.push_back(p);
    }
    return points;
}

std::vector<Point3> sample_dropout_patches(const Surface& surface, int n,
                                           const ArtifactSignature& artifact,
                                           std::uint64_t source_seed,
                                           rng::Xoshiro256& clean_gen) {
    // Patch locations belong to the source, not the cloud: the same holes
    // appear in every sample, like a model that never covers those regions.
    rng::Xoshiro256 patch_gen(rng::derive(source_seed, 0x686f6c65));
    std::vector<Point3> centers;
    centers.reserve(artifact.patch_count);
    for (int i = 0; i < artifact.patch_count; ++i) centers.push_back(surface.sample(patch_gen));
    const double r2 = artifact.patch_radius * artifact.patch_radius;

    std::vector<Point3> points;
    points.reserve(n);
    const long max_candidates = 2000L * n;
    for (long tries = 0; static_cast<int>(points.size()) < n; ++tries) {
        const Point3 p = surface.sample(clean_gen);
        if (tries < max_candidates) {
            bool inside_hole = false;
            for (const auto& c : centers) {
                if (squared_distance(p, c) < r2) {
                    inside_hole = true;
                    break;
                }
            }
            if (inside_hole) continue;
        }
        points.push_back(p);
    }
    return points;
}

// Radius-based so the contraction geometry does not depend on how densely
// the surface was sampled: thin parts collapse toward their midplane, edges
// round off, at any n.
void apply_smoothing(std::vector<Point3>& points, const ArtifactSignature& artifact) {
    const int n = static_cast<int>(points.size());
    const double r2 = artifact.smooth_radius * artifact.smooth_radius;
    std::vector<Point3> next(points.size());
    for (int iter = 0; iter < artifact.smooth_iterations; ++iter) {
        for (int i = 0; i < n; ++i) {
            Point3 mean;
            int count = 0;
            for (int j = 0; j < n; ++j) {
                if (squared_distance(points[i], points[j]) <= r2) {
                    mean = mean + points[j];
                    ++count;
                }
            }
            next[i] = mean * (1.0 / count); // the point itself always counts
        }
        points.swap(next);
    }
}

} // namespace

void ArtifactSignature::validate() const {
    switch (kind) {
    case ArtifactKind::none:
        break;
    case ArtifactKind::grid_quantize:
        if (!(step > 0.0 && step <= 0.5))
            throw std::invalid_argument("grid_quantize: step must be in (0, 0.5]");
        break;
    case ArtifactKind::surface_noise:
        if (!(sigma > 0.0 && sigma <= 0.5))
            throw std::invalid_argument("surface_noise: sigma must be in (0, 0.5]");
        if (!(correlation >= 0.0 && correlation <= 1.0))
            throw std::invalid_argument("surface_noise: correlation must be in [0, 1]");
        break;
    case ArtifactKind::density_bias:
        if (axis < 0 || axis > 2) throw std::invalid_argument("density_bias: axis must be 0..2");
        if (!(exponent > 0.0 && exponent <= 8.0))
            throw std::invalid_argument("density_bias: exponent must be in (0, 8]");
        break;
    case ArtifactKind::dropout_patches:
        if (patch_count < 1 || patch_count > 32)
            throw std::invalid_argument("dropout_patches: count must be in [1, 32]");
        if (!(patch_radius > 0.0 && patch_radius <= 1.0))
            throw std::invalid_argument("dropout_patches: radius must be in (0, 1]");
        break;
    case ArtifactKind::smoothing:
        if (smooth_iterations < 1 || smooth_iterations > 10)
            throw std::invalid_argument("smoothing: iterations must be in [1, 10]");
        if (!(smooth_radius > 0.0 && smooth_radius <= 1.0))
            throw std::invalid_argument("smoothing: radius must be in (0, 1]");
        break;
    }
}

std::vector<SimSourceSpec> default_sources() {
    std::vector<SimSourceSpec> sources(6);
    sources[0].name = "real";
    sources[0].artifact.kind = ArtifactKind::none;
    sources[0].seed = 101;

    sources[1].name = "quantized";
    sources[1].artifact.kind = ArtifactKind::grid_quantize;
    sources[1].artifact.step = 0.22;
    sources[1].seed = 102;

    sources[2].name = "noisy";
    sources[2].artifact.kind = ArtifactKind::surface_noise;
    sources[2].artifact.sigma = 0.17;
    sources[2].artifact.correlation = 0.95;
    sources[2].seed = 103;

    sources[3].name = "biased";
    sources[3].artifact.kind = ArtifactKind::density_bias;
    sources[3].artifact.axis = 0;
    sources[3].artifact.exponent = 3.5;
    sources[3].seed = 104;

    sources[4].name = "cratered";
    sources[4].artifact.kind = ArtifactKind::dropout_patches;
    sources[4].artifact.patch_count = 5;
    sources[4].artifact.patch_radius = 0.42;
    sources[4].seed = 105;

    sources[5].name = "smoothed";
    sources[5].artifact.kind = ArtifactKind::smoothing;
    sources[5].artifact.smooth_iterations = 4;
    sources[5].artifact.smooth_radius = 0.24;
    sources[5].seed = 106;
    return sources;
}

std::vector<std::string> default_shapes() {
    return {"airplane", "car", "chair", "bench", "cabinet", "lamp"};
}

const SimSourceSpec& find_source(const std::vector<SimSourceSpec>& catalog,
                                 const std::string& name) {
    for (const auto& spec : catalog) {
        if (spec.name == name) return spec;
    }
    throw std::invalid_argument("unknown source '" + name + "'");
}

PointCloud sample_cloud(const SimSourceSpec& spec, const std::string& shape, int n,
                        std::uint64_t seed) {
    if (n < 8) throw std::invalid_argument("sample_cloud: need at least 8 points");
    spec.artifact.validate();
    const Surface& surface = shape_surface(shape);

    // The clean stream is source-independent so that same-seed clouds from
    // two sources differ only by their artifact signatures.
    rng::Xoshiro256 clean_gen(rng::derive(0x636c65616e, rng::hash_string(shape), n, seed));
    rng::Xoshiro256 artifact_gen(rng::derive(spec.seed, 0x617274, seed));

    std::vector<Point3> points;
    switch (spec.artifact.kind) {
    case ArtifactKind::none:
        points = clean_points(surface, n, clean_gen);
        break;
    case ArtifactKind::grid_quantize:
        points = clean_points(surface, n, clean_gen);
        apply_quantize(points, spec.artifact.step);
        break;
    case ArtifactKind::surface_noise:
        points = clean_points(surface, n, clean_gen);
        apply_surface_noise(points, spec.artifact, spec.seed, artifact_gen);
        break;
    case ArtifactKind::density_bias:
        points = sample_density_bias(surface, n, spec.artifact, clean_gen, artifact_gen);
        break;
    case ArtifactKind::dropout_patches:
        points = sample_dropout_patches(surface, n, spec.artifact, spec.seed, clean_gen);
        break;
    case ArtifactKind::smoothing:
        points = clean_points(surface, n, clean_gen);
        apply_smoothing(points, spec.artifact);
        break;
    }

    PointCloud cloud;
    cloud.points = std::move(points);
    cloud.source = SourceLabel::unknown(spec.name); // provenance only; scenarios relabel
    cloud.shape_tag = shape;
    cloud.validate();
    return cloud;
}

void ScenarioConfig::validate() const {
    if (known_sources.empty()) throw ConfigError("scenario: needs at least one known source");
    std::set<std::string> known(known_sources.begin(), known_sources.end());
    if (known.size() != known_sources.size())
        throw ConfigError("scenario: duplicate known source");
    for (const auto& name : unknown_sources) {
        if (known.count(name))
            throw ConfigError("scenario: source '" + name + "' cannot be both known and unknown");
    }
    std::set<std::string> unknown(unknown_sources.begin(), unknown_sources.end());
    if (unknown.size() != unknown_sources.size())
        throw ConfigError("scenario: duplicate unknown source");
    if (seen_shapes.empty()) throw ConfigError("scenario: needs at least one seen shape");
    std::set<std::string> seen(seen_shapes.begin(), seen_shapes.end());
    for (const auto& name : unseen_shapes) {
        if (seen.count(name))
            throw ConfigError("scenario: shape '" + name + "' cannot be both seen and unseen");
    }
    if (clouds_per_source_shape < 5)
        throw ConfigError("scenario: clouds_per_source_shape must be >= 5");
    if (points_per_cloud < 8) throw ConfigError("scenario: points_per_cloud must be >= 8");
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw ConfigError("scenario: train_ratio must be in (0, 1)");
    if (validation_target < 0) throw ConfigError("scenario: validation_target must be >= 0");
}

Scenario build_scenario(const ScenarioConfig& config) {
    return build_scenario(config, default_sources());
}

Scenario build_scenario(const ScenarioConfig& config, const std::vector<SimSourceSpec>& catalog) {
    config.validate();
    Scenario scenario;
    scenario.config = config;
    for (const auto& name : config.known_sources)
        scenario.known.push_back(find_source(catalog, name));
    for (const auto& name : config.unknown_sources)
        scenario.unknown.push_back(find_source(catalog, name));

    std::vector<std::string> shapes = config.seen_shapes;
    shapes.insert(shapes.end(), config.unseen_shapes.begin(), config.unseen_shapes.end());
    const std::size_t seen_count = config.seen_shapes.size();

    // Cells keep (source, shape) order; the carve-out below is stratified
    // over these cells.
    std::vector<Dataset> test_cells;
    for (std::size_t s = 0; s < scenario.known.size() + scenario.unknown.size(); ++s) {
        const bool is_known = s < scenario.known.size();
        const SimSourceSpec& spec =
            is_known ? scenario.known[s] : scenario.unknown[s - scenario.known.size()];
        const SourceLabel label = is_known
                                      ? SourceLabel::known(static_cast<int>(s), spec.name)
                                      : SourceLabel::unknown(spec.name);
        for (std::size_t sh = 0; sh < shapes.size(); ++sh) {
            const bool shape_seen = sh < seen_count;
            Dataset cell;
            cell.reserve(config.clouds_per_source_shape);
            for (int i = 0; i < config.clouds_per_source_shape; ++i) {
                PointCloud cloud = sample_cloud(spec, shapes[sh], config.points_per_cloud,
                                                rng::derive(config.seed, s, sh, i));
                cloud.source = label;
                cell.push_back(std::move(cloud));
            }

            if (is_known && shape_seen) {
                rng::Xoshiro256 gen(rng::derive(config.seed, 0x73706c6974, s, sh));
                std::vector<std::size_t> order(cell.size());
                std::iota(order.begin(), order.end(), 0);
                gen.shuffle(order);
                const auto train_count = static_cast<std::size_t>(
                    std::llround(config.train_ratio * static_cast<double>(cell.size())));
                Dataset test_part;
                for (std::size_t i = 0; i < order.size(); ++i) {
                    auto& cloud = cell[order[i]];
                    (i < train_count ? scenario.train : test_part).push_back(std::move(cloud));
                }
                test_cells.push_back(std::move(test_part));
            } else {
                test_cells.push_back(std::move(cell)); // unknown source or unseen shape
            }
        }
    }

    // Validation carve-out: largest-remainder allocation over test cells.
    std::size_t test_total = 0;
    for (const auto& cell : test_cells) test_total += cell.size();
    std::size_t val_target = std::min<std::size_t>(config.validation_target, test_total / 2);
    if (val_target > 0) {
        std::vector<std::size_t> quota(test_cells.size(), 0);
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t allocated = 0;
        for (std::size_t c = 0; c < test_cells.size(); ++c) {
            const double exact = static_cast<double>(val_target) *
                                 static_cast<double>(test_cells[c].size()) /
                                 static_cast<double>(test_total);
            quota[c] = std::min<std::size_t>(static_cast<std::size_t>(exact),
                                             test_cells[c].size());
            allocated += quota[c];
            remainders.push_back({exact - std::floor(exact), c});
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [frac, c] : remainders) {
            (void)frac;
            if (allocated >= val_target) break;
            if (quota[c] < test_cells[c].size()) {
                ++quota[c];
                ++allocated;
            }
        }
        for (std::size_t c = 0; c < test_cells.size(); ++c) {
            rng::Xoshiro256 gen(rng::derive(config.seed, 0x76616c, c));
            const auto picks = gen.sample_without_replacement(test_cells[c].size(), quota[c]);
            std::vector<bool> to_val(test_cells[c].size(), false);
            for (const auto idx : picks) to_val[idx] = true;
            for (std::size_t i = 0; i < test_cells[c].size(); ++i) {
                (to_val[i] ? scenario.validation : scenario.test)
                    .push_back(std::move(test_cells[c][i]));
            }
        }
    } else {
        for (auto& cell : test_cells) {
            for (auto& cloud : cell) scenario.test.push_back(std::move(cloud));
        }
    }
    return scenario;
}

} // namespace fakepcd::simsource
