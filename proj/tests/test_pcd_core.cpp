#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "fakepcd/pcd_io.hpp"
#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/rng.hpp"
#include "test_util.hpp"

using namespace fakepcd;
using testutil::TempDir;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// Independent of the library writer: raw byte assembly.
std::string pcda_bytes(std::uint32_t count, const std::vector<float>& values) {
    std::string bytes = "PCDA";
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((count >> (8 * i)) & 0xff));
    for (const float v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    return bytes;
}

} // namespace

TEST_CASE("xyz read: plain two point file") {
    TempDir dir("xyz");
    write_file(dir / "two.xyz", "0 0 0\n1 2 3\n");
    const auto cloud = read_point_cloud(dir / "two.xyz", CloudFormat::xyz);
    REQUIRE(cloud.size() == 2);
    CHECK(cloud.points[0].x == 0.0);
    CHECK(cloud.points[1].x == 1.0);
    CHECK(cloud.points[1].y == 2.0);
    CHECK(cloud.points[1].z == 3.0);
}

TEST_CASE("xyz read: comments and auto detection") {
    TempDir dir("xyz");
    write_file(dir / "c.xyz", "# header\n0.5 -0.25 1.0\n");
    const auto cloud = read_point_cloud(dir / "c.xyz");
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points[0].y == -0.25);
}

TEST_CASE("xyz read: empty file is a parse error") {
    TempDir dir("xyz");
    write_file(dir / "empty.xyz", "");
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "empty.xyz", CloudFormat::xyz),
                         doctest::Contains("no points"), ParseError);
}

TEST_CASE("xyz read: malformed line names the line number") {
    TempDir dir("xyz");
    write_file(dir / "bad.xyz", "0 0 0\n1 2\n");
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "bad.xyz", CloudFormat::xyz),
                         doctest::Contains("line 2"), ParseError);
}

TEST_CASE("xyz read: nan coordinate is a validation error") {
    TempDir dir("xyz");
    write_file(dir / "nan.xyz", "0 nan 0\n");
    CHECK_THROWS_AS(read_point_cloud(dir / "nan.xyz", CloudFormat::xyz), ValidationError);
}

TEST_CASE("pcda read: hand-assembled three point file") {
    TempDir dir("pcda");
    const std::vector<float> values = {1.5f, -2.0f, 0.25f, 3.0f, 4.0f, 5.0f, -1.0f, 0.0f, 9.5f};
    write_file(dir / "three.pcda", pcda_bytes(3, values));
    const auto cloud = read_point_cloud(dir / "three.pcda");
    REQUIRE(cloud.size() == 3);
    CHECK(cloud.points[0].x == 1.5);
    CHECK(cloud.points[0].y == -2.0);
    CHECK(cloud.points[2].z == 9.5);
}

TEST_CASE("pcda read: bad magic, truncation, trailing bytes") {
    TempDir dir("pcda");
    write_file(dir / "bad.pcda", "NOPE\x01\x00\x00\x00");
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "bad.pcda", CloudFormat::pcda),
                         doctest::Contains("byte offset 0"), ParseError);

    write_file(dir / "short.pcda", pcda_bytes(2, {1.f, 2.f, 3.f}));
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "short.pcda"),
                         doctest::Contains("count mismatch"), ParseError);

    write_file(dir / "long.pcda", pcda_bytes(1, {1.f, 2.f, 3.f, 4.f}));
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "long.pcda"), doctest::Contains("trailing"),
                         ParseError);

    write_file(dir / "zero.pcda", pcda_bytes(0, {}));
    CHECK_THROWS_WITH_AS(read_point_cloud(dir / "zero.pcda"), doctest::Contains("no points"),
                         ParseError);
}

TEST_CASE("pcda round trip is bit exact") {
    TempDir dir("roundtrip");
    const auto cloud = testutil::random_cloud_f32(2048, 21);
    write_point_cloud(cloud, dir / "c.pcda");
    const auto back = read_point_cloud(dir / "c.pcda");
    REQUIRE(back.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(back.points[i].x == cloud.points[i].x);
        CHECK(back.points[i].y == cloud.points[i].y);
        CHECK(back.points[i].z == cloud.points[i].z);
    }
}

TEST_CASE("xyz round trip error stays within 5e-7") {
    TempDir dir("roundtrip");
    const auto cloud = testutil::random_cloud(512, 22);
    write_point_cloud(cloud, dir / "c.xyz");
    const auto back = read_point_cloud(dir / "c.xyz");
    REQUIRE(back.size() == cloud.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        worst = std::max(worst, std::abs(back.points[i].x - cloud.points[i].x));
        worst = std::max(worst, std::abs(back.points[i].y - cloud.points[i].y));
        worst = std::max(worst, std::abs(back.points[i].z - cloud.points[i].z));
    }
    CHECK(worst <= 5e-7);
}

TEST_CASE("write refuses non-finite clouds before touching the file") {
    TempDir dir("refuse");
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {std::nan(""), 0, 0}};
    CHECK_THROWS_AS(write_point_cloud(cloud, dir / "bad.pcda"), ValidationError);
    CHECK(!std::filesystem::exists(dir / "bad.pcda"));
}

TEST_CASE("downsample: subset without duplicates") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
    const auto out = downsample(cloud, 3, 7);
    REQUIRE(out.size() == 3);
    std::set<double> seen;
    for (const auto& p : out.points) {
        CHECK(p.x == std::floor(p.x));
        CHECK(p.x >= 0.0);
        CHECK(p.x <= 4.0);
        CHECK(seen.insert(p.x).second); // no duplicates
    }
}

TEST_CASE("downsample: m >= size is the identity, m = 0 rejected") {
    const auto cloud = testutil::random_cloud(10, 3);
    const auto same = downsample(cloud, 10, 99);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(same.points[i].x == cloud.points[i].x);
    }
    CHECK_THROWS_AS(downsample(cloud, 0, 1), std::invalid_argument);
}

TEST_CASE("downsample: 15000 to 2048 and determinism") {
    const auto cloud = testutil::random_cloud(15000, 4);
    const auto a = downsample(cloud, 2048, 11);
    const auto b = downsample(cloud, 2048, 11);
    REQUIRE(a.size() == 2048);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
    }
    // sub-multiset: every output point exists in the input
    std::set<double> input_x;
    for (const auto& p : cloud.points) input_x.insert(p.x);
    for (const auto& p : a.points) CHECK(input_x.count(p.x) == 1);
}

TEST_CASE("chamfer: identity, simple pair, empty rejection") {
    const auto cloud = testutil::random_cloud(32, 5);
    CHECK(chamfer_distance(cloud, cloud) == 0.0);

    PointCloud a, b;
    a.points = {{0, 0, 0}};
    b.points = {{1, 0, 0}};
    CHECK(chamfer_distance(a, b) == doctest::Approx(2.0).epsilon(1e-15));

    PointCloud empty;
    CHECK_THROWS_AS(chamfer_distance(empty, a), std::invalid_argument);
}

TEST_CASE("chamfer matches an exhaustive oracle and is symmetric") {
    const auto a = testutil::random_cloud(64, 6);
    const auto b = testutil::random_cloud(64, 7);

    // independent O(n^2) evaluation
    auto one_way = [](const PointCloud& from, const PointCloud& to) {
        double total = 0.0;
        for (const auto& p : from.points) {
            double best = 1e300;
            for (const auto& q : to.points) {
                const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            total += best;
        }
        return total / static_cast<double>(from.points.size());
    };
    const double oracle = one_way(a, b) + one_way(b, a);
    CHECK(chamfer_distance(a, b) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(std::abs(chamfer_distance(a, b) - chamfer_distance(b, a)) <= 1e-12);
}

TEST_CASE("augment: identity spec changes nothing") {
    const auto cloud = testutil::random_cloud(20, 8);
    AugmentSpec spec; // zero translation, zero jitter, no rotation
    const auto out = augment(cloud, spec);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(out.points[i].x == cloud.points[i].x);
        CHECK(out.points[i].y == cloud.points[i].y);
        CHECK(out.points[i].z == cloud.points[i].z);
    }
}

TEST_CASE("augment: quarter turn about z maps x to y") {
    PointCloud cloud;
    cloud.points = {{1, 0, 0}};
    AugmentSpec spec;
    spec.rotate_z = true;
    spec.angle_min = spec.angle_max = 1.5707963267948966; // pi/2 exactly
    const auto out = augment(cloud, spec);
    CHECK(std::abs(out.points[0].x - 0.0) < 1e-12);
    CHECK(std::abs(out.points[0].y - 1.0) < 1e-12);
    CHECK(std::abs(out.points[0].z - 0.0) < 1e-12);
}

TEST_CASE("augment: rotation-only specs preserve pairwise distances") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto cloud = testutil::random_cloud(24, 100 + seed);
        AugmentSpec spec;
        spec.rotate_x = (seed % 2) == 0;
        spec.rotate_y = (seed % 3) == 0;
        spec.rotate_z = true;
        spec.angle_min = 0.0;
        spec.angle_max = 6.283185307179586;
        spec.rng_seed = seed;
        const auto out = augment(cloud, spec);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            for (std::size_t j = i + 1; j < cloud.size(); ++j) {
                const double before = std::sqrt(squared_distance(cloud.points[i], cloud.points[j]));
                const double after = std::sqrt(squared_distance(out.points[i], out.points[j]));
                CHECK(std::abs(before - after) < 1e-9);
            }
        }
    }
}

TEST_CASE("augment: determinism and jitter statistics") {
    const auto cloud = testutil::random_cloud(400, 9);
    AugmentSpec spec;
    spec.jitter_sigma = 0.05;
    spec.rng_seed = 1234;
    const auto a = augment(cloud, spec);
    const auto b = augment(cloud, spec);
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        for (const double d : {a.points[i].x - cloud.points[i].x, a.points[i].y - cloud.points[i].y,
                               a.points[i].z - cloud.points[i].z}) {
            sum += d;
            sum_sq += d * d;
            ++count;
        }
    }
    const double mean = sum / count;
    const double stddev = std::sqrt(sum_sq / count - mean * mean);
    CHECK(std::abs(mean) < 0.01);
    CHECK(stddev == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("augment: invalid specs are rejected") {
    const auto cloud = testutil::random_cloud(4, 10);
    AugmentSpec spec;
    spec.jitter_sigma = -1.0;
    CHECK_THROWS_AS(augment(cloud, spec), ValidationError);
    spec.jitter_sigma = 0.0;
    spec.angle_min = -0.5;
    CHECK_THROWS_AS(augment(cloud, spec), ValidationError);
}

TEST_CASE("normalize_unit_sphere centers and scales") {
    auto cloud = testutil::random_cloud(50, 11, 3.0);
    for (auto& p : cloud.points) p.x += 10.0;
    const auto out = normalize_unit_sphere(cloud);
    const Point3 c = out.centroid();
    CHECK(std::abs(c.x) < 1e-12);
    CHECK(std::abs(c.y) < 1e-12);
    CHECK(std::abs(c.z) < 1e-12);
    double max_r = 0.0;
    for (const auto& p : out.points) max_r = std::max(max_r, p.norm());
    CHECK(max_r == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rng: deterministic streams and seed derivation") {
    rng::Xoshiro256 a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    CHECK(a.next_u64() != c.next_u64());
    CHECK(rng::derive(1, 2, 3) != rng::derive(1, 2, 4));
    CHECK(rng::derive(1, 2, 3) == rng::derive(1, 2, 3));
}

TEST_CASE("rng: uniform01 range and normal moments") {
    rng::Xoshiro256 gen(7);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = gen.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double g = gen.normal();
        sum += g;
        sum_sq += g * g;
    }
    CHECK(std::abs(sum / 20000.0) < 0.03);
    CHECK(sum_sq / 20000.0 == doctest::Approx(1.0).epsilon(0.05));
}
