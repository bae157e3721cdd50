#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/simsource.hpp"
#include "test_util.hpp"

using namespace fakepcd;
using namespace fakepcd::simsource;

TEST_CASE("sample_cloud: basic contract") {
    const auto sources = default_sources();
    for (const auto& shape : default_shapes()) {
        const auto cloud = sample_cloud(sources[0], shape, 64, 5);
        CHECK(cloud.size() == 64);
        CHECK(cloud.all_finite());
        CHECK(cloud.shape_tag.value() == shape);
        CHECK(cloud.source->name == "real");
    }
    CHECK_THROWS_AS(sample_cloud(sources[0], "teapot", 64, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_cloud(sources[0], "airplane", 4, 1), std::invalid_argument);
}

TEST_CASE("sample_cloud: determinism per (spec, shape, n, seed)") {
    const auto sources = default_sources();
    for (const auto& spec : sources) {
        const auto a = sample_cloud(spec, "chair", 96, 11);
        const auto b = sample_cloud(spec, "chair", 96, 11);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.points[i].x == b.points[i].x);
            CHECK(a.points[i].y == b.points[i].y);
            CHECK(a.points[i].z == b.points[i].z);
        }
        const auto c = sample_cloud(spec, "chair", 96, 12);
        bool differs = false;
        for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a.points[i].x != c.points[i].x;
        CHECK(differs);
    }
}

TEST_CASE("grid quantization: every coordinate lands on the lattice") {
    const auto sources = default_sources();
    const auto& quantized = find_source(sources, "quantized");
    const double step = quantized.artifact.step;
    const auto cloud = sample_cloud(quantized, "car", 256, 9);
    for (const auto& p : cloud.points) {
        for (const double v : {p.x, p.y, p.z}) {
            CHECK(std::abs(v - std::round(v / step) * step) <= 1e-12);
        }
    }
}

TEST_CASE("density bias: point density skews along the configured axis") {
    const auto sources = default_sources();
    const auto& biased = find_source(sources, "biased");
    const auto plain = sample_cloud(find_source(sources, "real"), "chair", 512, 3);
    const auto skewed = sample_cloud(biased, "chair", 512, 3);
    auto mean_x = [](const PointCloud& cloud) {
        double total = 0.0;
        for (const auto& p : cloud.points) total += p.x;
        return total / static_cast<double>(cloud.size());
    };
    CHECK(mean_x(skewed) > mean_x(plain) + 0.1);
}

TEST_CASE("dropout patches: output still has the requested size") {
    const auto sources = default_sources();
    const auto cloud = sample_cloud(find_source(sources, "cratered"), "lamp", 200, 4);
    CHECK(cloud.size() == 200);
}

TEST_CASE("sources are separable: cross-source chamfer dwarfs resample spread") {
    const auto sources = default_sources();
    const std::string shape = "airplane";
    const int n = 2048;

    // within-source spread: same source, fresh seeds
    double within = 0.0;
    int within_count = 0;
    for (const auto& spec : sources) {
        const auto a = sample_cloud(spec, shape, n, 21);
        const auto b = sample_cloud(spec, shape, n, 22);
        within += chamfer_distance(a, b);
        ++within_count;
    }
    within /= within_count;

    // across sources at the same seed the clean stream cancels out
    double min_ratio = 1e300;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        for (std::size_t j = i + 1; j < sources.size(); ++j) {
            const auto a = sample_cloud(sources[i], shape, n, 21);
            const auto b = sample_cloud(sources[j], shape, n, 21);
            const double across = chamfer_distance(a, b);
            min_ratio = std::min(min_ratio, across / within);
        }
    }
    CHECK(min_ratio > 10.0);
}

TEST_CASE("scenario: 60/40 split arithmetic per source and shape") {
    ScenarioConfig cfg;
    cfg.known_sources = {"real", "quantized"};
    cfg.unknown_sources = {};
    cfg.clouds_per_source_shape = 100;
    cfg.points_per_cloud = 16;
    cfg.validation_target = 0;
    const auto scenario = build_scenario(cfg);
    CHECK(scenario.train.size() == 120); // 60 per source
    CHECK(scenario.test.size() == 80);
    CHECK(scenario.validation.empty());

    std::map<std::string, int> train_counts;
    for (const auto& cloud : scenario.train) train_counts[cloud.source->name] += 1;
    CHECK(train_counts["real"] == 60);
    CHECK(train_counts["quantized"] == 60);
}

TEST_CASE("scenario: unknown sources never reach the train split") {
    ScenarioConfig cfg;
    cfg.clouds_per_source_shape = 20;
    cfg.points_per_cloud = 16;
    cfg.validation_target = 24;
    const auto scenario = build_scenario(cfg);
    for (const auto& cloud : scenario.train) {
        CHECK(cloud.source->is_known());
    }
    // unknown sources exist in validation and test
    auto count_unknown = [](const Dataset& ds) {
        int count = 0;
        for (const auto& cloud : ds) count += cloud.source->is_known() ? 0 : 1;
        return count;
    };
    CHECK(count_unknown(scenario.validation) > 0);
    CHECK(count_unknown(scenario.test) > 0);
}

TEST_CASE("scenario: unseen shapes appear only in the test side") {
    ScenarioConfig cfg;
    cfg.known_sources = {"real", "noisy"};
    cfg.unknown_sources = {"smoothed"};
    cfg.seen_shapes = {"airplane", "car"};
    cfg.unseen_shapes = {"bench"};
    cfg.clouds_per_source_shape = 10;
    cfg.points_per_cloud = 16;
    cfg.validation_target = 10;
    const auto scenario = build_scenario(cfg);
    for (const auto& cloud : scenario.train) {
        CHECK(cloud.shape_tag.value() != "bench");
    }
    int bench_in_test = 0;
    for (const auto& cloud : scenario.test) bench_in_test += cloud.shape_tag.value() == "bench";
    CHECK(bench_in_test > 0);
}

TEST_CASE("scenario: validation carve-out hits the requested size") {
    ScenarioConfig cfg; // defaults: 4 known + 2 unknown, 200 clouds, airplane
    cfg.clouds_per_source_shape = 50;
    cfg.points_per_cloud = 16;
    cfg.validation_target = 40;
    const auto scenario = build_scenario(cfg);
    CHECK(scenario.validation.size() == 40);
    // known sources: 50 clouds, 30 train / 20 test-side each; unknown: 50 test-side each
    CHECK(scenario.train.size() == 4 * 30);
    CHECK(scenario.validation.size() + scenario.test.size() == 4 * 20 + 2 * 50);
}

TEST_CASE("scenario: determinism and disjointness") {
    ScenarioConfig cfg;
    cfg.clouds_per_source_shape = 12;
    cfg.points_per_cloud = 16;
    cfg.validation_target = 8;
    const auto a = build_scenario(cfg);
    const auto b = build_scenario(cfg);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].points[0].x == b.train[i].points[0].x);
    }
    const std::size_t total = a.train.size() + a.validation.size() + a.test.size();
    CHECK(total == 6 * 12); // exhaustive
}

TEST_CASE("scenario config validation") {
    ScenarioConfig cfg;
    cfg.known_sources = {"real", "real"};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ScenarioConfig();
    cfg.unknown_sources = {"real"};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ScenarioConfig();
    cfg.seen_shapes = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ScenarioConfig();
    cfg.train_ratio = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ScenarioConfig();
    cfg.known_sources = {"nonexistent"};
    CHECK_THROWS_AS(build_scenario(cfg), std::invalid_argument);
}

TEST_CASE("artifact parameter ranges are enforced") {
    ArtifactSignature bad;
    bad.kind = ArtifactKind::grid_quantize;
    bad.step = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.kind = ArtifactKind::dropout_patches;
    bad.patch_count = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.kind = ArtifactKind::smoothing;
    bad.patch_count = 1;
    bad.smooth_radius = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
