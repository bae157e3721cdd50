#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fakepcd/point_cloud.hpp"

namespace fakepcd::simsource {

// Each non-real source applies one exaggerated artifact to the clean surface
// sampling, standing in for the biases of a point-cloud generative model.
enum class ArtifactKind : std::uint8_t {
    none,            // clean sampling ("real" collection)
    grid_quantize,   // snap coordinates to a lattice
    surface_noise,   // correlated ripple plus iid Gaussian displacement
    density_bias,    // sampling density skewed along one axis
    dropout_patches, // spherical holes, surface resampled around them
    smoothing,       // iterated k-nearest-neighbor averaging
};

struct ArtifactSignature {
    ArtifactKind kind = ArtifactKind::none;
    double step = 0.1;        // grid_quantize
    double sigma = 0.05;      // surface_noise
    double correlation = 0.5; // surface_noise, fraction of correlated ripple
    int axis = 2;             // density_bias: 0=x 1=y 2=z
    double exponent = 2.0;    // density_bias
    int patch_count = 4;      // dropout_patches
    double patch_radius = 0.3;
    int smooth_iterations = 2;
    double smooth_radius = 0.15; // neighborhood for the averaging pass

    void validate() const;
};

struct SimSourceSpec {
    std::string name;
    ArtifactSignature artifact;
    std::uint64_t seed = 0;
};

// The six-source preset: one clean sampler plus five artifact-bearing ones.
// The last two are the conventional held-out unknowns.
std::vector<SimSourceSpec> default_sources();
std::vector<std::string> default_shapes(); // airplane car chair bench cabinet lamp

const SimSourceSpec& find_source(const std::vector<SimSourceSpec>& catalog,
                                 const std::string& name);

// n points on the shape's surface with the source's artifact applied. The
// clean candidate stream depends only on (shape, n, seed), so clouds from two
// sources at the same seed differ by their artifacts alone. The cloud is
// tagged with the shape and the source name (as an Unknown-kind provenance
// label; scenarios relabel known sources with dense indices).
PointCloud sample_cloud(const SimSourceSpec& spec, const std::string& shape, int n,
                        std::uint64_t seed);

struct ScenarioConfig {
    std::vector<std::string> known_sources{"real", "quantized", "noisy", "biased"};
    std::vector<std::string> unknown_sources{"cratered", "smoothed"};
    std::vector<std::string> seen_shapes{"airplane"};
    std::vector<std::string> unseen_shapes{};
    int clouds_per_source_shape = 200;
    int points_per_cloud = 64;
    double train_ratio = 0.6;
    int validation_target = 100; // carved out of the test split, scaled down if needed
    std::uint64_t seed = 42;

    void validate() const;
};

struct Scenario {
    ScenarioConfig config;
    std::vector<SimSourceSpec> known;
    std::vector<SimSourceSpec> unknown;
    Dataset train;
    Dataset validation;
    Dataset test;
};

// 60/40-style split per (source, shape); unknown sources and unseen shapes
// never reach the train split; validation is a stratified carve-out of test.
Scenario build_scenario(const ScenarioConfig& config);
Scenario build_scenario(const ScenarioConfig& config, const std::vector<SimSourceSpec>& catalog);

} // namespace fakepcd::simsource
