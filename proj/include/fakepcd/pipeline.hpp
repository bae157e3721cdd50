#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fakepcd/attribution.hpp"
#include "fakepcd/config.hpp"
#include "fakepcd/simsource.hpp"
#include "fakepcd/train.hpp"

namespace fakepcd::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

// Worker count for batch encoding: hardware concurrency capped by the
// FAKEPCD_THREADS environment variable. Results never depend on it.
int thread_cap();

// Runs fn(0..count-1) across workers; each index owns its output slot.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

attribution::EmbeddedDataset embed_dataset(const nnet::Model& model, const Dataset& dataset);

// --- run manifests ------------------------------------------------------------

// One manifest per command run. `command` is the canonical argv (minus the
// program name) that reproduces the run; wall clock is metadata and the only
// field allowed to differ between identical reruns.
struct RunManifest {
    std::string command;
    std::string tool_version = kToolVersion;
    std::vector<std::pair<std::string, std::string>> resolved;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    long long wall_clock_ms = 0;
};

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);
std::vector<std::string> split_command_line(const std::string& command);

// --- dataset materialization ----------------------------------------------------

// Writes clouds/<split>_<source>_<shape>_<idx>.pcda plus dataset.csv with
// columns path,source,shape,split (deterministic order).
void write_dataset(const simsource::Scenario& scenario, const std::filesystem::path& out_dir);

struct LoadedDataset {
    Dataset train;
    Dataset validation;
    Dataset test;
    std::vector<std::string> known_sources;
    std::vector<std::string> unknown_sources;
};

// Reads dataset.csv back; known sources (dense label indices) come from the
// resolved scenario config recorded in the directory's manifest.
LoadedDataset load_dataset(const std::filesystem::path& dir);

// --- CSV reports ---------------------------------------------------------------

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<train::EpochMetrics>& metrics);

struct AttributionRow {
    std::string id;
    attribution::AttributionResult result;
};

void write_attribution_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& source_names,
                           const std::vector<AttributionRow>& rows);

struct SweepRow {
    double x = 0.0;
    std::string tag;
    double known_accuracy = 0.0;
    double unknown_accuracy = 0.0;
    double macro_f1 = 0.0;
};

void write_sweep_csv(const std::filesystem::path& path, const std::string& x_column,
                     const std::vector<SweepRow>& rows);

// Minimal line rendering of sweep columns for --plot: one polyline per
// series on a white background.
void render_sweep_pgm(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

// --- perturbations (ablation + robustness acceptance) ---------------------------

enum class Perturbation { none, translate_small, translate_large, jitter, rotate, combined };

const std::vector<std::pair<Perturbation, std::string>>& perturbation_names();
Perturbation parse_perturbation(const std::string& name);

// Seeded per-cloud perturbation; translate_large moves each cloud by ten
// times its own radius in a random direction.
Dataset perturb_dataset(const Dataset& dataset, Perturbation kind, std::uint64_t seed);

// --- evaluation helpers ----------------------------------------------------------

attribution::EvalReport evaluate_assignments(const attribution::EmbeddedDataset& samples,
                                             const attribution::AnchorSet& anchors,
                                             const attribution::ThresholdPolicy& policy);

} // namespace fakepcd::pipeline
