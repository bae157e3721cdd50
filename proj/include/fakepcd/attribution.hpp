#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fakepcd/nnet.hpp"
#include "fakepcd/point_cloud.hpp"

namespace fakepcd::attribution {

struct EmbeddedSample {
    Eigen::VectorXd embedding;
    SourceLabel label;
    std::string shape;
};

using EmbeddedDataset = std::vector<EmbeddedSample>;

// Per-known-source reference embeddings plus the intra-cluster distance
// sequences that calibrate thresholds. Immutable after construction.
struct AnchorSet {
    int anchors_per_source = 0;
    std::vector<std::string> source_names;      // dense source index order
    std::vector<Eigen::MatrixXd> anchors;       // per source: N x d
    std::vector<Eigen::VectorXd> centroids;     // per source
    std::vector<std::vector<double>> intra;     // per source: N anchor-to-centroid distances

    int num_sources() const { return static_cast<int>(anchors.size()); }
    int dim() const { return anchors.empty() ? 0 : static_cast<int>(anchors.front().cols()); }
};

// N seeded uniform picks per known source from the embedded dataset.
AnchorSet build_anchor_set(const EmbeddedDataset& dataset, int anchors_per_source,
                           std::uint64_t seed);

struct DistanceProfile {
    std::vector<double> mean_distance; // per source, same order as the anchor set
};

// Mean Euclidean distance from the query to every anchor of each source.
DistanceProfile mean_source_distance(const Eigen::VectorXd& query, const AnchorSet& anchors);

// Nearest-rank percentile: sort ascending, take the 1-based element at
// ceil(P/100 * n). The result is always a member of the sequence.
double percentile(std::span<const double> values, double p);

struct ThresholdPolicy {
    double percentile = 95.0;
    double threshold = 0.0;
};

// Unified threshold: the smallest P-percentile across the per-source
// intra-cluster distance sequences.
ThresholdPolicy select_threshold(const AnchorSet& anchors, double p);

struct AttributionResult {
    DistanceProfile profile;
    double threshold = 0.0;
    SourceLabel verdict;
    double margin = 0.0; // min distance minus threshold; positive means Unknown
};

// Unknown iff every mean distance exceeds the threshold, otherwise the
// closest source; distance ties resolve to the lowest source index.
AttributionResult assign(const Eigen::VectorXd& query, const AnchorSet& anchors,
                         const ThresholdPolicy& policy);

// Grid search for the percentile maximizing the mean of known and unknown
// accuracy on a validation set; ties pick the smaller P.
double tune_percentile(const EmbeddedDataset& validation, const AnchorSet& anchors,
                       std::span<const double> grid);

inline std::vector<double> default_percentile_grid() { return {70, 75, 80, 85, 90, 95}; }

// Fully-supervised baseline: the acceptance threshold is the lowest training
// softmax probability at the true class.
struct LogitBaseline {
    double probability_threshold = 1.0;
};

LogitBaseline fit_logit_baseline(const nnet::Model& closed_model, const Dataset& training_set);
SourceLabel logit_baseline_assign(const Eigen::VectorXd& logits, const LogitBaseline& baseline,
                                  const std::vector<std::string>& source_names);

// Two-component diagonal-covariance Gaussian mixture fitted with EM,
// k-means++-style seeding, ridge regularization on degenerate covariances.
struct GmmResult {
    std::vector<int> assignments;
    Eigen::MatrixXd means;               // components x d
    Eigen::MatrixXd variances;           // components x d
    Eigen::VectorXd weights;             // components
    std::vector<double> log_likelihoods; // one entry per EM iteration
    bool regularized = false;            // hit the degenerate-covariance ridge
};

GmmResult split_unknowns(const Eigen::MatrixXd& embeddings, int components, std::uint64_t seed);

struct EvalReport {
    std::optional<double> known_accuracy;
    std::optional<double> unknown_accuracy;
    double macro_f1 = 0.0;
    std::size_t known_total = 0;
    std::size_t unknown_total = 0;
};

// Known accuracy over ground-truth-known samples, unknown accuracy over
// ground-truth-unknown ones; macro F1 treats Unknown as one extra class.
EvalReport evaluate(const std::vector<SourceLabel>& verdicts,
                    const std::vector<SourceLabel>& ground_truth);

// Anchor sets share the checkpoint container (magic FPCD, section tag 2).
void save_anchor_set(const AnchorSet& anchors, const std::filesystem::path& path);
AnchorSet load_anchor_set(const std::filesystem::path& path);

} // namespace fakepcd::attribution
