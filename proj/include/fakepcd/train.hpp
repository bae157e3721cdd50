#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <utility>

#include "fakepcd/nnet.hpp"
#include "fakepcd/point_cloud.hpp"

namespace fakepcd::train {

struct SgdConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
};

// Per-sample augmentation ranges used to build contrastive twins. Each twin
// draws its own translation offset, jitter and rotation angle from a stream
// derived from the training seed.
struct AugmentPolicy {
    double translation_max = 0.05; // uniform offset in [-max, max] per axis
    double jitter_sigma = 0.01;
    bool rotate_x = false;
    bool rotate_y = false;
    bool rotate_z = true;
    double angle_min = 0.0;
    double angle_max = 6.283185307179586;

    AugmentSpec draw_spec(std::uint64_t seed) const;
};

struct TrainConfig {
    int epochs = 200;
    int batch_size = 32;
    SgdConfig sgd;
    double temperature = 0.07;
    std::uint64_t seed = 0;
    std::optional<int> early_stop_patience; // contrastive stage only
    double early_stop_min_delta = 1e-4;
    AugmentPolicy augment;

    void validate(nnet::Stage stage) const;

    static TrainConfig desk_closed();
    static TrainConfig desk_open();
    static TrainConfig paper_closed(); // 200 epochs, batch 32
    static TrainConfig paper_open();   // 300 epochs, batch 20, early stopping
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> accuracy; // closed stage only
};

struct TrainResult {
    nnet::Model model;
    std::vector<EpochMetrics> metrics;
};

// Stabilized -log softmax(logits)[label]; gradient is softmax minus one-hot.
std::pair<double, Eigen::VectorXd> cross_entropy_loss(const Eigen::VectorXd& logits, int label);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

struct SupconResult {
    double loss = 0.0;
    Eigen::MatrixXd embedding_grads; // same layout as the input, rows are samples
};

// Supervised contrastive loss over the 2B-sample universe (rows of
// `embeddings`). For each anchor the positives are the same-label samples
// excluding itself; every sample must have at least one positive.
SupconResult supcon_loss(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                         double temperature);

// Called after every epoch; used for CSV streaming and periodic
// checkpointing by the CLI.
using EpochCallback = std::function<void(const EpochMetrics&, const nnet::Model&)>;

TrainResult train_closed_world(const Dataset& dataset, nnet::Model model, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

// Supervised contrastive stage. Twin embeddings come from a per-step frozen
// snapshot of the trainable pair (stop-gradient); only the trainable branch
// receives gradients. Pass a model from reinit_for_open_stage to start from
// a closed-stage checkpoint.
TrainResult train_open_world(const Dataset& dataset, nnet::Model model, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

} // namespace fakepcd::train
