#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fakepcd/point_cloud.hpp"

namespace fakepcd::nnet {

enum class Activation : std::uint8_t { relu, none };

struct LayerSpec {
    int in_dim = 0;
    int out_dim = 0;
    Activation activation = Activation::relu;
};

// One affine layer; weight is out_dim x in_dim, applied as x * W^T + b.
struct Linear {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
    Activation activation = Activation::relu;

    int in_dim() const { return static_cast<int>(weight.cols()); }
    int out_dim() const { return static_cast<int>(weight.rows()); }
};

// Widths of the three stacks. Hidden transitions use relu, the final layer
// of each stack is linear; projection outputs are L2-normalized afterwards.
struct ModelDims {
    std::vector<int> encoder{3, 64, 128, 1024};
    std::vector<int> classifier{1024, 512, 256, 4};
    std::vector<int> projection{1024, 512, 128};

    int global_dim() const { return encoder.back(); }
    int num_classes() const { return classifier.back(); }
    int embedding_dim() const { return projection.back(); }

    // Throws std::invalid_argument unless the widths chain: the classifier
    // and projection must both start at the encoder's global dimension.
    void validate() const;

    static ModelDims desk(int num_classes);  // 3-32-64-128 encoder, d=32
    static ModelDims paper(int num_classes); // 3-64-128-1024 encoder, d=128
};

enum class Stage : std::uint8_t { closed = 0, open = 1 };

struct Model {
    std::vector<Linear> encoder;    // shared per-point stack
    std::vector<Linear> classifier; // global feature -> logits
    std::vector<Linear> projection; // global feature -> unit embedding
    Stage stage = Stage::closed;

    ModelDims dims() const;
    int global_dim() const { return encoder.back().out_dim(); }
    int num_classes() const { return classifier.back().out_dim(); }
    int embedding_dim() const { return projection.back().out_dim(); }
};

// Glorot-uniform weights (bound sqrt(6/(in+out))), zero biases, seeded.
Model init_model(const ModelDims& dims, std::uint64_t seed);

// Everything the backward pass and the critical-point logic need from one
// forward evaluation. Feature maps are points x channels.
struct ForwardTrace {
    Eigen::MatrixXd input;                     // n x 3
    std::vector<Eigen::MatrixXd> encoder_pre;  // per layer, pre-activation
    std::vector<Eigen::MatrixXd> encoder_post; // per layer, post-activation
    std::vector<int> argmax;                   // per channel winner, ties -> lowest index
    Eigen::VectorXd global;                    // channel-wise max of the feature map

    std::vector<Eigen::VectorXd> classifier_pre, classifier_post;
    Eigen::VectorXd logits;

    std::vector<Eigen::VectorXd> projection_pre, projection_post;
    Eigen::VectorXd projection_raw; // before normalization
    Eigen::VectorXd embedding;      // unit norm

    const Eigen::MatrixXd& feature_map() const { return encoder_post.back(); }
};

// Shared per-point stack, channel-wise max pool, then both heads.
// Throws NumericError naming the layer if an activation goes non-finite.
ForwardTrace encode(const Model& model, const PointCloud& cloud);

struct LinearGrad {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;
};

struct Gradients {
    std::vector<LinearGrad> encoder, classifier, projection;

    void add_scaled(const Gradients& other, double scale);
    void scale(double s);
};

Gradients zero_gradients(const Model& model);

// Upstream gradients; leave a vector empty (size 0) to skip that path.
// d_embedding is taken w.r.t. the normalized embedding.
struct UpstreamGrad {
    Eigen::VectorXd d_logits;
    Eigen::VectorXd d_embedding;
    Eigen::VectorXd d_global;
};

// Exact reverse-mode gradients. Max pooling routes gradient only to each
// channel's argmax point; relu uses subgradient 0 at exactly 0.
Gradients backward(const Model& model, const ForwardTrace& trace, const UpstreamGrad& upstream);

// Checkpoint container: magic FPCD, u16 version, u32 dims sequence, section
// tag byte, float64-LE payload, trailing CRC32.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

// Open-stage model seeded from a closed-stage checkpoint: encoder weights are
// reused, the classifier is dropped (reset to fresh init, unused afterwards)
// and the projection head is freshly initialized.
Model reinit_for_open_stage(const Model& closed, std::uint64_t seed);

} // namespace fakepcd::nnet
