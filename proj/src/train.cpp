#include "fakepcd/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/rng.hpp"

namespace fakepcd::train {

AugmentSpec AugmentPolicy::draw_spec(std::uint64_t seed) const {
    rng::Xoshiro256 gen(seed);
    AugmentSpec spec;
    spec.translation = {gen.uniform(-translation_max, translation_max),
                        gen.uniform(-translation_max, translation_max),
                        gen.uniform(-translation_max, translation_max)};
    spec.jitter_sigma = jitter_sigma;
    spec.rotate_x = rotate_x;
    spec.rotate_y = rotate_y;
    spec.rotate_z = rotate_z;
    spec.angle_min = angle_min;
    spec.angle_max = angle_max;
    spec.rng_seed = rng::derive(seed, 0x617567);
    return spec;
}

void TrainConfig::validate(nnet::Stage stage) const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(sgd.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (sgd.momentum < 0.0 || sgd.momentum >= 1.0)
        throw ConfigError("train: momentum must be in [0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("train: temperature must be > 0");
    if (stage == nnet::Stage::open && batch_size < 2)
        throw ConfigError("train: contrastive stage needs batch_size >= 2");
    if (early_stop_patience && *early_stop_patience < 1)
        throw ConfigError("train: early_stop_patience must be >= 1");
}

TrainConfig TrainConfig::desk_closed() {
    TrainConfig c;
    c.epochs = 60;
    c.batch_size = 16;
    c.sgd.learning_rate = 0.02; // 0.1 overshoots at this scale
    return c;
}

TrainConfig TrainConfig::desk_open() {
    TrainConfig c;
    c.epochs = 120;
    c.batch_size = 16;
    c.sgd.learning_rate = 0.02;
    c.early_stop_patience = 20;
    return c;
}

TrainConfig TrainConfig::paper_closed() {
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 32;
    return c;
}

TrainConfig TrainConfig::paper_open() {
    TrainConfig c;
    c.epochs = 300;
    c.batch_size = 20;
    c.early_stop_patience = 20;
    return c;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double peak = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - peak).exp();
    return e / e.sum();
}

std::pair<double, Eigen::VectorXd> cross_entropy_loss(const Eigen::VectorXd& logits, int label) {
    if (label < 0 || label >= logits.size())
        throw std::invalid_argument("cross_entropy_loss: label out of range");
    const double peak = logits.maxCoeff();
    const Eigen::ArrayXd shifted = logits.array() - peak;
    const double log_sum = std::log(shifted.exp().sum());
    const double loss = log_sum - shifted(label);
    Eigen::VectorXd grad = (shifted - log_sum).exp().matrix();
    grad(label) -= 1.0;
    return {loss, std::move(grad)};
}

SupconResult supcon_loss(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                         double temperature) {
    const int n = static_cast<int>(embeddings.rows());
    if (n < 2) throw std::invalid_argument("supcon_loss: need at least two samples");
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("supcon_loss: labels/embeddings size mismatch");
    if (!(temperature > 0.0)) throw std::invalid_argument("supcon_loss: temperature must be > 0");

    // Similarities s(i,a) = z_i . z_a / tau; the diagonal is excluded from
    // every anchor's denominator.
    const Eigen::MatrixXd sim = embeddings * embeddings.transpose() / temperature;

    std::vector<int> positive_count(n, 0);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < n; ++a) {
            if (a != i && labels[a] == labels[i]) ++positive_count[i];
        }
    }
    for (int i = 0; i < n; ++i) {
        if (positive_count[i] == 0)
            throw ConfigError("supcon_loss: sample " + std::to_string(i) +
                              " has no positive; batch composition must pair every sample");
    }

    // Sums are accumulated in sorted order so the loss is exactly invariant
    // under simultaneous permutations of (embeddings, labels).
    auto sorted_sum = [](std::vector<double>& values) {
        std::sort(values.begin(), values.end());
        double total = 0.0;
        for (const double v : values) total += v;
        return total;
    };

    Eigen::MatrixXd d_sim = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd probs(n);
    std::vector<double> anchor_losses(n);
    std::vector<double> scratch;
    for (int i = 0; i < n; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < n; ++a) {
            if (a != i) peak = std::max(peak, sim(i, a));
        }
        scratch.clear();
        for (int a = 0; a < n; ++a) {
            if (a == i) {
                probs(a) = 0.0;
                continue;
            }
            probs(a) = std::exp(sim(i, a) - peak);
            scratch.push_back(probs(a));
        }
        const double denom = sorted_sum(scratch);
        const double log_denom = peak + std::log(denom);
        probs /= denom;

        const double inv_pos = 1.0 / static_cast<double>(positive_count[i]);
        scratch.clear();
        for (int a = 0; a < n; ++a) {
            if (a == i) continue;
            double d = probs(a); // from the shared log-sum-exp term
            if (labels[a] == labels[i]) {
                scratch.push_back(sim(i, a) - log_denom);
                d -= inv_pos;
            }
            d_sim(i, a) += d;
        }
        anchor_losses[i] = -inv_pos * sorted_sum(scratch);
    }
    const double loss = sorted_sum(anchor_losses);

    // s(i,a) depends on both rows: dL/dz_i += d_sim(i,a) z_a / tau and
    // dL/dz_a += d_sim(i,a) z_i / tau.
    Eigen::MatrixXd grads = (d_sim + d_sim.transpose()) * embeddings / temperature;
    return {loss, std::move(grads)};
}

namespace {

struct Velocities {
    nnet::Gradients v;

    explicit Velocities(const nnet::Model& model) : v(nnet::zero_gradients(model)) {}

    void apply(std::vector<nnet::Linear>& stack, std::vector<nnet::LinearGrad>& vel,
               const std::vector<nnet::LinearGrad>& grad, const SgdConfig& sgd) {
        for (std::size_t l = 0; l < stack.size(); ++l) {
            vel[l].weight = sgd.momentum * vel[l].weight - sgd.learning_rate * grad[l].weight;
            vel[l].bias = sgd.momentum * vel[l].bias - sgd.learning_rate * grad[l].bias;
            stack[l].weight += vel[l].weight;
            stack[l].bias += vel[l].bias;
        }
    }
};

void check_labels_known_dense(const Dataset& dataset, int num_classes) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const auto& cloud : dataset) {
        if (!cloud.source || !cloud.source->is_known())
            throw std::invalid_argument("train: every training cloud needs a known source label");
        if (cloud.source->index >= num_classes)
            throw std::invalid_argument("train: label index " +
                                        std::to_string(cloud.source->index) +
                                        " does not fit the classifier output width");
    }
}

// Stratified batch schedule: every batch draws from every source, round
// robin over per-source shuffled queues that wrap within the epoch.
class StratifiedBatcher {
public:
    StratifiedBatcher(const Dataset& dataset, int batch_size, std::uint64_t seed)
        : dataset_(dataset), batch_size_(batch_size), seed_(seed) {
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const int label = dataset[i].source->index;
            if (label >= static_cast<int>(by_source_.size())) by_source_.resize(label + 1);
            by_source_[label].push_back(i);
        }
        for (const auto& group : by_source_) {
            if (group.empty())
                throw std::invalid_argument("train: known source indices must be dense");
        }
        if (batch_size_ < static_cast<int>(by_source_.size()))
            throw ConfigError("train: batch_size must be >= the number of sources (" +
                              std::to_string(by_source_.size()) + ") for stratified batches");
    }

    int batches_per_epoch() const {
        return std::max<int>(1, static_cast<int>(dataset_.size()) / batch_size_);
    }

    // Deterministic index list for batch `b` of epoch `e`.
    std::vector<std::size_t> batch(int epoch, int index) {
        if (epoch != shuffled_epoch_) {
            queues_ = by_source_;
            for (std::size_t s = 0; s < queues_.size(); ++s) {
                rng::Xoshiro256 gen(rng::derive(seed_, 0x9b5a, epoch, s));
                gen.shuffle(queues_[s]);
            }
            cursors_.assign(queues_.size(), 0);
            shuffled_epoch_ = epoch;
        }
        std::vector<std::size_t> out;
        out.reserve(batch_size_);
        const std::size_t k = queues_.size();
        for (int slot = 0; slot < batch_size_; ++slot) {
            const std::size_t s = (static_cast<std::size_t>(index) * batch_size_ + slot) % k;
            auto& cursor = cursors_[s];
            out.push_back(queues_[s][cursor % queues_[s].size()]);
            ++cursor;
        }
        return out;
    }

private:
    const Dataset& dataset_;
    int batch_size_;
    std::uint64_t seed_;
    std::vector<std::vector<std::size_t>> by_source_;
    std::vector<std::vector<std::size_t>> queues_;
    std::vector<std::size_t> cursors_;
    int shuffled_epoch_ = -1;
};

} // namespace

TrainResult train_closed_world(const Dataset& dataset, nnet::Model model, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
    config.validate(nnet::Stage::closed);
    check_labels_known_dense(dataset, model.num_classes());
    StratifiedBatcher batcher(dataset, config.batch_size, config.seed);
    Velocities velocity(model);

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        std::size_t correct = 0;
        const int batches = batcher.batches_per_epoch();
        for (int b = 0; b < batches; ++b) {
            const auto batch = batcher.batch(epoch, b);
            nnet::Gradients grads = nnet::zero_gradients(model);
            const double inv_batch = 1.0 / static_cast<double>(batch.size());
            for (const std::size_t idx : batch) {
                const auto& cloud = dataset[idx];
                const auto trace = nnet::encode(model, cloud);
                auto [loss, d_logits] = cross_entropy_loss(trace.logits, cloud.source->index);
                epoch_loss += loss;
                ++seen;
                int predicted = 0;
                trace.logits.maxCoeff(&predicted);
                if (predicted == cloud.source->index) ++correct;

                nnet::UpstreamGrad upstream;
                upstream.d_logits = d_logits * inv_batch;
                grads.add_scaled(nnet::backward(model, trace, upstream), 1.0);
            }
            // The projection head is untouched in this stage.
            velocity.apply(model.encoder, velocity.v.encoder, grads.encoder, config.sgd);
            velocity.apply(model.classifier, velocity.v.classifier, grads.classifier, config.sgd);
        }
        EpochMetrics row{epoch, epoch_loss / static_cast<double>(seen),
                         static_cast<double>(correct) / static_cast<double>(seen)};
        if (!std::isfinite(row.loss))
            throw NumericError("closed-world training diverged at epoch " + std::to_string(epoch));
        result.metrics.push_back(row);
        if (on_epoch) on_epoch(row, model);
    }
    model.stage = nnet::Stage::closed;
    result.model = std::move(model);
    return result;
}

TrainResult train_open_world(const Dataset& dataset, nnet::Model model, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
    config.validate(nnet::Stage::open);
    check_labels_known_dense(dataset, model.num_classes());
    StratifiedBatcher batcher(dataset, config.batch_size, config.seed);
    Velocities velocity(model);

    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t anchors_seen = 0;
        const int batches = batcher.batches_per_epoch();
        for (int b = 0; b < batches; ++b) {
            const auto batch = batcher.batch(epoch, b);
            const int bsz = static_cast<int>(batch.size());
            const int universe = 2 * bsz;

            // Trainable branch encodes the originals (traces kept for
            // backprop); the frozen twin is this step's parameter snapshot
            // encoding the augmented views, no gradient.
            std::vector<nnet::ForwardTrace> traces;
            traces.reserve(bsz);
            Eigen::MatrixXd embeddings(universe, model.embedding_dim());
            std::vector<int> labels(universe);
            for (int j = 0; j < bsz; ++j) {
                const auto& cloud = dataset[batch[j]];
                traces.push_back(nnet::encode(model, cloud));
                embeddings.row(j) = traces.back().embedding.transpose();
                labels[j] = cloud.source->index;

                const auto spec = config.augment.draw_spec(
                    rng::derive(config.seed, 0x7477696e, epoch * 1315423911ULL + b, batch[j]));
                const PointCloud twin = fakepcd::augment(cloud, spec);
                embeddings.row(bsz + j) = nnet::encode(model, twin).embedding.transpose();
                labels[bsz + j] = labels[j];
            }

            const auto supcon = supcon_loss(embeddings, labels, config.temperature);
            epoch_loss += supcon.loss;
            anchors_seen += universe;

            nnet::Gradients grads = nnet::zero_gradients(model);
            for (int j = 0; j < bsz; ++j) {
                nnet::UpstreamGrad upstream;
                upstream.d_embedding = supcon.embedding_grads.row(j).transpose();
                grads.add_scaled(nnet::backward(model, traces[j], upstream), 1.0);
            }
            grads.scale(1.0 / static_cast<double>(universe));
            velocity.apply(model.encoder, velocity.v.encoder, grads.encoder, config.sgd);
            velocity.apply(model.projection, velocity.v.projection, grads.projection, config.sgd);
        }

        EpochMetrics row{epoch, epoch_loss / static_cast<double>(anchors_seen), std::nullopt};
        if (!std::isfinite(row.loss))
            throw NumericError("open-world training diverged at epoch " + std::to_string(epoch));
        result.metrics.push_back(row);
        if (on_epoch) on_epoch(row, model);

        if (config.early_stop_patience) {
            if (row.loss < best_loss - config.early_stop_min_delta) {
                best_loss = row.loss;
                stale_epochs = 0;
            } else if (++stale_epochs >= *config.early_stop_patience) {
                break;
            }
        }
    }
    model.stage = nnet::Stage::open;
    result.model = std::move(model);
    return result;
}

} // namespace fakepcd::train
