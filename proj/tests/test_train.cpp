#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fakepcd/simsource.hpp"
#include "fakepcd/train.hpp"
#include "test_util.hpp"

using namespace fakepcd;

namespace {

// Eq. 1 evaluated the obvious way in extended precision, nothing shared with
// the implementation.
long double supcon_naive(const Eigen::MatrixXd& z, const std::vector<int>& labels, double tau) {
    const int n = static_cast<int>(z.rows());
    long double loss = 0.0L;
    for (int i = 0; i < n; ++i) {
        long double denom = 0.0L;
        for (int a = 0; a < n; ++a) {
            if (a == i) continue;
            denom += expl(static_cast<long double>(z.row(i).dot(z.row(a))) / tau);
        }
        int positives = 0;
        long double inner = 0.0L;
        for (int p = 0; p < n; ++p) {
            if (p == i || labels[p] != labels[i]) continue;
            ++positives;
            const long double sim = static_cast<long double>(z.row(i).dot(z.row(p))) / tau;
            inner += logl(expl(sim) / denom);
        }
        loss += (-1.0L / positives) * inner;
    }
    return loss;
}

Eigen::MatrixXd random_unit_rows(int n, int d, std::uint64_t seed) {
    rng::Xoshiro256 gen(seed);
    Eigen::MatrixXd z(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) z(i, j) = gen.normal();
        z.row(i) /= z.row(i).norm();
    }
    return z;
}

Dataset desk_dataset(int clouds_per_source, int points, std::uint64_t seed) {
    const auto sources = simsource::default_sources();
    Dataset dataset;
    for (int s = 0; s < 4; ++s) {
        for (int i = 0; i < clouds_per_source; ++i) {
            auto cloud = simsource::sample_cloud(sources[s], "airplane", points,
                                                 rng::derive(seed, s, i));
            cloud.source = SourceLabel::known(s, sources[s].name);
            dataset.push_back(std::move(cloud));
        }
    }
    return dataset;
}

bool models_identical(const nnet::Model& a, const nnet::Model& b) {
    for (std::size_t l = 0; l < a.encoder.size(); ++l) {
        if (a.encoder[l].weight != b.encoder[l].weight) return false;
        if (a.encoder[l].bias != b.encoder[l].bias) return false;
    }
    for (std::size_t l = 0; l < a.classifier.size(); ++l) {
        if (a.classifier[l].weight != b.classifier[l].weight) return false;
    }
    for (std::size_t l = 0; l < a.projection.size(); ++l) {
        if (a.projection[l].weight != b.projection[l].weight) return false;
    }
    return true;
}

} // namespace

TEST_CASE("cross entropy: uniform logits give ln K") {
    const Eigen::VectorXd logits = Eigen::VectorXd::Constant(4, 0.7);
    const auto [loss, grad] = train::cross_entropy_loss(logits, 2);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    for (int k = 0; k < 4; ++k) {
        CHECK(grad(k) == doctest::Approx(0.25 - (k == 2 ? 1.0 : 0.0)).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy: huge logits stay finite (max subtraction)") {
    Eigen::VectorXd logits(4);
    logits << 1000.0, 0.0, 0.0, 0.0;
    const auto [loss, grad] = train::cross_entropy_loss(logits, 0);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(grad.sum()));
}

TEST_CASE("cross entropy: label range is checked") {
    const Eigen::VectorXd logits = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(train::cross_entropy_loss(logits, 3), std::invalid_argument);
    CHECK_THROWS_AS(train::cross_entropy_loss(logits, -1), std::invalid_argument);
}

TEST_CASE("cross entropy: gradient matches finite differences tightly") {
    rng::Xoshiro256 gen(5);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd logits(6);
        for (int k = 0; k < 6; ++k) logits(k) = gen.uniform(-3, 3);
        const int label = static_cast<int>(gen.below(6));
        const auto [loss, grad] = train::cross_entropy_loss(logits, label);
        (void)loss;
        for (int k = 0; k < 6; ++k) {
            Eigen::VectorXd up = logits, down = logits;
            up(k) += 1e-6;
            down(k) -= 1e-6;
            const double numeric = (train::cross_entropy_loss(up, label).first -
                                    train::cross_entropy_loss(down, label).first) /
                                   2e-6;
            CHECK(std::abs(grad(k) - numeric) <=
                  1e-6 * std::max({1.0, std::abs(grad(k)), std::abs(numeric)}));
        }
    }
}

TEST_CASE("supcon: four identical embeddings, one label -> 4 ln 3") {
    Eigen::MatrixXd z(4, 3);
    for (int i = 0; i < 4; ++i) z.row(i) << 1.0, 0.0, 0.0;
    const std::vector<int> labels = {5, 5, 5, 5};
    const auto result = train::supcon_loss(z, labels, 0.07);
    CHECK(result.loss == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("supcon: N identical embeddings give N ln(N-1)") {
    for (const int n : {3, 5, 8}) {
        Eigen::MatrixXd z(n, 4);
        for (int i = 0; i < n; ++i) z.row(i) << 0.0, 1.0, 0.0, 0.0;
        const std::vector<int> labels(n, 1);
        const auto result = train::supcon_loss(z, labels, 0.1);
        CHECK(std::abs(result.loss - n * std::log(static_cast<double>(n - 1))) < 1e-9);
    }
}

TEST_CASE("supcon: matches the naive double-loop evaluation") {
    for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const auto z = random_unit_rows(10, 5, seed);
        std::vector<int> labels = {0, 0, 1, 1, 0, 1, 0, 1, 0, 1};
        const auto result = train::supcon_loss(z, labels, 0.07);
        const long double oracle = supcon_naive(z, labels, 0.07);
        CHECK(std::abs(result.loss - static_cast<double>(oracle)) <=
              1e-10 * std::max(1.0, std::abs(result.loss)));
    }
}

TEST_CASE("supcon: invariant under simultaneous permutation") {
    const auto z = random_unit_rows(8, 4, 99);
    std::vector<int> labels = {0, 1, 0, 1, 2, 2, 0, 1};
    const double base = train::supcon_loss(z, labels, 0.07).loss;

    std::vector<int> order = {5, 2, 7, 0, 3, 6, 1, 4};
    Eigen::MatrixXd zp(8, 4);
    std::vector<int> lp(8);
    for (int i = 0; i < 8; ++i) {
        zp.row(i) = z.row(order[i]);
        lp[i] = labels[order[i]];
    }
    CHECK(train::supcon_loss(zp, lp, 0.07).loss == base);
}

TEST_CASE("supcon: embedding gradients match finite differences") {
    const auto z = random_unit_rows(6, 4, 12);
    const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    const auto result = train::supcon_loss(z, labels, 0.07);
    for (int i = 0; i < z.rows(); ++i) {
        for (int j = 0; j < z.cols(); ++j) {
            Eigen::MatrixXd up = z, down = z;
            up(i, j) += 1e-5;
            down(i, j) -= 1e-5;
            const double numeric =
                (train::supcon_loss(up, labels, 0.07).loss -
                 train::supcon_loss(down, labels, 0.07).loss) /
                2e-5;
            const double analytic = result.embedding_grads(i, j);
            CHECK(std::abs(analytic - numeric) <=
                  1e-5 * std::max({1.0, std::abs(analytic), std::abs(numeric)}));
        }
    }
}

TEST_CASE("supcon: a sample without positives is a configuration error") {
    auto z = random_unit_rows(3, 4, 5);
    const std::vector<int> labels = {0, 0, 1}; // sample 2 has no positive
    CHECK_THROWS_AS(train::supcon_loss(z, labels, 0.07), ConfigError);
}

TEST_CASE("closed world: one SGD step equals the hand-computed update") {
    nnet::ModelDims dims;
    dims.encoder = {3, 4, 4};
    dims.classifier = {4, 3, 2};
    dims.projection = {4, 3, 2};
    const auto model = nnet::init_model(dims, 50);

    Dataset data;
    PointCloud cloud = testutil::random_cloud(6, 51);
    cloud.source = SourceLabel::known(0, "only");
    data.push_back(cloud);

    // expected update computed directly from the module primitives
    const auto trace = nnet::encode(model, cloud);
    const auto [loss, d_logits] = train::cross_entropy_loss(trace.logits, 0);
    (void)loss;
    nnet::UpstreamGrad upstream;
    upstream.d_logits = d_logits;
    const auto grads = nnet::backward(model, trace, upstream);

    train::TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.sgd.learning_rate = 0.1;
    cfg.sgd.momentum = 0.0;
    cfg.seed = 1;
    const auto result = train::train_closed_world(data, model, cfg);

    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        const Eigen::MatrixXd expected =
            model.encoder[l].weight - 0.1 * grads.encoder[l].weight;
        CHECK((result.model.encoder[l].weight - expected).cwiseAbs().maxCoeff() < 1e-14);
    }
    for (std::size_t l = 0; l < model.classifier.size(); ++l) {
        const Eigen::MatrixXd expected =
            model.classifier[l].weight - 0.1 * grads.classifier[l].weight;
        CHECK((result.model.classifier[l].weight - expected).cwiseAbs().maxCoeff() < 1e-14);
        const Eigen::VectorXd expected_bias =
            model.classifier[l].bias - 0.1 * grads.classifier[l].bias;
        CHECK((result.model.classifier[l].bias - expected_bias).cwiseAbs().maxCoeff() < 1e-14);
    }
    // the projection head is untouched by the closed stage
    for (std::size_t l = 0; l < model.projection.size(); ++l) {
        CHECK(result.model.projection[l].weight == model.projection[l].weight);
    }
}

TEST_CASE("closed world: desk-scale run reaches 0.95 train accuracy") {
    const auto data = desk_dataset(50, 64, 777);
    auto cfg = train::TrainConfig::desk_closed();
    cfg.epochs = 40;
    cfg.seed = 3;
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 3);
    const auto result = train::train_closed_world(data, model, cfg);
    CHECK(result.metrics.back().accuracy.value() >= 0.95);
}

TEST_CASE("closed world: identical seeds give identical parameters") {
    const auto data = desk_dataset(8, 32, 90);
    auto cfg = train::TrainConfig::desk_closed();
    cfg.epochs = 3;
    cfg.seed = 17;
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 17);
    const auto a = train::train_closed_world(data, model, cfg);
    const auto b = train::train_closed_world(data, model, cfg);
    CHECK(models_identical(a.model, b.model));
}

TEST_CASE("closed world: empty dataset and tiny batches are rejected") {
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 1);
    train::TrainConfig cfg;
    CHECK_THROWS_AS(train::train_closed_world({}, model, cfg), std::invalid_argument);

    const auto data = desk_dataset(3, 16, 4);
    cfg.batch_size = 2; // four sources need at least four slots
    CHECK_THROWS_AS(train::train_closed_world(data, model, cfg), ConfigError);
}

TEST_CASE("open world: identity augmentation keeps the loss finite") {
    const auto data = desk_dataset(6, 32, 60);
    auto cfg = train::TrainConfig::desk_open();
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.augment.translation_max = 0.0;
    cfg.augment.jitter_sigma = 0.0;
    cfg.augment.rotate_z = false;
    cfg.augment.angle_max = 0.0;
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 5);
    const auto result = train::train_open_world(data, model, cfg);
    for (const auto& row : result.metrics) CHECK(std::isfinite(row.loss));
}

TEST_CASE("open world: training reduces the contrastive loss") {
    const auto data = desk_dataset(20, 48, 61);
    auto cfg = train::TrainConfig::desk_open();
    cfg.epochs = 12;
    cfg.batch_size = 8;
    cfg.seed = 6;
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 6);
    const auto result = train::train_open_world(data, model, cfg);
    CHECK(result.metrics.back().loss < result.metrics.front().loss);
}

TEST_CASE("open world: early stopping halts a stalled run") {
    const auto data = desk_dataset(6, 24, 62);
    auto cfg = train::TrainConfig::desk_open();
    cfg.epochs = 500;
    cfg.batch_size = 8;
    cfg.seed = 7;
    cfg.early_stop_patience = 3;
    cfg.early_stop_min_delta = 1e9; // nothing counts as an improvement
    const auto model = nnet::init_model(nnet::ModelDims::desk(4), 7);
    const auto result = train::train_open_world(data, model, cfg);
    // epoch 0 improves on infinity, then `patience` stale epochs
    CHECK(result.metrics.size() == 4);
}

TEST_CASE("train config validation") {
    train::TrainConfig cfg;
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(nnet::Stage::open), ConfigError);
    cfg = train::TrainConfig();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(nnet::Stage::open), ConfigError);
    cfg = train::TrainConfig();
    cfg.sgd.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(nnet::Stage::closed), ConfigError);
}
