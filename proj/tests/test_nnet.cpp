#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <functional>
#include <set>

#include "fakepcd/nnet.hpp"
#include "fakepcd/rng.hpp"
#include "test_util.hpp"

using namespace fakepcd;
using nnet::Model;
using nnet::ModelDims;
using testutil::TempDir;

namespace {

ModelDims toy_dims() {
    ModelDims dims;
    dims.encoder = {3, 5, 4, 6}; // three encoder layers
    dims.classifier = {6, 5, 4, 3};
    dims.projection = {6, 5, 4};
    return dims;
}

template <typename Fn>
void for_each_parameter(std::vector<nnet::Linear>& stack, Fn&& fn) {
    for (auto& layer : stack) {
        for (int r = 0; r < layer.weight.rows(); ++r) {
            for (int c = 0; c < layer.weight.cols(); ++c) fn(layer.weight(r, c));
        }
        for (int i = 0; i < layer.bias.size(); ++i) fn(layer.bias(i));
    }
}

template <typename Fn>
void for_each_gradient(std::vector<nnet::LinearGrad>& stack, Fn&& fn) {
    for (auto& layer : stack) {
        for (int r = 0; r < layer.weight.rows(); ++r) {
            for (int c = 0; c < layer.weight.cols(); ++c) fn(layer.weight(r, c));
        }
        for (int i = 0; i < layer.bias.size(); ++i) fn(layer.bias(i));
    }
}

// Central finite differences over every parameter, compared against the
// analytic gradients: |analytic - numeric| <= tol * max(1, |a|, |n|).
void check_gradients_fd(Model& model, nnet::Gradients& grads,
                        const std::function<double(const Model&)>& loss_of, double tol = 1e-4,
                        double step = 1e-5) {
    auto check_stack = [&](std::vector<nnet::Linear>& stack, std::vector<nnet::LinearGrad>& grad) {
        std::vector<double*> params;
        for_each_parameter(stack, [&](double& p) { params.push_back(&p); });
        std::vector<double*> analytic;
        for_each_gradient(grad, [&](double& g) { analytic.push_back(&g); });
        REQUIRE(params.size() == analytic.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double original = *params[i];
            *params[i] = original + step;
            const double up = loss_of(model);
            *params[i] = original - step;
            const double down = loss_of(model);
            *params[i] = original;
            const double numeric = (up - down) / (2.0 * step);
            const double a = *analytic[i];
            const double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
            CHECK(std::abs(a - numeric) <= tol * scale);
        }
    };
    check_stack(model.encoder, grads.encoder);
    check_stack(model.classifier, grads.classifier);
    check_stack(model.projection, grads.projection);
}

} // namespace

TEST_CASE("init_model: determinism, zero biases, glorot bounds") {
    const auto dims = ModelDims::desk(4);
    const auto a = nnet::init_model(dims, 42);
    const auto b = nnet::init_model(dims, 42);
    const auto c = nnet::init_model(dims, 43);

    bool all_equal = true;
    bool any_differs_from_c = false;
    for (std::size_t l = 0; l < a.encoder.size(); ++l) {
        all_equal = all_equal && a.encoder[l].weight == b.encoder[l].weight;
        any_differs_from_c = any_differs_from_c || a.encoder[l].weight != c.encoder[l].weight;
        CHECK(a.encoder[l].bias.isZero(0.0));
    }
    CHECK(all_equal);
    CHECK(any_differs_from_c);

    const Model* model = &a;
    for (const auto* stack : {&model->encoder, &model->classifier, &model->projection}) {
        for (const auto& layer : *stack) {
            const double bound =
                std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
            CHECK(layer.weight.maxCoeff() <= bound);
            CHECK(layer.weight.minCoeff() >= -bound);
        }
    }
}

TEST_CASE("init_model rejects non-chaining dims") {
    ModelDims dims = ModelDims::desk(4);
    dims.classifier.front() = 999;
    CHECK_THROWS_AS(nnet::init_model(dims, 1), std::invalid_argument);
}

TEST_CASE("encode: permutation invariance is exact") {
    const auto model = nnet::init_model(ModelDims::desk(4), 3);
    rng::Xoshiro256 gen(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto cloud = testutil::random_cloud(33, 500 + trial);
        const auto base = nnet::encode(model, cloud);
        std::vector<Point3> shuffled = cloud.points;
        gen.shuffle(shuffled);
        PointCloud permuted;
        permuted.points = shuffled;
        const auto other = nnet::encode(model, permuted);
        CHECK(base.global == other.global);
        CHECK(base.logits == other.logits);
        CHECK(base.embedding == other.embedding);
    }
}

TEST_CASE("encode: single point pools to its own features") {
    const auto model = nnet::init_model(ModelDims::desk(4), 5);
    PointCloud cloud;
    cloud.points = {{0.3, -0.2, 0.9}};
    const auto trace = nnet::encode(model, cloud);
    CHECK(trace.global == trace.feature_map().row(0).transpose());
    for (const int winner : trace.argmax) CHECK(winner == 0);
}

TEST_CASE("encode: global feature matches a brute-force channel scan") {
    const auto model = nnet::init_model(ModelDims::desk(4), 6);
    const auto cloud = testutil::random_cloud(64, 777);
    const auto trace = nnet::encode(model, cloud);
    const auto& features = trace.feature_map();
    for (int c = 0; c < features.cols(); ++c) {
        double best = features(0, c);
        int winner = 0;
        for (int i = 1; i < features.rows(); ++i) {
            if (features(i, c) > best) {
                best = features(i, c);
                winner = i;
            }
        }
        CHECK(trace.global(c) == best);
        CHECK(trace.argmax[c] == winner);
        CHECK(trace.global(c) == features(trace.argmax[c], c));
    }
}

TEST_CASE("encode: projection embeddings are unit length") {
    const auto model = nnet::init_model(ModelDims::desk(4), 7);
    for (int trial = 0; trial < 10; ++trial) {
        const auto cloud = testutil::random_cloud(16, 900 + trial);
        const auto trace = nnet::encode(model, cloud);
        CHECK(std::abs(trace.embedding.norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("encode: overflowing activations raise a numeric error naming the layer") {
    const auto model = nnet::init_model(toy_dims(), 1);
    PointCloud cloud;
    cloud.points = {{1e308, 1e308, 1e308}};
    Model hot = model;
    for (auto& layer : hot.encoder) layer.weight *= 1e60;
    CHECK_THROWS_WITH_AS(nnet::encode(hot, cloud), doctest::Contains("encoder layer"),
                         NumericError);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
    const auto model = nnet::init_model(toy_dims(), 11);
    const auto cloud = testutil::random_cloud(8, 1000);
    const auto trace = nnet::encode(model, cloud);
    nnet::UpstreamGrad upstream;
    upstream.d_logits = Eigen::VectorXd::Zero(3);
    upstream.d_embedding = Eigen::VectorXd::Zero(4);
    auto grads = nnet::backward(model, trace, upstream);
    for (auto* stack : {&grads.encoder, &grads.classifier, &grads.projection}) {
        for (auto& layer : *stack) {
            CHECK(layer.weight.isZero(0.0));
            CHECK(layer.bias.isZero(0.0));
        }
    }
}

TEST_CASE("backward: non-argmax points receive exactly zero gradient") {
    // One dominant point wins every channel (weights forced positive, relu
    // keeps monotonicity); the losers must contribute nothing.
    auto model = nnet::init_model(toy_dims(), 13);
    for (auto& layer : model.encoder) layer.weight = layer.weight.cwiseAbs();
    PointCloud cloud;
    cloud.points = {{100.0, 100.0, 100.0}, {0.01, 0.02, 0.03}, {-0.02, 0.01, -0.01}};
    const auto trace = nnet::encode(model, cloud);
    for (const int winner : trace.argmax) CHECK(winner == 0);

    nnet::UpstreamGrad upstream;
    upstream.d_global = Eigen::VectorXd::Ones(model.global_dim());
    const auto grads = nnet::backward(model, trace, upstream);

    // with d_z rows zero for losing points, dW1 = d_z^T X must be the outer
    // product of the per-row bias gradient with point 0 alone
    const Eigen::MatrixXd& w_grad = grads.encoder[0].weight;
    for (int r = 0; r < w_grad.rows(); ++r) {
        const double scale = grads.encoder[0].bias(r);
        for (int c = 0; c < 3; ++c) {
            CHECK(w_grad(r, c) == doctest::Approx(scale * 100.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward: classifier path matches finite differences") {
    auto model = nnet::init_model(toy_dims(), 17);
    const auto cloud = testutil::random_cloud(8, 2000);
    const Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(3, 0.3, 1.1);

    const auto trace = nnet::encode(model, cloud);
    nnet::UpstreamGrad upstream;
    upstream.d_logits = probe;
    auto grads = nnet::backward(model, trace, upstream);

    check_gradients_fd(model, grads,
                       [&](const Model& m) { return probe.dot(nnet::encode(m, cloud).logits); });
}

TEST_CASE("backward: projection path matches finite differences") {
    auto model = nnet::init_model(toy_dims(), 19);
    const auto cloud = testutil::random_cloud(8, 2001);
    const Eigen::VectorXd probe = Eigen::VectorXd::LinSpaced(4, -0.5, 0.8);

    const auto trace = nnet::encode(model, cloud);
    nnet::UpstreamGrad upstream;
    upstream.d_embedding = probe;
    auto grads = nnet::backward(model, trace, upstream);

    check_gradients_fd(model, grads, [&](const Model& m) {
        return probe.dot(nnet::encode(m, cloud).embedding);
    });
}

TEST_CASE("backward: mismatched upstream dimensions are rejected") {
    const auto model = nnet::init_model(toy_dims(), 23);
    const auto trace = nnet::encode(model, testutil::random_cloud(4, 3000));
    nnet::UpstreamGrad upstream;
    upstream.d_logits = Eigen::VectorXd::Zero(99);
    CHECK_THROWS_AS(nnet::backward(model, trace, upstream), std::invalid_argument);
}

TEST_CASE("critical subset: re-encoding the argmax points reproduces the global feature") {
    const auto model = nnet::init_model(ModelDims::desk(4), 29);
    for (int trial = 0; trial < 10; ++trial) {
        const auto cloud = testutil::random_cloud(40, 4000 + trial);
        const auto trace = nnet::encode(model, cloud);
        std::set<int> unique(trace.argmax.begin(), trace.argmax.end());
        PointCloud subset;
        for (const int idx : unique) subset.points.push_back(cloud.points[idx]);
        const auto sub_trace = nnet::encode(model, subset);
        CHECK(sub_trace.global == trace.global);
    }
}

TEST_CASE("checkpoint: round trip is bitwise exact") {
    TempDir dir("ckpt");
    auto model = nnet::init_model(ModelDims::desk(5), 31);
    model.stage = nnet::Stage::open;
    nnet::save_checkpoint(model, dir / "m.fpcd");
    const auto back = nnet::load_checkpoint(dir / "m.fpcd");
    CHECK(back.stage == nnet::Stage::open);
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        CHECK(back.encoder[l].weight == model.encoder[l].weight);
        CHECK(back.encoder[l].bias == model.encoder[l].bias);
    }
    for (std::size_t l = 0; l < model.classifier.size(); ++l) {
        CHECK(back.classifier[l].weight == model.classifier[l].weight);
    }
    for (std::size_t l = 0; l < model.projection.size(); ++l) {
        CHECK(back.projection[l].weight == model.projection[l].weight);
    }
}

TEST_CASE("checkpoint: truncation, corruption and bad magic are load errors") {
    TempDir dir("ckpt");
    const auto model = nnet::init_model(toy_dims(), 37);
    nnet::save_checkpoint(model, dir / "m.fpcd");

    std::ifstream in(dir / "m.fpcd", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {
        std::ofstream out(dir / "trunc.fpcd", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(nnet::load_checkpoint(dir / "trunc.fpcd"), ParseError);

    {
        std::string corrupt = bytes;
        corrupt[20] = static_cast<char>(corrupt[20] ^ 0x40);
        std::ofstream out(dir / "corrupt.fpcd", std::ios::binary);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS_WITH_AS(nnet::load_checkpoint(dir / "corrupt.fpcd"),
                         doctest::Contains("checksum"), ParseError);

    {
        std::ofstream out(dir / "bad.fpcd", std::ios::binary);
        out << "not a checkpoint at all, definitely long enough";
    }
    CHECK_THROWS_AS(nnet::load_checkpoint(dir / "bad.fpcd"), ParseError);
}

TEST_CASE("checkpoint: closed-stage model feeds the open-stage trainer") {
    TempDir dir("ckpt");
    const auto closed = nnet::init_model(ModelDims::desk(4), 41);
    nnet::save_checkpoint(closed, dir / "closed.fpcd");
    const auto loaded = nnet::load_checkpoint(dir / "closed.fpcd");
    const auto open = nnet::reinit_for_open_stage(loaded, 43);

    CHECK(open.stage == nnet::Stage::open);
    for (std::size_t l = 0; l < closed.encoder.size(); ++l) {
        CHECK(open.encoder[l].weight == closed.encoder[l].weight); // encoder reused
    }
    bool projection_differs = false;
    for (std::size_t l = 0; l < closed.projection.size(); ++l) {
        projection_differs =
            projection_differs || open.projection[l].weight != closed.projection[l].weight;
    }
    CHECK(projection_differs); // projection freshly initialized
}
