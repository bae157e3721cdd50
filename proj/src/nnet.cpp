#include "fakepcd/nnet.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "fakepcd/rng.hpp"

namespace fakepcd::nnet {

namespace {

void validate_chain(const std::vector<int>& dims, const std::string& what) {
    if (dims.size() < 2)
        throw std::invalid_argument(what + " needs at least an input and an output width");
    for (const int d : dims) {
        if (d < 1) throw std::invalid_argument(what + " widths must be >= 1");
    }
}

std::vector<Linear> init_stack(const std::vector<int>& dims, rng::Xoshiro256& gen) {
    std::vector<Linear> layers;
    layers.reserve(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Linear layer;
        const int in = dims[l];
        const int out = dims[l + 1];
        layer.weight.resize(out, in);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) {
                layer.weight(r, c) = gen.uniform(-bound, bound);
            }
        }
        layer.bias = Eigen::VectorXd::Zero(out);
        layer.activation = (l + 2 < dims.size()) ? Activation::relu : Activation::none;
        layers.push_back(std::move(layer));
    }
    return layers;
}

} // namespace

void ModelDims::validate() const {
    validate_chain(encoder, "encoder");
    validate_chain(classifier, "classifier");
    validate_chain(projection, "projection");
    if (classifier.front() != encoder.back())
        throw std::invalid_argument("classifier input width must equal the global feature dim");
    if (projection.front() != encoder.back())
        throw std::invalid_argument("projection input width must equal the global feature dim");
    if (projection.back() < 2)
        throw std::invalid_argument("embedding dimension must be >= 2");
}

ModelDims ModelDims::desk(int num_classes) {
    ModelDims d;
    d.encoder = {3, 32, 64, 128};
    d.classifier = {128, 64, 32, num_classes};
    d.projection = {128, 64, 32};
    return d;
}

ModelDims ModelDims::paper(int num_classes) {
    ModelDims d;
    d.encoder = {3, 64, 128, 1024};
    d.classifier = {1024, 512, 256, num_classes};
    d.projection = {1024, 512, 128};
    return d;
}

ModelDims Model::dims() const {
    ModelDims d;
    auto collect = [](const std::vector<Linear>& stack) {
        std::vector<int> dims;
        dims.push_back(stack.front().in_dim());
        for (const auto& layer : stack) dims.push_back(layer.out_dim());
        return dims;
    };
    d.encoder = collect(encoder);
    d.classifier = collect(classifier);
    d.projection = collect(projection);
    return d;
}

Model init_model(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    rng::Xoshiro256 gen(seed);
    Model model;
    model.encoder = init_stack(dims.encoder, gen);
    model.classifier = init_stack(dims.classifier, gen);
    model.projection = init_stack(dims.projection, gen);
    model.stage = Stage::closed;
    return model;
}

namespace {

void check_finite(const Eigen::MatrixXd& m, const std::string& where) {
    if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

Eigen::VectorXd run_head(const std::vector<Linear>& stack, const Eigen::VectorXd& input,
                         std::vector<Eigen::VectorXd>& pre, std::vector<Eigen::VectorXd>& post,
                         const std::string& name) {
    Eigen::VectorXd x = input;
    pre.clear();
    post.clear();
    for (std::size_t l = 0; l < stack.size(); ++l) {
        Eigen::VectorXd z = stack[l].weight * x + stack[l].bias;
        check_finite(z, name + " layer " + std::to_string(l));
        pre.push_back(z);
        if (stack[l].activation == Activation::relu) z = z.cwiseMax(0.0);
        post.push_back(z);
        x = z;
    }
    return x;
}

} // namespace

ForwardTrace encode(const Model& model, const PointCloud& cloud) {
    cloud.validate();
    const int n = static_cast<int>(cloud.size());

    ForwardTrace trace;
    trace.input.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        trace.input(i, 0) = cloud.points[i].x;
        trace.input(i, 1) = cloud.points[i].y;
        trace.input(i, 2) = cloud.points[i].z;
    }

    // The shared stack is evaluated point by point with a fixed accumulation
    // order. A whole-matrix product would let the BLAS kernel choice (and so
    // the last-ulp rounding) depend on n, breaking the exact equality between
    // encoding a cloud and re-encoding its critical subset.
    Eigen::MatrixXd x = trace.input;
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        const Eigen::MatrixXd& w = model.encoder[l].weight;
        const Eigen::VectorXd& b = model.encoder[l].bias;
        const int out_dim = static_cast<int>(w.rows());
        const int in_dim = static_cast<int>(w.cols());
        Eigen::MatrixXd z(n, out_dim);
        for (int i = 0; i < n; ++i) {
            for (int r = 0; r < out_dim; ++r) {
                double acc = b(r);
                for (int c = 0; c < in_dim; ++c) acc += w(r, c) * x(i, c);
                z(i, r) = acc;
            }
        }
        check_finite(z, "encoder layer " + std::to_string(l));
        trace.encoder_pre.push_back(z);
        if (model.encoder[l].activation == Activation::relu) z = z.cwiseMax(0.0);
        trace.encoder_post.push_back(z);
        x = std::move(z);
    }

    const Eigen::MatrixXd& features = trace.encoder_post.back();
    const int g = static_cast<int>(features.cols());
    trace.argmax.assign(g, 0);
    trace.global.resize(g);
    for (int c = 0; c < g; ++c) {
        int winner = 0;
        double best = features(0, c);
        for (int i = 1; i < n; ++i) {
            if (features(i, c) > best) { // strict: ties keep the lowest index
                best = features(i, c);
                winner = i;
            }
        }
        trace.argmax[c] = winner;
        trace.global(c) = best;
    }

    trace.logits = run_head(model.classifier, trace.global, trace.classifier_pre,
                            trace.classifier_post, "classifier");
    trace.projection_raw = run_head(model.projection, trace.global, trace.projection_pre,
                                    trace.projection_post, "projection");
    const double norm = trace.projection_raw.norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw NumericError("projection output has zero or non-finite norm");
    trace.embedding = trace.projection_raw / norm;
    return trace;
}

void Gradients::add_scaled(const Gradients& other, double s) {
    auto add = [s](std::vector<LinearGrad>& dst, const std::vector<LinearGrad>& src) {
        for (std::size_t l = 0; l < dst.size(); ++l) {
            dst[l].weight += s * src[l].weight;
            dst[l].bias += s * src[l].bias;
        }
    };
    add(encoder, other.encoder);
    add(classifier, other.classifier);
    add(projection, other.projection);
}

void Gradients::scale(double s) {
    auto mul = [s](std::vector<LinearGrad>& stack) {
        for (auto& g : stack) {
            g.weight *= s;
            g.bias *= s;
        }
    };
    mul(encoder);
    mul(classifier);
    mul(projection);
}

Gradients zero_gradients(const Model& model) {
    Gradients grads;
    auto zeros = [](const std::vector<Linear>& stack) {
        std::vector<LinearGrad> out;
        out.reserve(stack.size());
        for (const auto& layer : stack) {
            out.push_back({Eigen::MatrixXd::Zero(layer.out_dim(), layer.in_dim()),
                           Eigen::VectorXd::Zero(layer.out_dim())});
        }
        return out;
    };
    grads.encoder = zeros(model.encoder);
    grads.classifier = zeros(model.classifier);
    grads.projection = zeros(model.projection);
    return grads;
}

namespace {

// Backprop through a head stack; returns the gradient w.r.t. its input.
Eigen::VectorXd head_backward(const std::vector<Linear>& stack,
                              const std::vector<Eigen::VectorXd>& pre, const Eigen::VectorXd& input,
                              const std::vector<Eigen::VectorXd>& post, Eigen::VectorXd d_out,
                              std::vector<LinearGrad>& grads) {
    for (int l = static_cast<int>(stack.size()) - 1; l >= 0; --l) {
        Eigen::VectorXd d_z = std::move(d_out);
        if (stack[l].activation == Activation::relu) {
            d_z = d_z.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
        }
        const Eigen::VectorXd& layer_in = (l == 0) ? input : post[l - 1];
        grads[l].weight += d_z * layer_in.transpose();
        grads[l].bias += d_z;
        d_out = stack[l].weight.transpose() * d_z;
    }
    return d_out;
}

} // namespace

Gradients backward(const Model& model, const ForwardTrace& trace, const UpstreamGrad& upstream) {
    const int g = model.global_dim();
    if (static_cast<int>(trace.global.size()) != g ||
        trace.encoder_post.size() != model.encoder.size())
        throw std::invalid_argument("backward: trace does not match model architecture");

    Gradients grads = zero_gradients(model);
    Eigen::VectorXd d_global = Eigen::VectorXd::Zero(g);
    if (upstream.d_global.size() > 0) {
        if (upstream.d_global.size() != g)
            throw std::invalid_argument("backward: d_global dimension mismatch");
        d_global += upstream.d_global;
    }

    if (upstream.d_logits.size() > 0) {
        if (upstream.d_logits.size() != model.num_classes())
            throw std::invalid_argument("backward: d_logits dimension mismatch");
        d_global += head_backward(model.classifier, trace.classifier_pre, trace.global,
                                  trace.classifier_post, upstream.d_logits, grads.classifier);
    }

    if (upstream.d_embedding.size() > 0) {
        if (upstream.d_embedding.size() != model.embedding_dim())
            throw std::invalid_argument("backward: d_embedding dimension mismatch");
        // z = v / |v|  =>  dL/dv = (dL/dz - z (z . dL/dz)) / |v|
        const double norm = trace.projection_raw.norm();
        const Eigen::VectorXd& z = trace.embedding;
        Eigen::VectorXd d_raw =
            (upstream.d_embedding - z * z.dot(upstream.d_embedding)) / norm;
        d_global += head_backward(model.projection, trace.projection_pre, trace.global,
                                  trace.projection_post, std::move(d_raw), grads.projection);
    }

    // Max pool: each channel's gradient lands on that channel's winning point.
    const int n = static_cast<int>(trace.input.rows());
    Eigen::MatrixXd d_features = Eigen::MatrixXd::Zero(n, g);
    for (int c = 0; c < g; ++c) {
        d_features(trace.argmax[c], c) = d_global(c);
    }

    Eigen::MatrixXd d_out = std::move(d_features);
    for (int l = static_cast<int>(model.encoder.size()) - 1; l >= 0; --l) {
        Eigen::MatrixXd d_z = std::move(d_out);
        if (model.encoder[l].activation == Activation::relu) {
            d_z = d_z.cwiseProduct(
                (trace.encoder_pre[l].array() > 0.0).cast<double>().matrix());
        }
        const Eigen::MatrixXd& layer_in = (l == 0) ? trace.input : trace.encoder_post[l - 1];
        grads.encoder[l].weight += d_z.transpose() * layer_in;
        grads.encoder[l].bias += d_z.colwise().sum().transpose();
        if (l > 0) d_out = d_z * model.encoder[l].weight;
    }
    return grads;
}

// --- checkpoint container ---------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'P', 'C', 'D'};
constexpr std::uint16_t kCheckpointVersion = 1;

void put_u16le(std::vector<unsigned char>& buf, std::uint16_t v) {
    buf.push_back(static_cast<unsigned char>(v & 0xff));
    buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

void put_u32le(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f64le(std::vector<unsigned char>& buf, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size, std::string path)
        : data_(data), size_(size), path_(std::move(path)) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }

    double f64() {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return std::bit_cast<double>(bits);
    }

    std::uint8_t byte() {
        if (pos_ >= size_)
            throw ParseError("truncated checkpoint at byte offset " + std::to_string(pos_) +
                             " in " + path_);
        return data_[pos_++];
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    const unsigned char* data_;
    std::size_t size_;
    std::string path_;
    std::size_t pos_ = 0;
};

void append_stack_params(std::vector<unsigned char>& buf, const std::vector<Linear>& stack) {
    for (const auto& layer : stack) {
        for (int r = 0; r < layer.weight.rows(); ++r) {
            for (int c = 0; c < layer.weight.cols(); ++c) put_f64le(buf, layer.weight(r, c));
        }
        for (int i = 0; i < layer.bias.size(); ++i) put_f64le(buf, layer.bias(i));
    }
}

void read_stack_params(Reader& reader, std::vector<Linear>& stack) {
    for (auto& layer : stack) {
        for (int r = 0; r < layer.weight.rows(); ++r) {
            for (int c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = reader.f64();
        }
        for (int i = 0; i < layer.bias.size(); ++i) layer.bias(i) = reader.f64();
    }
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

void write_with_crc(std::vector<unsigned char>& buf, const std::filesystem::path& path) {
    const auto crc =
        static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    put_u32le(buf, crc);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failure: " + path.string());
}

// Strips and checks the trailing CRC, returns the payload span size.
std::size_t check_crc(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    if (bytes.size() < 4) throw ParseError("truncated checkpoint in " + path.string());
    const std::size_t payload = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[payload + i]) << (8 * i);
    const auto computed =
        static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(payload)));
    if (stored != computed) throw ParseError("checksum mismatch in " + path.string());
    return payload;
}

void check_header(Reader& reader, const std::filesystem::path& path) {
    char magic[4];
    for (char& ch : magic) ch = static_cast<char>(reader.byte());
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw ParseError("bad magic in " + path.string());
    const std::uint16_t version = reader.u16();
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " in " +
                         path.string());
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const ModelDims dims = model.dims();
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u16le(buf, kCheckpointVersion);
    for (const auto* stack : {&dims.encoder, &dims.classifier, &dims.projection}) {
        put_u32le(buf, static_cast<std::uint32_t>(stack->size()));
        for (const int d : *stack) put_u32le(buf, static_cast<std::uint32_t>(d));
    }
    buf.push_back(static_cast<unsigned char>(model.stage));
    append_stack_params(buf, model.encoder);
    append_stack_params(buf, model.classifier);
    append_stack_params(buf, model.projection);
    write_with_crc(buf, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::size_t payload = check_crc(bytes, path);
    Reader reader(bytes.data(), payload, path.string());
    check_header(reader, path);

    ModelDims dims;
    for (auto* stack : {&dims.encoder, &dims.classifier, &dims.projection}) {
        const std::uint32_t count = reader.u32();
        if (count < 2 || count > 64)
            throw ParseError("implausible dims sequence in " + path.string());
        stack->clear();
        for (std::uint32_t i = 0; i < count; ++i)
            stack->push_back(static_cast<int>(reader.u32()));
    }
    dims.validate();

    const std::uint8_t stage_byte = reader.byte();
    if (stage_byte > 1)
        throw ParseError("unknown stage tag " + std::to_string(stage_byte) + " in " +
                         path.string());

    Model model = init_model(dims, 0);
    model.stage = static_cast<Stage>(stage_byte);
    read_stack_params(reader, model.encoder);
    read_stack_params(reader, model.classifier);
    read_stack_params(reader, model.projection);
    if (reader.remaining() != 0)
        throw ParseError("trailing bytes after parameters in " + path.string());

    for (const auto* stack : {&model.encoder, &model.classifier, &model.projection}) {
        for (const auto& layer : *stack) {
            if (!layer.weight.allFinite() || !layer.bias.allFinite())
                throw ValidationError("non-finite parameters in " + path.string());
        }
    }
    return model;
}

Model reinit_for_open_stage(const Model& closed, std::uint64_t seed) {
    Model model = init_model(closed.dims(), seed);
    model.encoder = closed.encoder;
    model.stage = Stage::open;
    return model;
}

} // namespace fakepcd::nnet
