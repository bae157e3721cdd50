#include "fakepcd/attribution.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "fakepcd/rng.hpp"
#include "fakepcd/train.hpp"

namespace fakepcd::attribution {

namespace {

std::vector<std::vector<std::size_t>> group_by_known_source(const EmbeddedDataset& dataset,
                                                            std::vector<std::string>& names) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& label = dataset[i].label;
        if (!label.is_known()) continue;
        if (label.index >= static_cast<int>(groups.size())) {
            groups.resize(label.index + 1);
            names.resize(label.index + 1);
        }
        groups[label.index].push_back(i);
        names[label.index] = label.name;
    }
    if (groups.empty())
        throw std::invalid_argument("anchor set: dataset contains no known-source samples");
    for (std::size_t s = 0; s < groups.size(); ++s) {
        if (groups[s].empty())
            throw std::invalid_argument("anchor set: known source indices are not dense at " +
                                        std::to_string(s));
    }
    return groups;
}

} // namespace

AnchorSet build_anchor_set(const EmbeddedDataset& dataset, int anchors_per_source,
                           std::uint64_t seed) {
    if (anchors_per_source < 1)
        throw std::invalid_argument("anchor set: anchors_per_source must be >= 1");
    AnchorSet set;
    set.anchors_per_source = anchors_per_source;
    const auto groups = group_by_known_source(dataset, set.source_names);

    const int dim = static_cast<int>(dataset.front().embedding.size());
    for (std::size_t s = 0; s < groups.size(); ++s) {
        const auto& group = groups[s];
        if (static_cast<int>(group.size()) < anchors_per_source)
            throw std::invalid_argument("anchor set: source '" + set.source_names[s] + "' has " +
                                        std::to_string(group.size()) + " samples, needs " +
                                        std::to_string(anchors_per_source));
        rng::Xoshiro256 gen(rng::derive(seed, 0x616e63686f72, s));
        const auto picks = gen.sample_without_replacement(group.size(), anchors_per_source);

        Eigen::MatrixXd anchors(anchors_per_source, dim);
        for (int j = 0; j < anchors_per_source; ++j) {
            const auto& z = dataset[group[picks[j]]].embedding;
            if (z.size() != dim)
                throw std::invalid_argument("anchor set: inconsistent embedding dimensions");
            anchors.row(j) = z.transpose();
        }
        Eigen::VectorXd centroid = anchors.colwise().mean().transpose();
        std::vector<double> intra(anchors_per_source);
        for (int j = 0; j < anchors_per_source; ++j) {
            intra[j] = (anchors.row(j).transpose() - centroid).norm();
        }
        set.anchors.push_back(std::move(anchors));
        set.centroids.push_back(std::move(centroid));
        set.intra.push_back(std::move(intra));
    }
    return set;
}

DistanceProfile mean_source_distance(const Eigen::VectorXd& query, const AnchorSet& anchors) {
    if (anchors.num_sources() == 0) throw std::invalid_argument("mean_source_distance: empty anchor set");
    if (query.size() != anchors.dim())
        throw std::invalid_argument("mean_source_distance: query dimension " +
                                    std::to_string(query.size()) + " does not match anchors (" +
                                    std::to_string(anchors.dim()) + ")");
    DistanceProfile profile;
    profile.mean_distance.reserve(anchors.num_sources());
    for (const auto& cluster : anchors.anchors) {
        double total = 0.0;
        for (int j = 0; j < cluster.rows(); ++j) {
            total += (cluster.row(j).transpose() - query).norm();
        }
        profile.mean_distance.push_back(total / static_cast<double>(cluster.rows()));
    }
    return profile;
}

double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: empty sequence");
    if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: P must be in (0, 100]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

ThresholdPolicy select_threshold(const AnchorSet& anchors, double p) {
    if (anchors.num_sources() == 0) throw std::invalid_argument("select_threshold: empty anchor set");
    double t = std::numeric_limits<double>::infinity();
    for (const auto& seq : anchors.intra) {
        t = std::min(t, percentile(seq, p));
    }
    return {p, t};
}

AttributionResult assign(const Eigen::VectorXd& query, const AnchorSet& anchors,
                         const ThresholdPolicy& policy) {
    AttributionResult result;
    result.profile = mean_source_distance(query, anchors);
    result.threshold = policy.threshold;

    int closest = 0;
    double best = result.profile.mean_distance[0];
    for (std::size_t j = 1; j < result.profile.mean_distance.size(); ++j) {
        if (result.profile.mean_distance[j] < best) { // strict keeps the lowest index on ties
            best = result.profile.mean_distance[j];
            closest = static_cast<int>(j);
        }
    }
    result.margin = best - policy.threshold;
    result.verdict = best > policy.threshold
                         ? SourceLabel::unknown()
                         : SourceLabel::known(closest, anchors.source_names[closest]);
    return result;
}

double tune_percentile(const EmbeddedDataset& validation, const AnchorSet& anchors,
                       std::span<const double> grid) {
    if (grid.empty()) throw std::invalid_argument("tune_percentile: empty grid");
    bool has_known = false;
    bool has_unknown = false;
    for (const auto& sample : validation) {
        (sample.label.is_known() ? has_known : has_unknown) = true;
    }
    if (!has_known || !has_unknown)
        throw ConfigError("tune_percentile: validation set needs both known and unknown samples");

    std::vector<double> candidates(grid.begin(), grid.end());
    std::sort(candidates.begin(), candidates.end());

    double best_p = candidates.front();
    double best_score = -1.0;
    for (const double p : candidates) {
        const auto policy = select_threshold(anchors, p);
        std::vector<SourceLabel> verdicts;
        std::vector<SourceLabel> truth;
        verdicts.reserve(validation.size());
        truth.reserve(validation.size());
        for (const auto& sample : validation) {
            verdicts.push_back(assign(sample.embedding, anchors, policy).verdict);
            truth.push_back(sample.label);
        }
        const auto report = evaluate(verdicts, truth);
        const double score = (report.known_accuracy.value() + report.unknown_accuracy.value()) / 2.0;
        if (score > best_score) { // strict: ties keep the smaller P
            best_score = score;
            best_p = p;
        }
    }
    return best_p;
}

LogitBaseline fit_logit_baseline(const nnet::Model& closed_model, const Dataset& training_set) {
    if (training_set.empty())
        throw std::invalid_argument("logit baseline: empty training set");
    LogitBaseline baseline;
    baseline.probability_threshold = std::numeric_limits<double>::infinity();
    for (const auto& cloud : training_set) {
        if (!cloud.source || !cloud.source->is_known())
            throw std::invalid_argument("logit baseline: training clouds need known labels");
        const auto trace = nnet::encode(closed_model, cloud);
        const Eigen::VectorXd probs = train::softmax(trace.logits);
        baseline.probability_threshold =
            std::min(baseline.probability_threshold, probs(cloud.source->index));
    }
    return baseline;
}

SourceLabel logit_baseline_assign(const Eigen::VectorXd& logits, const LogitBaseline& baseline,
                                  const std::vector<std::string>& source_names) {
    const Eigen::VectorXd probs = train::softmax(logits);
    int predicted = 0;
    probs.maxCoeff(&predicted);
    if (probs(predicted) >= baseline.probability_threshold) {
        return SourceLabel::known(predicted, predicted < static_cast<int>(source_names.size())
                                                 ? source_names[predicted]
                                                 : "");
    }
    return SourceLabel::unknown();
}

// --- Gaussian mixture --------------------------------------------------------

namespace {

constexpr double kRidge = 1e-6;
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double log_gaussian_diag(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& variance) {
    double acc = 0.0;
    for (int d = 0; d < x.size(); ++d) {
        const double diff = x(d) - mean(d);
        acc += kLogTwoPi + std::log(variance(d)) + diff * diff / variance(d);
    }
    return -0.5 * acc;
}

} // namespace

GmmResult split_unknowns(const Eigen::MatrixXd& embeddings, int components, std::uint64_t seed) {
    const int n = static_cast<int>(embeddings.rows());
    const int dim = static_cast<int>(embeddings.cols());
    if (components < 1) throw std::invalid_argument("split_unknowns: components must be >= 1");
    if (n < 2 * dim)
        throw std::invalid_argument("split_unknowns: need at least 2*dim samples, got " +
                                    std::to_string(n) + " for dim " + std::to_string(dim));

    rng::Xoshiro256 gen(seed);
    GmmResult result;
    result.means.resize(components, dim);
    result.variances.resize(components, dim);
    result.weights = Eigen::VectorXd::Constant(components, 1.0 / components);

    // k-means++ style seeding: first center uniform, the rest weighted by
    // squared distance to the closest chosen center.
    std::vector<int> centers;
    centers.push_back(static_cast<int>(gen.below(n)));
    Eigen::VectorXd nearest_sq = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::max());
    while (static_cast<int>(centers.size()) < components) {
        for (int i = 0; i < n; ++i) {
            const double d2 = (embeddings.row(i) - embeddings.row(centers.back())).squaredNorm();
            nearest_sq(i) = std::min(nearest_sq(i), d2);
        }
        const double total = nearest_sq.sum();
        int pick;
        if (total > 0.0) {
            const double u = gen.uniform01() * total;
            double cumulative = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                cumulative += nearest_sq(i);
                if (cumulative > u) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(gen.below(n)); // all points coincide
        }
        centers.push_back(pick);
    }

    // Hard initial assignment to the nearest seed center.
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, components);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (int c = 0; c < components; ++c) {
            const double d2 = (embeddings.row(i) - embeddings.row(centers[c])).squaredNorm();
            if (d2 < best_d) {
                best_d = d2;
                best = c;
            }
        }
        resp(i, best) = 1.0;
    }

    auto m_step = [&]() {
        for (int c = 0; c < components; ++c) {
            const double mass = resp.col(c).sum();
            result.weights(c) = std::max(mass / n, 1e-12);
            if (mass > 0.0) {
                result.means.row(c) = (resp.col(c).transpose() * embeddings) / mass;
                Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
                for (int i = 0; i < n; ++i) {
                    if (resp(i, c) == 0.0) continue;
                    const Eigen::VectorXd diff =
                        embeddings.row(i).transpose() - result.means.row(c).transpose();
                    var += resp(i, c) * diff.cwiseProduct(diff);
                }
                result.variances.row(c) = (var / mass).transpose();
            } else {
                result.means.row(c) = embeddings.row(centers[c]);
                result.variances.row(c).setZero();
            }
            // Degenerate covariance: ridge-regularize with eps * I.
            if (result.variances.row(c).minCoeff() < kRidge) {
                result.variances.row(c).array() += kRidge;
                result.regularized = true;
            }
        }
        result.weights /= result.weights.sum();
    };
    m_step();

    constexpr int kMaxIterations = 200;
    double previous_ll = -std::numeric_limits<double>::infinity();
    for (int iteration = 0; iteration < kMaxIterations; ++iteration) {
        // E step in the log domain.
        double ll = 0.0;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd log_p(components);
            for (int c = 0; c < components; ++c) {
                log_p(c) = std::log(result.weights(c)) +
                           log_gaussian_diag(embeddings.row(i).transpose(),
                                             result.means.row(c).transpose(),
                                             result.variances.row(c).transpose());
            }
            const double peak = log_p.maxCoeff();
            const double log_sum = peak + std::log((log_p.array() - peak).exp().sum());
            ll += log_sum;
            resp.row(i) = (log_p.array() - log_sum).exp().transpose();
        }
        result.log_likelihoods.push_back(ll);
        if (std::abs(ll - previous_ll) < 1e-9 * std::max(1.0, std::abs(ll))) break;
        previous_ll = ll;
        m_step();
    }

    result.assignments.resize(n);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        resp.row(i).maxCoeff(&best);
        result.assignments[i] = best;
    }
    return result;
}

EvalReport evaluate(const std::vector<SourceLabel>& verdicts,
                    const std::vector<SourceLabel>& ground_truth) {
    if (verdicts.size() != ground_truth.size())
        throw std::invalid_argument("evaluate: verdicts and ground truth are misaligned");

    EvalReport report;
    std::size_t known_correct = 0;
    std::size_t unknown_correct = 0;
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        if (ground_truth[i].is_known()) {
            ++report.known_total;
            if (verdicts[i] == ground_truth[i]) ++known_correct;
        } else {
            ++report.unknown_total;
            if (!verdicts[i].is_known()) ++unknown_correct;
        }
    }
    if (report.known_total > 0)
        report.known_accuracy = static_cast<double>(known_correct) / report.known_total;
    if (report.unknown_total > 0)
        report.unknown_accuracy = static_cast<double>(unknown_correct) / report.unknown_total;

    // Macro F1 over occupied classes; Unknown is class -1.
    auto class_id = [](const SourceLabel& label) { return label.is_known() ? label.index : -1; };
    std::map<int, std::array<std::size_t, 3>> counts; // class -> {tp, fp, fn}
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const int truth = class_id(ground_truth[i]);
        const int predicted = class_id(verdicts[i]);
        if (truth == predicted) {
            counts[truth][0] += 1;
        } else {
            counts[predicted][1] += 1;
            counts[truth][2] += 1;
        }
    }
    double f1_sum = 0.0;
    for (const auto& [cls, c] : counts) {
        (void)cls;
        const double denom = static_cast<double>(2 * c[0] + c[1] + c[2]);
        f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(c[0]) / denom : 0.0;
    }
    report.macro_f1 = counts.empty() ? 0.0 : f1_sum / static_cast<double>(counts.size());
    return report;
}

// --- persistence -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'P', 'C', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kAnchorSectionTag = 2;

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

} // namespace

void save_anchor_set(const AnchorSet& anchors, const std::filesystem::path& path) {
    if (anchors.num_sources() == 0)
        throw std::invalid_argument("save_anchor_set: empty anchor set");
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u16le(buf, kVersion);
    put_u32le(buf, 3);
    put_u32le(buf, static_cast<std::uint32_t>(anchors.num_sources()));
    put_u32le(buf, static_cast<std::uint32_t>(anchors.anchors_per_source));
    put_u32le(buf, static_cast<std::uint32_t>(anchors.dim()));
    buf.push_back(kAnchorSectionTag);
    for (int s = 0; s < anchors.num_sources(); ++s) {
        const auto& name = anchors.source_names[s];
        put_u16le(buf, static_cast<std::uint16_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        const auto& cluster = anchors.anchors[s];
        for (int r = 0; r < cluster.rows(); ++r) {
            for (int c = 0; c < cluster.cols(); ++c) put_f64le(buf, cluster(r, c));
        }
    }
    const auto crc =
        static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    put_u32le(buf, crc);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failure: " + path.string());
}

AnchorSet load_anchor_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 4) throw ParseError("truncated anchor file in " + path.string());
    const std::size_t payload = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[payload + i]) << (8 * i);
    if (stored != static_cast<std::uint32_t>(
                      ::crc32(0L, bytes.data(), static_cast<uInt>(payload))))
        throw ParseError("checksum mismatch in " + path.string());

    std::size_t pos = 0;
    auto need = [&](std::size_t count) {
        if (pos + count > payload)
            throw ParseError("truncated anchor file at byte offset " + std::to_string(pos) +
                             " in " + path.string());
    };
    auto u16 = [&]() {
        need(2);
        const std::uint16_t v =
            static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    };
    auto u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    };
    auto f64 = [&]() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    };

    need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ParseError("bad magic in " + path.string());
    pos += 4;
    if (u16() != kVersion) throw ParseError("unsupported anchor file version in " + path.string());
    if (u32() != 3) throw ParseError("unexpected dims sequence in " + path.string());
    const std::uint32_t num_sources = u32();
    const std::uint32_t per_source = u32();
    const std::uint32_t dim = u32();
    need(1);
    if (bytes[pos++] != kAnchorSectionTag)
        throw ParseError("not an anchor section in " + path.string());
    if (num_sources == 0 || per_source == 0 || dim < 2)
        throw ParseError("implausible anchor dimensions in " + path.string());

    AnchorSet set;
    set.anchors_per_source = static_cast<int>(per_source);
    for (std::uint32_t s = 0; s < num_sources; ++s) {
        const std::uint16_t name_len = u16();
        need(name_len);
        set.source_names.emplace_back(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        Eigen::MatrixXd cluster(per_source, dim);
        for (std::uint32_t r = 0; r < per_source; ++r) {
            for (std::uint32_t c = 0; c < dim; ++c) cluster(r, c) = f64();
        }
        if (!cluster.allFinite())
            throw ValidationError("non-finite anchor embeddings in " + path.string());
        Eigen::VectorXd centroid = cluster.colwise().mean().transpose();
        std::vector<double> intra(per_source);
        for (std::uint32_t r = 0; r < per_source; ++r) {
            intra[r] = (cluster.row(r).transpose() - centroid).norm();
        }
        set.anchors.push_back(std::move(cluster));
        set.centroids.push_back(std::move(centroid));
        set.intra.push_back(std::move(intra));
    }
    if (pos != payload) throw ParseError("trailing bytes in " + path.string());
    return set;
}

} // namespace fakepcd::attribution
