#include "fakepcd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "fakepcd/explain.hpp"
#include "fakepcd/pcd_io.hpp"
#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/rng.hpp"

namespace fakepcd::pipeline {

int thread_cap() {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    cap = std::clamp(cap, 1, 16);
    if (const char* env = std::getenv("FAKEPCD_THREADS")) {
        try {
            cap = std::min(cap, std::max(1, std::stoi(env)));
        } catch (const std::exception&) {
            throw ConfigError("FAKEPCD_THREADS must be a positive integer");
        }
    }
    return cap;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<std::size_t>(thread_cap(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                if (failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) throw NumericError("parallel batch evaluation failed");
}

attribution::EmbeddedDataset embed_dataset(const nnet::Model& model, const Dataset& dataset) {
    attribution::EmbeddedDataset out(dataset.size());
    parallel_for(dataset.size(), [&](std::size_t i) {
        const auto trace = nnet::encode(model, dataset[i]);
        out[i].embedding = trace.embedding;
        out[i].label = dataset[i].source.value_or(SourceLabel::unknown());
        out[i].shape = dataset[i].shape_tag.value_or("");
    });
    return out;
}

// --- run manifests ------------------------------------------------------------

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out << "command=" << manifest.command << "\n";
    out << "version=" << manifest.tool_version << "\n";
    out << "wall_clock_ms=" << manifest.wall_clock_ms << "\n";
    for (std::size_t i = 0; i < manifest.inputs.size(); ++i)
        out << "input." << i << "=" << manifest.inputs[i] << "\n";
    for (std::size_t i = 0; i < manifest.outputs.size(); ++i)
        out << "output." << i << "=" << manifest.outputs[i] << "\n";
    for (const auto& [key, value] : manifest.resolved)
        out << "resolved." << key << "=" << value << "\n";
    if (!out) throw IoError("write failure: " + path.string());
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    RunManifest manifest;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "command") {
            manifest.command = value;
        } else if (key == "version") {
            manifest.tool_version = value;
        } else if (key == "wall_clock_ms") {
            manifest.wall_clock_ms = std::atoll(value.c_str());
        } else if (key.rfind("input.", 0) == 0) {
            manifest.inputs.push_back(value);
        } else if (key.rfind("output.", 0) == 0) {
            manifest.outputs.push_back(value);
        } else if (key.rfind("resolved.", 0) == 0) {
            manifest.resolved.emplace_back(key.substr(9), value);
        }
    }
    return manifest;
}

std::vector<std::string> split_command_line(const std::string& command) {
    std::vector<std::string> argv;
    std::string current;
    bool quoted = false;
    for (const char ch : command) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ' ' && !quoted) {
            if (!current.empty()) argv.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(ch);
        }
    }
    if (!current.empty()) argv.push_back(std::move(current));
    return argv;
}

// --- dataset materialization ----------------------------------------------------

namespace {

struct SplitRef {
    const Dataset* data;
    const char* name;
};

std::string cloud_file_name(const PointCloud& cloud, const char* split, int index) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "clouds/%s_%s_%s_%04d.pcda", split,
                  cloud.source ? cloud.source->name.c_str() : "unlabeled",
                  cloud.shape_tag ? cloud.shape_tag->c_str() : "untagged", index);
    return buf;
}

} // namespace

void write_dataset(const simsource::Scenario& scenario, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "clouds");
    std::ofstream csv(out_dir / "dataset.csv");
    if (!csv) throw IoError("cannot open file for writing: " + (out_dir / "dataset.csv").string());
    csv << "path,source,shape,split\n";
    const SplitRef splits[] = {{&scenario.train, "train"},
                               {&scenario.validation, "validation"},
                               {&scenario.test, "test"}};
    for (const auto& split : splits) {
        int index = 0;
        for (const auto& cloud : *split.data) {
            const std::string rel = cloud_file_name(cloud, split.name, index++);
            write_point_cloud(cloud, out_dir / rel, CloudFormat::pcda);
            csv << rel << "," << (cloud.source ? cloud.source->name : "") << ","
                << (cloud.shape_tag ? *cloud.shape_tag : "") << "," << split.name << "\n";
        }
    }
    if (!csv) throw IoError("write failure: " + (out_dir / "dataset.csv").string());
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.txt";
    const RunManifest manifest = read_manifest(manifest_path);
    LoadedDataset loaded;
    for (const auto& [key, value] : manifest.resolved) {
        if (key == "scenario.known_sources") {
            std::istringstream in(value);
            std::string item;
            while (std::getline(in, item, ',')) loaded.known_sources.push_back(item);
        } else if (key == "scenario.unknown_sources") {
            std::istringstream in(value);
            std::string item;
            while (std::getline(in, item, ',')) loaded.unknown_sources.push_back(item);
        }
    }
    if (loaded.known_sources.empty())
        throw ConfigError("manifest " + manifest_path.string() +
                          " does not record scenario.known_sources");

    std::ifstream csv(dir / "dataset.csv");
    if (!csv) throw IoError("cannot open dataset manifest: " + (dir / "dataset.csv").string());
    std::string line;
    if (!std::getline(csv, line) || line != "path,source,shape,split")
        throw ParseError("unexpected dataset.csv header in " + dir.string());
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream in(line);
        std::string field;
        while (std::getline(in, field, ',')) fields.push_back(field);
        if (fields.size() != 4)
            throw ParseError("malformed dataset.csv row '" + line + "' in " + dir.string());
        PointCloud cloud = read_point_cloud(dir / fields[0], CloudFormat::pcda);
        cloud.shape_tag = fields[2];
        const auto known_it =
            std::find(loaded.known_sources.begin(), loaded.known_sources.end(), fields[1]);
        if (known_it != loaded.known_sources.end()) {
            cloud.source = SourceLabel::known(
                static_cast<int>(known_it - loaded.known_sources.begin()), fields[1]);
        } else {
            cloud.source = SourceLabel::unknown(fields[1]);
        }
        if (fields[3] == "train") {
            loaded.train.push_back(std::move(cloud));
        } else if (fields[3] == "validation") {
            loaded.validation.push_back(std::move(cloud));
        } else if (fields[3] == "test") {
            loaded.test.push_back(std::move(cloud));
        } else {
            throw ParseError("unknown split '" + fields[3] + "' in " + dir.string());
        }
    }
    return loaded;
}

// --- CSV reports ---------------------------------------------------------------

namespace {

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

} // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<train::EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out << "epoch,loss,accuracy\n";
    for (const auto& row : metrics) {
        out << row.epoch << "," << format_double(row.loss) << ","
            << (row.accuracy ? format_double(*row.accuracy) : "") << "\n";
    }
    if (!out) throw IoError("write failure: " + path.string());
}

void write_attribution_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& source_names,
                           const std::vector<AttributionRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out << "id";
    for (const auto& name : source_names) out << ",dist_" << name;
    out << ",threshold,verdict,margin\n";
    for (const auto& row : rows) {
        out << row.id;
        for (const double d : row.result.profile.mean_distance) out << "," << format_double(d);
        out << "," << format_double(row.result.threshold) << ","
            << (row.result.verdict.is_known() ? row.result.verdict.name : "Unknown") << ","
            << format_double(row.result.margin) << "\n";
    }
    if (!out) throw IoError("write failure: " + path.string());
}

void write_sweep_csv(const std::filesystem::path& path, const std::string& x_column,
                     const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    out << x_column << ",known_accuracy,unknown_accuracy,macro_f1\n";
    for (const auto& row : rows) {
        if (row.tag.empty()) {
            out << format_double(row.x);
        } else {
            out << row.tag;
        }
        out << "," << format_double(row.known_accuracy) << ","
            << format_double(row.unknown_accuracy) << "," << format_double(row.macro_f1) << "\n";
    }
    if (!out) throw IoError("write failure: " + path.string());
}

void render_sweep_pgm(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    constexpr int kWidth = 256;
    constexpr int kHeight = 160;
    Eigen::MatrixXd canvas = Eigen::MatrixXd::Ones(kHeight, kWidth);
    if (rows.size() >= 2) {
        auto draw = [&](double shade, auto accessor) {
            for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
                const double x0 = static_cast<double>(i) / (rows.size() - 1) * (kWidth - 1);
                const double x1 = static_cast<double>(i + 1) / (rows.size() - 1) * (kWidth - 1);
                const double y0 = (1.0 - std::clamp(accessor(rows[i]), 0.0, 1.0)) * (kHeight - 1);
                const double y1 =
                    (1.0 - std::clamp(accessor(rows[i + 1]), 0.0, 1.0)) * (kHeight - 1);
                const int steps = kWidth;
                for (int s = 0; s <= steps; ++s) {
                    const double t = static_cast<double>(s) / steps;
                    const int px = static_cast<int>(x0 + t * (x1 - x0));
                    const int py = static_cast<int>(y0 + t * (y1 - y0));
                    canvas(std::clamp(py, 0, kHeight - 1), std::clamp(px, 0, kWidth - 1)) = shade;
                }
            }
        };
        draw(0.0, [](const SweepRow& r) { return r.known_accuracy; });
        draw(0.5, [](const SweepRow& r) { return r.unknown_accuracy; });
    }
    explain::write_pgm(canvas, path);
}

// --- perturbations ---------------------------------------------------------------

const std::vector<std::pair<Perturbation, std::string>>& perturbation_names() {
    static const std::vector<std::pair<Perturbation, std::string>> names = {
        {Perturbation::none, "none"},
        {Perturbation::translate_small, "translate_small"},
        {Perturbation::translate_large, "translate_large"},
        {Perturbation::jitter, "jitter"},
        {Perturbation::rotate, "rotate"},
        {Perturbation::combined, "combined"},
    };
    return names;
}

Perturbation parse_perturbation(const std::string& name) {
    for (const auto& [kind, text] : perturbation_names()) {
        if (text == name) return kind;
    }
    throw ConfigError("unknown perturbation '" + name + "'");
}

Dataset perturb_dataset(const Dataset& dataset, Perturbation kind, std::uint64_t seed) {
    if (kind == Perturbation::none) return dataset;
    Dataset out;
    out.reserve(dataset.size());
    constexpr double kTwoPi = 6.283185307179586;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& cloud = dataset[i];
        rng::Xoshiro256 gen(rng::derive(seed, 0x70657274, static_cast<std::uint64_t>(kind), i));
        AugmentSpec spec;
        spec.rng_seed = gen.next_u64();
        const bool translate_small = kind == Perturbation::translate_small ||
                                     kind == Perturbation::combined;
        if (translate_small) {
            spec.translation = {gen.uniform(-0.05, 0.05), gen.uniform(-0.05, 0.05),
                                gen.uniform(-0.05, 0.05)};
        }
        if (kind == Perturbation::translate_large) {
            // ten cloud radii, far outside the training distribution
            double direction[3] = {gen.normal(), gen.normal(), gen.normal()};
            const double norm = std::sqrt(direction[0] * direction[0] +
                                          direction[1] * direction[1] +
                                          direction[2] * direction[2]);
            const double scale = 10.0 * cloud.radius() / std::max(norm, 1e-12);
            spec.translation = {direction[0] * scale, direction[1] * scale,
                                direction[2] * scale};
        }
        if (kind == Perturbation::jitter || kind == Perturbation::combined) {
            spec.jitter_sigma = 0.01;
        }
        if (kind == Perturbation::rotate || kind == Perturbation::combined) {
            spec.rotate_z = true;
            spec.angle_min = 0.0;
            spec.angle_max = kTwoPi;
        }
        out.push_back(augment(cloud, spec));
    }
    return out;
}

// --- evaluation helpers ------------------------------------------------------------

attribution::EvalReport evaluate_assignments(const attribution::EmbeddedDataset& samples,
                                             const attribution::AnchorSet& anchors,
                                             const attribution::ThresholdPolicy& policy) {
    std::vector<SourceLabel> verdicts;
    std::vector<SourceLabel> truth;
    verdicts.reserve(samples.size());
    truth.reserve(samples.size());
    for (const auto& sample : samples) {
        verdicts.push_back(attribution::assign(sample.embedding, anchors, policy).verdict);
        truth.push_back(sample.label);
    }
    return attribution::evaluate(verdicts, truth);
}

} // namespace fakepcd::pipeline
