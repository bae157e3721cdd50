#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fakepcd/attribution.hpp"
#include "fakepcd/explain.hpp"
#include "fakepcd/nnet.hpp"
#include "fakepcd/pcd_io.hpp"
#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/pipeline.hpp"
#include "fakepcd/simsource.hpp"
#include "fakepcd/train.hpp"

namespace py = pybind11;
using namespace fakepcd;

namespace {

PointCloud cloud_from_numpy(const py::array_t<double>& array) {
    const auto view = array.unchecked<2>();
    if (view.shape(1) != 3) throw std::invalid_argument("expected an (n, 3) array");
    PointCloud cloud;
    cloud.points.reserve(view.shape(0));
    for (py::ssize_t i = 0; i < view.shape(0); ++i) {
        cloud.points.push_back({view(i, 0), view(i, 1), view(i, 2)});
    }
    cloud.validate();
    return cloud;
}

py::array_t<double> cloud_to_numpy(const PointCloud& cloud) {
    py::array_t<double> out({static_cast<py::ssize_t>(cloud.size()), py::ssize_t(3)});
    auto view = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        view(i, 0) = cloud.points[i].x;
        view(i, 1) = cloud.points[i].y;
        view(i, 2) = cloud.points[i].z;
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Point cloud source attribution: encoders, contrastive training, "
              "threshold-based assignment, fingerprints";

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // --- core types ---
    py::class_<SourceLabel>(m, "SourceLabel")
        .def_static("known", &SourceLabel::known, py::arg("index"), py::arg("name"))
        .def_static("unknown", &SourceLabel::unknown, py::arg("name") = "")
        .def_property_readonly("is_known", &SourceLabel::is_known)
        .def_readonly("index", &SourceLabel::index)
        .def_readonly("name", &SourceLabel::name)
        .def("__eq__", [](const SourceLabel& a, const SourceLabel& b) { return a == b; })
        .def("__repr__", [](const SourceLabel& label) {
            return label.is_known()
                       ? "SourceLabel.known(" + std::to_string(label.index) + ", '" + label.name +
                             "')"
                       : "SourceLabel.unknown('" + label.name + "')";
        });

    py::class_<PointCloud>(m, "PointCloud")
        .def(py::init([](const py::array_t<double>& points) { return cloud_from_numpy(points); }),
             py::arg("points"))
        .def_property_readonly("points", &cloud_to_numpy)
        .def_property(
            "source", [](const PointCloud& c) { return c.source; },
            [](PointCloud& c, std::optional<SourceLabel> label) { c.source = std::move(label); })
        .def_property(
            "shape_tag", [](const PointCloud& c) { return c.shape_tag; },
            [](PointCloud& c, std::optional<std::string> tag) { c.shape_tag = std::move(tag); })
        .def("__len__", &PointCloud::size)
        .def("radius", &PointCloud::radius);

    py::class_<AugmentSpec>(m, "AugmentSpec")
        .def(py::init([](double tx, double ty, double tz, double jitter_sigma, bool rotate_x,
                         bool rotate_y, bool rotate_z, double angle_min, double angle_max,
                         std::uint64_t seed) {
                 AugmentSpec spec;
                 spec.translation = {tx, ty, tz};
                 spec.jitter_sigma = jitter_sigma;
                 spec.rotate_x = rotate_x;
                 spec.rotate_y = rotate_y;
                 spec.rotate_z = rotate_z;
                 spec.angle_min = angle_min;
                 spec.angle_max = angle_max;
                 spec.rng_seed = seed;
                 return spec;
             }),
             py::arg("tx") = 0.0, py::arg("ty") = 0.0, py::arg("tz") = 0.0,
             py::arg("jitter_sigma") = 0.0, py::arg("rotate_x") = false,
             py::arg("rotate_y") = false, py::arg("rotate_z") = false, py::arg("angle_min") = 0.0,
             py::arg("angle_max") = 0.0, py::arg("seed") = 0);

    // --- pcd ops + io ---
    m.def("read_point_cloud", [](const std::filesystem::path& p) { return read_point_cloud(p); },
          py::arg("path"));
    m.def("write_point_cloud",
          [](const PointCloud& c, const std::filesystem::path& p) { write_point_cloud(c, p); },
          py::arg("cloud"), py::arg("path"));
    m.def("downsample", &downsample, py::arg("cloud"), py::arg("m"), py::arg("seed"));
    m.def("chamfer_distance", &chamfer_distance, py::arg("a"), py::arg("b"));
    m.def("augment", &augment, py::arg("cloud"), py::arg("spec"));
    m.def("normalize_unit_sphere", &normalize_unit_sphere, py::arg("cloud"));

    // --- model ---
    py::class_<nnet::ModelDims>(m, "ModelDims")
        .def_static("desk", &nnet::ModelDims::desk, py::arg("num_classes"))
        .def_static("paper", &nnet::ModelDims::paper, py::arg("num_classes"))
        .def_readwrite("encoder", &nnet::ModelDims::encoder)
        .def_readwrite("classifier", &nnet::ModelDims::classifier)
        .def_readwrite("projection", &nnet::ModelDims::projection);

    py::class_<nnet::Model>(m, "Model")
        .def_property_readonly("global_dim", &nnet::Model::global_dim)
        .def_property_readonly("num_classes", &nnet::Model::num_classes)
        .def_property_readonly("embedding_dim", &nnet::Model::embedding_dim)
        .def_property_readonly("stage", [](const nnet::Model& model) {
            return model.stage == nnet::Stage::closed ? "closed" : "open";
        });

    m.def("init_model", &nnet::init_model, py::arg("dims"), py::arg("seed"));
    m.def("save_checkpoint", &nnet::save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &nnet::load_checkpoint, py::arg("path"));
    m.def("reinit_for_open_stage", &nnet::reinit_for_open_stage, py::arg("closed"),
          py::arg("seed"));

    m.def(
        "encode",
        [](const nnet::Model& model, const PointCloud& cloud) {
            const auto trace = nnet::encode(model, cloud);
            py::dict out;
            out["global"] = trace.global;
            out["logits"] = trace.logits;
            out["embedding"] = trace.embedding;
            out["argmax"] = trace.argmax;
            return out;
        },
        py::arg("model"), py::arg("cloud"),
        "Forward pass; returns global feature, logits, unit embedding and the "
        "per-channel argmax points");

    // --- training ---
    py::class_<train::TrainConfig>(m, "TrainConfig")
        .def_static("desk_closed", &train::TrainConfig::desk_closed)
        .def_static("desk_open", &train::TrainConfig::desk_open)
        .def_static("paper_closed", &train::TrainConfig::paper_closed)
        .def_static("paper_open", &train::TrainConfig::paper_open)
        .def_readwrite("epochs", &train::TrainConfig::epochs)
        .def_readwrite("batch_size", &train::TrainConfig::batch_size)
        .def_readwrite("temperature", &train::TrainConfig::temperature)
        .def_readwrite("seed", &train::TrainConfig::seed)
        .def_property(
            "learning_rate", [](const train::TrainConfig& c) { return c.sgd.learning_rate; },
            [](train::TrainConfig& c, double v) { c.sgd.learning_rate = v; })
        .def_property(
            "momentum", [](const train::TrainConfig& c) { return c.sgd.momentum; },
            [](train::TrainConfig& c, double v) { c.sgd.momentum = v; });

    m.def("cross_entropy_loss", &train::cross_entropy_loss, py::arg("logits"), py::arg("label"));
    m.def(
        "supcon_loss",
        [](const Eigen::MatrixXd& embeddings, const std::vector<int>& labels, double temperature) {
            const auto result = train::supcon_loss(embeddings, labels, temperature);
            return py::make_tuple(result.loss, result.embedding_grads);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("temperature") = 0.07);

    auto train_metrics = [](const train::TrainResult& result) {
        py::list rows;
        for (const auto& row : result.metrics) {
            py::dict entry;
            entry["epoch"] = row.epoch;
            entry["loss"] = row.loss;
            entry["accuracy"] = row.accuracy;
            rows.append(entry);
        }
        return rows;
    };
    m.def(
        "train_closed_world",
        [train_metrics](const Dataset& dataset, const nnet::Model& model,
                        const train::TrainConfig& config) {
            auto result = train::train_closed_world(dataset, model, config);
            return py::make_tuple(std::move(result.model), train_metrics(result));
        },
        py::arg("dataset"), py::arg("model"), py::arg("config"));
    m.def(
        "train_open_world",
        [train_metrics](const Dataset& dataset, const nnet::Model& model,
                        const train::TrainConfig& config) {
            auto result = train::train_open_world(dataset, model, config);
            return py::make_tuple(std::move(result.model), train_metrics(result));
        },
        py::arg("dataset"), py::arg("model"), py::arg("config"));

    // --- attribution ---
    py::class_<attribution::AnchorSet>(m, "AnchorSet")
        .def_property_readonly("source_names",
                               [](const attribution::AnchorSet& a) { return a.source_names; })
        .def_property_readonly("anchors_per_source",
                               [](const attribution::AnchorSet& a) { return a.anchors_per_source; })
        .def_property_readonly("intra", [](const attribution::AnchorSet& a) { return a.intra; })
        .def_property_readonly("centroids",
                               [](const attribution::AnchorSet& a) { return a.centroids; });

    py::class_<attribution::ThresholdPolicy>(m, "ThresholdPolicy")
        .def_readonly("percentile", &attribution::ThresholdPolicy::percentile)
        .def_readonly("threshold", &attribution::ThresholdPolicy::threshold);

    py::class_<attribution::AttributionResult>(m, "AttributionResult")
        .def_property_readonly(
            "distances",
            [](const attribution::AttributionResult& r) { return r.profile.mean_distance; })
        .def_readonly("threshold", &attribution::AttributionResult::threshold)
        .def_readonly("verdict", &attribution::AttributionResult::verdict)
        .def_readonly("margin", &attribution::AttributionResult::margin);

    m.def(
        "embed_dataset",
        [](const nnet::Model& model, const Dataset& dataset) {
            const auto embedded = pipeline::embed_dataset(model, dataset);
            py::list out;
            for (const auto& sample : embedded) {
                py::dict entry;
                entry["embedding"] = sample.embedding;
                entry["label"] = sample.label;
                entry["shape"] = sample.shape;
                out.append(entry);
            }
            return out;
        },
        py::arg("model"), py::arg("dataset"));
    m.def(
        "build_anchor_set",
        [](const nnet::Model& model, const Dataset& dataset, int anchors_per_source,
           std::uint64_t seed) {
            return attribution::build_anchor_set(pipeline::embed_dataset(model, dataset),
                                                 anchors_per_source, seed);
        },
        py::arg("model"), py::arg("dataset"), py::arg("anchors_per_source"), py::arg("seed"));
    m.def(
        "mean_source_distance",
        [](const Eigen::VectorXd& query, const attribution::AnchorSet& anchors) {
            return attribution::mean_source_distance(query, anchors).mean_distance;
        },
        py::arg("query"), py::arg("anchors"));
    m.def(
        "percentile",
        [](const std::vector<double>& values, double p) {
            return attribution::percentile(values, p);
        },
        py::arg("values"), py::arg("p"));
    m.def("select_threshold", &attribution::select_threshold, py::arg("anchors"), py::arg("p"));
    m.def("assign", &attribution::assign, py::arg("query"), py::arg("anchors"), py::arg("policy"));
    m.def(
        "split_unknowns",
        [](const Eigen::MatrixXd& embeddings, int components, std::uint64_t seed) {
            const auto result = attribution::split_unknowns(embeddings, components, seed);
            py::dict out;
            out["assignments"] = result.assignments;
            out["log_likelihoods"] = result.log_likelihoods;
            out["means"] = result.means;
            out["regularized"] = result.regularized;
            return out;
        },
        py::arg("embeddings"), py::arg("components") = 2, py::arg("seed") = 0);
    m.def(
        "evaluate",
        [](const std::vector<SourceLabel>& verdicts, const std::vector<SourceLabel>& truth) {
            const auto report = attribution::evaluate(verdicts, truth);
            py::dict out;
            out["known_accuracy"] = report.known_accuracy;
            out["unknown_accuracy"] = report.unknown_accuracy;
            out["macro_f1"] = report.macro_f1;
            return out;
        },
        py::arg("verdicts"), py::arg("ground_truth"));
    m.def("save_anchor_set", &attribution::save_anchor_set, py::arg("anchors"), py::arg("path"));
    m.def("load_anchor_set", &attribution::load_anchor_set, py::arg("path"));

    // --- explain ---
    m.def(
        "critical_points",
        [](const nnet::Model& model, const PointCloud& cloud) {
            return explain::critical_points(model, cloud).indices;
        },
        py::arg("model"), py::arg("cloud"));
    m.def(
        "depth_project",
        [](const PointCloud& cloud, int width, int height, bool fixed_bounds) {
            const auto image = explain::depth_project(
                cloud.points, explain::Plane::xy, width, height,
                fixed_bounds ? explain::BoundsMode::fixed : explain::BoundsMode::automatic);
            return image.cells;
        },
        py::arg("cloud"), py::arg("width") = 64, py::arg("height") = 64,
        py::arg("fixed_bounds") = true);
    m.def(
        "build_fingerprint",
        [](const nnet::Model& model, const Dataset& clouds, int members, int resolution,
           std::uint64_t seed) {
            return explain::build_fingerprint(model, clouds, members, resolution, resolution, seed)
                .cells;
        },
        py::arg("model"), py::arg("clouds"), py::arg("members") = 100, py::arg("resolution") = 64,
        py::arg("seed") = 0);
    m.def("match_similar", &explain::match_similar, py::arg("query"), py::arg("candidates"));
    m.def("write_pgm", &explain::write_pgm, py::arg("cells"), py::arg("path"));

    // --- simulator ---
    py::class_<simsource::SimSourceSpec>(m, "SimSourceSpec")
        .def_readonly("name", &simsource::SimSourceSpec::name)
        .def_readonly("seed", &simsource::SimSourceSpec::seed);
    m.def("default_sources", &simsource::default_sources);
    m.def("default_shapes", &simsource::default_shapes);
    m.def(
        "sample_cloud",
        [](const std::string& source, const std::string& shape, int n, std::uint64_t seed) {
            return simsource::sample_cloud(
                simsource::find_source(simsource::default_sources(), source), shape, n, seed);
        },
        py::arg("source"), py::arg("shape"), py::arg("n"), py::arg("seed"));
    py::class_<simsource::ScenarioConfig>(m, "ScenarioConfig")
        .def(py::init<>())
        .def_readwrite("known_sources", &simsource::ScenarioConfig::known_sources)
        .def_readwrite("unknown_sources", &simsource::ScenarioConfig::unknown_sources)
        .def_readwrite("seen_shapes", &simsource::ScenarioConfig::seen_shapes)
        .def_readwrite("unseen_shapes", &simsource::ScenarioConfig::unseen_shapes)
        .def_readwrite("clouds_per_source_shape",
                       &simsource::ScenarioConfig::clouds_per_source_shape)
        .def_readwrite("points_per_cloud", &simsource::ScenarioConfig::points_per_cloud)
        .def_readwrite("train_ratio", &simsource::ScenarioConfig::train_ratio)
        .def_readwrite("validation_target", &simsource::ScenarioConfig::validation_target)
        .def_readwrite("seed", &simsource::ScenarioConfig::seed);
    py::class_<simsource::Scenario>(m, "Scenario")
        .def_readonly("train", &simsource::Scenario::train)
        .def_readonly("validation", &simsource::Scenario::validation)
        .def_readonly("test", &simsource::Scenario::test);
    m.def("build_scenario",
          [](const simsource::ScenarioConfig& config) { return simsource::build_scenario(config); },
          py::arg("config"));

    m.attr("__version__") = pipeline::kToolVersion;
}
