#include <iostream>

#include "commands.hpp"
#include "fakepcd/train.hpp"

namespace fakepcd::cli {

namespace {

// Shared trained state for the ablations that evaluate a single pipeline.
struct OpenPipeline {
    nnet::Model open_model;
    attribution::AnchorSet anchors;
    double tuned_percentile = 0.0;
    attribution::ThresholdPolicy policy;
};

train::TrainConfig ablate_train_config(const config::Settings& settings, bool open_stage) {
    const std::string preset = settings.get("train.preset", "desk");
    train::TrainConfig cfg;
    if (preset == "paper") {
        cfg = open_stage ? train::TrainConfig::paper_open() : train::TrainConfig::paper_closed();
    } else {
        cfg = open_stage ? train::TrainConfig::desk_open() : train::TrainConfig::desk_closed();
    }
    cfg.epochs = static_cast<int>(
        settings.get_int(open_stage ? "train.open_epochs" : "train.closed_epochs", cfg.epochs));
    cfg.seed = settings.get_seed("train.seed", 1);
    return cfg;
}

nnet::Model closed_model_for(const CommandContext& ctx, const AblateOptions& options,
                             const pipeline::LoadedDataset& data,
                             const train::TrainConfig& closed_cfg) {
    if (!options.checkpoint.empty()) return nnet::load_checkpoint(options.checkpoint);
    const int num_classes = static_cast<int>(data.known_sources.size());
    const std::string preset = ctx.settings.get("model.preset", "desk");
    const auto dims = preset == "paper" ? nnet::ModelDims::paper(num_classes)
                                        : nnet::ModelDims::desk(num_classes);
    auto result =
        train::train_closed_world(data.train, nnet::init_model(dims, closed_cfg.seed), closed_cfg);
    return std::move(result.model);
}

OpenPipeline open_pipeline_for(const CommandContext& ctx, const AblateOptions& options,
                               const pipeline::LoadedDataset& data) {
    OpenPipeline pipe;
    const auto open_cfg = ablate_train_config(ctx.settings, true);
    if (!options.open_checkpoint.empty()) {
        pipe.open_model = nnet::load_checkpoint(options.open_checkpoint);
    } else {
        const auto closed_cfg = ablate_train_config(ctx.settings, false);
        const auto closed = closed_model_for(ctx, options, data, closed_cfg);
        pipe.open_model =
            train::train_open_world(data.train, nnet::reinit_for_open_stage(closed, open_cfg.seed),
                                    open_cfg)
                .model;
    }
    const auto anchors_per_source = static_cast<int>(ctx.settings.get_int(
        "attribute.anchors_per_source",
        std::min<long long>(100, static_cast<long long>(data.train.size()) /
                                     std::max<std::size_t>(data.known_sources.size(), 1))));
    const auto train_embedded = pipeline::embed_dataset(pipe.open_model, data.train);
    pipe.anchors = attribution::build_anchor_set(
        train_embedded, anchors_per_source, ctx.settings.get_seed("attribute.seed", 7));

    const auto grid_text =
        ctx.settings.get_list("attribute.grid", {"70", "75", "80", "85", "90", "95"});
    std::vector<double> grid;
    for (const auto& item : grid_text) grid.push_back(std::stod(item));
    const auto validation = pipeline::embed_dataset(pipe.open_model, data.validation);
    pipe.tuned_percentile = attribution::tune_percentile(validation, pipe.anchors, grid);
    pipe.policy = attribution::select_threshold(pipe.anchors, pipe.tuned_percentile);
    return pipe;
}

pipeline::SweepRow eval_row(const attribution::EmbeddedDataset& test,
                            const attribution::AnchorSet& anchors,
                            const attribution::ThresholdPolicy& policy) {
    const auto report = pipeline::evaluate_assignments(test, anchors, policy);
    pipeline::SweepRow row;
    row.known_accuracy = report.known_accuracy.value_or(0.0);
    row.unknown_accuracy = report.unknown_accuracy.value_or(0.0);
    row.macro_f1 = report.macro_f1;
    return row;
}

std::vector<pipeline::SweepRow> ablate_threshold_sweep(const CommandContext& ctx,
                                                       const OpenPipeline& pipe,
                                                       const pipeline::LoadedDataset& data) {
    const auto grid_text = ctx.settings.get_list(
        "ablate.grid", {"50", "55", "60", "65", "70", "75", "80", "85", "90", "95", "100"});
    const auto test = pipeline::embed_dataset(pipe.open_model, data.test);
    std::vector<pipeline::SweepRow> rows;
    for (const auto& item : grid_text) {
        const double p = std::stod(item);
        auto row = eval_row(test, pipe.anchors, attribution::select_threshold(pipe.anchors, p));
        row.x = p;
        rows.push_back(row);
    }
    return rows;
}

std::vector<pipeline::SweepRow> ablate_dim_sweep(CommandContext& ctx, const AblateOptions& options,
                                                 const pipeline::LoadedDataset& data) {
    const auto dims_text =
        ctx.settings.get_list("ablate.dims", {"32", "64", "128", "256", "512"});
    const auto closed_cfg = ablate_train_config(ctx.settings, false);
    const auto open_cfg = ablate_train_config(ctx.settings, true);
    const auto closed = closed_model_for(ctx, options, data, closed_cfg);
    const auto grid_text =
        ctx.settings.get_list("attribute.grid", {"70", "75", "80", "85", "90", "95"});
    std::vector<double> grid;
    for (const auto& item : grid_text) grid.push_back(std::stod(item));
    const auto anchors_per_source = static_cast<int>(ctx.settings.get_int(
        "attribute.anchors_per_source",
        std::min<long long>(100, static_cast<long long>(data.train.size()) /
                                     std::max<std::size_t>(data.known_sources.size(), 1))));
    const std::uint64_t anchor_seed = ctx.settings.get_seed("attribute.seed", 7);

    std::vector<pipeline::SweepRow> rows;
    for (const auto& item : dims_text) {
        const int d = static_cast<int>(std::stol(item));
        nnet::ModelDims dims = closed.dims();
        dims.projection.back() = d;
        nnet::Model model = nnet::init_model(dims, open_cfg.seed);
        model.encoder = closed.encoder;
        model.stage = nnet::Stage::open;
        const auto trained = train::train_open_world(data.train, model, open_cfg);

        const auto train_embedded = pipeline::embed_dataset(trained.model, data.train);
        const auto anchors =
            attribution::build_anchor_set(train_embedded, anchors_per_source, anchor_seed);
        const auto validation = pipeline::embed_dataset(trained.model, data.validation);
        const double tuned = attribution::tune_percentile(validation, anchors, grid);
        auto row = eval_row(pipeline::embed_dataset(trained.model, data.test), anchors,
                            attribution::select_threshold(anchors, tuned));
        row.x = d;
        rows.push_back(row);
        std::cout << "ablate dim-sweep: d=" << d << " known " << row.known_accuracy << " unknown "
                  << row.unknown_accuracy << "\n";
    }
    return rows;
}

std::vector<pipeline::SweepRow> ablate_pretrain(CommandContext& ctx, const AblateOptions& options,
                                                const pipeline::LoadedDataset& data) {
    const auto closed_cfg = ablate_train_config(ctx.settings, false);
    const auto open_cfg = ablate_train_config(ctx.settings, true);
    const auto closed = closed_model_for(ctx, options, data, closed_cfg);
    const auto anchors_per_source = static_cast<int>(ctx.settings.get_int(
        "attribute.anchors_per_source",
        std::min<long long>(100, static_cast<long long>(data.train.size()) /
                                     std::max<std::size_t>(data.known_sources.size(), 1))));
    const std::uint64_t anchor_seed = ctx.settings.get_seed("attribute.seed", 7);
    const auto grid_text =
        ctx.settings.get_list("attribute.grid", {"70", "75", "80", "85", "90", "95"});
    std::vector<double> grid;
    for (const auto& item : grid_text) grid.push_back(std::stod(item));

    // Both runs share the seed; P is tuned on the pretrained run and reused
    // so the comparison isolates the initialization.
    std::vector<pipeline::SweepRow> rows;
    double shared_percentile = 0.0;
    for (const bool pretrained : {true, false}) {
        nnet::Model model;
        if (pretrained) {
            model = nnet::reinit_for_open_stage(closed, open_cfg.seed);
        } else {
            model = nnet::init_model(closed.dims(), open_cfg.seed);
            model.stage = nnet::Stage::open;
        }
        const auto trained = train::train_open_world(data.train, model, open_cfg);
        const auto train_embedded = pipeline::embed_dataset(trained.model, data.train);
        const auto anchors =
            attribution::build_anchor_set(train_embedded, anchors_per_source, anchor_seed);
        if (pretrained) {
            const auto validation = pipeline::embed_dataset(trained.model, data.validation);
            shared_percentile = attribution::tune_percentile(validation, anchors, grid);
        }
        auto row = eval_row(pipeline::embed_dataset(trained.model, data.test), anchors,
                            attribution::select_threshold(anchors, shared_percentile));
        row.tag = pretrained ? "pretrained" : "scratch";
        rows.push_back(row);
        std::cout << "ablate pretrain: " << row.tag << " known " << row.known_accuracy
                  << " unknown " << row.unknown_accuracy << "\n";
    }
    return rows;
}

std::vector<pipeline::SweepRow> ablate_perturb(CommandContext& ctx, const AblateOptions& options,
                                               const pipeline::LoadedDataset& data) {
    const auto pipe = open_pipeline_for(ctx, options, data);
    const std::uint64_t seed = ctx.settings.get_seed("ablate.perturb_seed", 13);
    std::vector<pipeline::SweepRow> rows;
    for (const auto& [kind, name] : pipeline::perturbation_names()) {
        const auto perturbed = pipeline::perturb_dataset(data.test, kind, seed);
        auto row = eval_row(pipeline::embed_dataset(pipe.open_model, perturbed), pipe.anchors,
                            pipe.policy);
        row.tag = name;
        rows.push_back(row);
        std::cout << "ablate perturb: " << name << " known " << row.known_accuracy << " unknown "
                  << row.unknown_accuracy << "\n";
    }
    return rows;
}

} // namespace

int run_ablate(CommandContext& ctx, const AblateOptions& options) {
    ctx.resolve_settings();
    if (options.data_dir.empty()) throw ConfigError("ablate: --data is required");
    const auto data = pipeline::load_dataset(options.data_dir);
    ctx.inputs.push_back(options.data_dir);
    std::filesystem::create_directories(ctx.out_dir);

    std::vector<pipeline::SweepRow> rows;
    std::string x_column;
    std::string csv_name;
    if (options.which == "threshold-sweep") {
        const auto pipe = open_pipeline_for(ctx, options, data);
        rows = ablate_threshold_sweep(ctx, pipe, data);
        x_column = "percentile";
        csv_name = "threshold_sweep.csv";
    } else if (options.which == "dim-sweep") {
        rows = ablate_dim_sweep(ctx, options, data);
        x_column = "dim";
        csv_name = "dim_sweep.csv";
    } else if (options.which == "pretrain") {
        rows = ablate_pretrain(ctx, options, data);
        x_column = "init";
        csv_name = "pretrain.csv";
    } else if (options.which == "perturb") {
        rows = ablate_perturb(ctx, options, data);
        x_column = "perturbation";
        csv_name = "perturb.csv";
    } else {
        throw ConfigError("unknown ablation '" + options.which +
                          "' (threshold-sweep, dim-sweep, pretrain, perturb)");
    }

    const auto csv_path = ctx.out_dir / csv_name;
    pipeline::write_sweep_csv(csv_path, x_column, rows);
    ctx.outputs.push_back(csv_path.string());
    if (options.plot) {
        const auto pgm_path = ctx.out_dir / (options.which + ".pgm");
        pipeline::render_sweep_pgm(pgm_path, rows);
        ctx.outputs.push_back(pgm_path.string());
    }

    ctx.add_flag_pair("--which", options.which);
    ctx.add_flag_pair("--data", options.data_dir);
    if (!options.checkpoint.empty()) ctx.add_flag_pair("--checkpoint", options.checkpoint);
    if (!options.open_checkpoint.empty())
        ctx.add_flag_pair("--open-checkpoint", options.open_checkpoint);
    if (options.plot) ctx.command_flags.push_back("--plot");
    ctx.settings.reject_unconsumed();
    ctx.write_run_manifest();
    std::cout << "ablate " << options.which << ": wrote " << csv_path.string() << "\n";
    return 0;
}

} // namespace fakepcd::cli
