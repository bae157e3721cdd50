#include <cstdio>
#include <fstream>
#include <iostream>

#include "commands.hpp"
#include "fakepcd/nnet.hpp"
#include "fakepcd/train.hpp"

namespace fakepcd::cli {

namespace {

train::TrainConfig train_config_from_settings(const config::Settings& settings, bool open_stage) {
    const std::string preset = settings.get("train.preset", "desk");
    train::TrainConfig cfg;
    if (preset == "desk") {
        cfg = open_stage ? train::TrainConfig::desk_open() : train::TrainConfig::desk_closed();
    } else if (preset == "paper") {
        cfg = open_stage ? train::TrainConfig::paper_open() : train::TrainConfig::paper_closed();
    } else {
        throw ConfigError("train.preset must be 'desk' or 'paper', got '" + preset + "'");
    }
    cfg.epochs = static_cast<int>(settings.get_int("train.epochs", cfg.epochs));
    cfg.batch_size = static_cast<int>(settings.get_int("train.batch_size", cfg.batch_size));
    cfg.sgd.learning_rate = settings.get_double("train.learning_rate", cfg.sgd.learning_rate);
    cfg.sgd.momentum = settings.get_double("train.momentum", cfg.sgd.momentum);
    cfg.temperature = settings.get_double("train.temperature", cfg.temperature);
    cfg.seed = settings.get_seed("train.seed", cfg.seed);
    const long long patience = settings.get_int(
        "train.patience", cfg.early_stop_patience ? *cfg.early_stop_patience : 0);
    cfg.early_stop_patience =
        patience > 0 ? std::optional<int>(static_cast<int>(patience)) : std::nullopt;

    cfg.augment.translation_max =
        settings.get_double("augment.translation_max", cfg.augment.translation_max);
    cfg.augment.jitter_sigma = settings.get_double("augment.jitter_sigma", cfg.augment.jitter_sigma);
    cfg.augment.rotate_x = settings.get_bool("augment.rotate_x", cfg.augment.rotate_x);
    cfg.augment.rotate_y = settings.get_bool("augment.rotate_y", cfg.augment.rotate_y);
    cfg.augment.rotate_z = settings.get_bool("augment.rotate_z", cfg.augment.rotate_z);
    cfg.augment.angle_min = settings.get_double("augment.angle_min", cfg.augment.angle_min);
    cfg.augment.angle_max = settings.get_double("augment.angle_max", cfg.augment.angle_max);
    return cfg;
}

nnet::ModelDims model_dims_from_settings(const config::Settings& settings, int num_classes) {
    const std::string preset = settings.get("model.preset", "desk");
    nnet::ModelDims dims;
    if (preset == "desk") {
        dims = nnet::ModelDims::desk(num_classes);
    } else if (preset == "paper") {
        dims = nnet::ModelDims::paper(num_classes);
    } else {
        throw ConfigError("model.preset must be 'desk' or 'paper', got '" + preset + "'");
    }
    const int embedding_dim = static_cast<int>(
        settings.get_int("model.embedding_dim", dims.projection.back()));
    dims.projection.back() = embedding_dim;
    return dims;
}

void write_config_snapshot(const config::Settings& settings, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    for (const auto& [key, value] : settings.resolved()) {
        out << key << " = " << value << "\n";
    }
}

} // namespace

int run_train(CommandContext& ctx, const TrainOptions& options) {
    ctx.resolve_settings();
    if (options.stage != "closed" && options.stage != "open")
        throw ConfigError("--stage must be 'closed' or 'open', got '" + options.stage + "'");
    const bool open_stage = options.stage == "open";
    if (!open_stage && !options.init_from.empty())
        throw ConfigError("--init-from only applies to --stage open");

    const auto cfg = train_config_from_settings(ctx.settings, open_stage);
    const auto checkpoint_every =
        static_cast<int>(ctx.settings.get_int("train.checkpoint_every", 0));

    const auto data = pipeline::load_dataset(options.data_dir);
    ctx.inputs.push_back(options.data_dir);
    if (data.train.empty()) throw ConfigError("dataset at " + options.data_dir + " has no train split");
    const int num_classes = static_cast<int>(data.known_sources.size());

    nnet::Model model;
    if (!options.init_from.empty()) {
        const auto closed = nnet::load_checkpoint(options.init_from);
        model = nnet::reinit_for_open_stage(closed, cfg.seed);
        ctx.inputs.push_back(options.init_from);
        ctx.settings.get("train.init_from", options.init_from); // recorded in the manifest
    } else {
        model = nnet::init_model(model_dims_from_settings(ctx.settings, num_classes), cfg.seed);
    }
    ctx.settings.reject_unconsumed();

    std::filesystem::create_directories(ctx.out_dir);
    std::ofstream metrics_csv(ctx.out_dir / "metrics.csv");
    if (!metrics_csv)
        throw IoError("cannot open file for writing: " + (ctx.out_dir / "metrics.csv").string());
    metrics_csv << "epoch,loss,accuracy\n";
    const auto on_epoch = [&](const train::EpochMetrics& row, const nnet::Model& snapshot) {
        char loss_text[40];
        std::snprintf(loss_text, sizeof(loss_text), "%.10g", row.loss);
        metrics_csv << row.epoch << "," << loss_text << ",";
        if (row.accuracy) {
            char acc_text[40];
            std::snprintf(acc_text, sizeof(acc_text), "%.10g", *row.accuracy);
            metrics_csv << acc_text;
        }
        metrics_csv << "\n" << std::flush;
        if (checkpoint_every > 0 && row.epoch > 0 && row.epoch % checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.fpcd", row.epoch);
            nnet::save_checkpoint(snapshot, ctx.out_dir / name);
        }
    };

    const auto result = open_stage ? train::train_open_world(data.train, model, cfg, on_epoch)
                                   : train::train_closed_world(data.train, model, cfg, on_epoch);

    const auto checkpoint_path = ctx.out_dir / "model.fpcd";
    nnet::save_checkpoint(result.model, checkpoint_path);
    write_config_snapshot(ctx.settings, ctx.out_dir / "config.cfg");
    ctx.add_flag_pair("--stage", options.stage);
    ctx.add_flag_pair("--data", options.data_dir);
    if (!options.init_from.empty()) ctx.add_flag_pair("--init-from", options.init_from);
    ctx.outputs.push_back(checkpoint_path.string());
    ctx.outputs.push_back((ctx.out_dir / "metrics.csv").string());
    ctx.write_run_manifest();

    const auto& last = result.metrics.back();
    std::cout << "train " << options.stage << ": " << result.metrics.size()
              << " epochs, final loss " << last.loss;
    if (last.accuracy) std::cout << ", final train accuracy " << *last.accuracy;
    std::cout << "\ncheckpoint: " << checkpoint_path.string() << "\n";
    return 0;
}

} // namespace fakepcd::cli
