#include <cstdio>
#include <iostream>

#include "commands.hpp"
#include "fakepcd/pcd_io.hpp"

namespace fakepcd::cli {

int run_attribute(CommandContext& ctx, const AttributeOptions& options) {
    ctx.resolve_settings();
    if (options.anchors_file.empty() == (options.build_anchors == 0))
        throw ConfigError("attribute: pass exactly one of --anchors or --build-anchors N");
    if (options.tune && options.percentile != 0.0)
        throw ConfigError("attribute: --percentile and --tune are mutually exclusive");
    if (!options.tune && options.percentile == 0.0)
        throw ConfigError("attribute: pass --percentile P or --tune");
    if (!options.tune && !(options.percentile > 0.0 && options.percentile <= 100.0))
        throw ConfigError("attribute: --percentile must be in (0, 100]");

    const auto model = nnet::load_checkpoint(options.checkpoint);
    ctx.inputs.push_back(options.checkpoint);
    const std::uint64_t seed = ctx.settings.get_seed("attribute.seed", 7);

    std::optional<pipeline::LoadedDataset> data;
    const bool needs_data = options.build_anchors > 0 || options.tune || options.queries.empty();
    if (needs_data) {
        if (options.data_dir.empty())
            throw ConfigError("attribute: --data is required to build anchors, tune, or "
                              "attribute the test split");
        data = pipeline::load_dataset(options.data_dir);
        ctx.inputs.push_back(options.data_dir);
    }

    attribution::AnchorSet anchors;
    if (!options.anchors_file.empty()) {
        anchors = attribution::load_anchor_set(options.anchors_file);
        ctx.inputs.push_back(options.anchors_file);
        if (anchors.dim() != model.embedding_dim())
            throw ConfigError("anchor embeddings have dim " + std::to_string(anchors.dim()) +
                              " but the checkpoint produces dim " +
                              std::to_string(model.embedding_dim()));
    } else {
        const auto train_embedded = pipeline::embed_dataset(model, data->train);
        anchors = attribution::build_anchor_set(train_embedded, options.build_anchors, seed);
    }

    attribution::ThresholdPolicy policy;
    if (options.tune) {
        if (!data || data->validation.empty())
            throw ConfigError("attribute: --tune needs a dataset with a validation split");
        const auto grid = ctx.settings.get_list("attribute.grid", {"70", "75", "80", "85", "90", "95"});
        std::vector<double> grid_values;
        for (const auto& item : grid) grid_values.push_back(std::stod(item));
        const auto validation = pipeline::embed_dataset(model, data->validation);
        const double tuned = attribution::tune_percentile(validation, anchors, grid_values);
        policy = attribution::select_threshold(anchors, tuned);
        ctx.settings.get("attribute.tuned_percentile", std::to_string(tuned));
        std::cout << "attribute: tuned percentile P=" << tuned << " (threshold "
                  << policy.threshold << ")\n";
    } else {
        policy = attribution::select_threshold(anchors, options.percentile);
    }

    std::vector<pipeline::AttributionRow> rows;
    std::vector<SourceLabel> truth;
    bool have_truth = false;
    if (!options.queries.empty()) {
        for (const auto& file : options.queries) {
            const auto cloud = read_point_cloud(file);
            const auto trace = nnet::encode(model, cloud);
            rows.push_back({std::filesystem::path(file).filename().string(),
                            attribution::assign(trace.embedding, anchors, policy)});
            ctx.inputs.push_back(file);
        }
    } else {
        have_truth = true;
        const auto embedded = pipeline::embed_dataset(model, data->test);
        for (std::size_t i = 0; i < embedded.size(); ++i) {
            char id[96];
            std::snprintf(id, sizeof(id), "test_%04zu_%s_%s", i,
                          embedded[i].label.name.c_str(), embedded[i].shape.c_str());
            rows.push_back({id, attribution::assign(embedded[i].embedding, anchors, policy)});
            truth.push_back(embedded[i].label);
        }
    }

    std::filesystem::create_directories(ctx.out_dir);
    const auto report_path = ctx.out_dir / "report.csv";
    pipeline::write_attribution_csv(report_path, anchors.source_names, rows);
    ctx.outputs.push_back(report_path.string());
    if (options.build_anchors > 0) {
        const auto anchors_path = ctx.out_dir / "anchors.fpcd";
        attribution::save_anchor_set(anchors, anchors_path);
        ctx.outputs.push_back(anchors_path.string());
    }

    if (have_truth) {
        std::vector<SourceLabel> verdicts;
        verdicts.reserve(rows.size());
        for (const auto& row : rows) verdicts.push_back(row.result.verdict);
        const auto report = attribution::evaluate(verdicts, truth);
        std::cout << "attribute: ";
        if (report.known_accuracy)
            std::cout << "known accuracy " << *report.known_accuracy << " (" << report.known_total
                      << " clouds) ";
        if (report.unknown_accuracy)
            std::cout << "unknown accuracy " << *report.unknown_accuracy << " ("
                      << report.unknown_total << " clouds) ";
        std::cout << "macro F1 " << report.macro_f1 << "\n";
    }

    ctx.add_flag_pair("--checkpoint", options.checkpoint);
    if (!options.data_dir.empty()) ctx.add_flag_pair("--data", options.data_dir);
    if (!options.anchors_file.empty()) ctx.add_flag_pair("--anchors", options.anchors_file);
    if (options.build_anchors > 0)
        ctx.add_flag_pair("--build-anchors", std::to_string(options.build_anchors));
    if (options.tune) {
        ctx.command_flags.push_back("--tune");
    } else {
        ctx.add_flag_pair("--percentile", std::to_string(options.percentile));
    }
    for (const auto& file : options.queries) ctx.add_flag_pair("--query", file);
    ctx.settings.reject_unconsumed();
    ctx.write_run_manifest();
    return 0;
}

} // namespace fakepcd::cli
