#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

namespace {

using fakepcd::cli::AblateOptions;
using fakepcd::cli::AttributeOptions;
using fakepcd::cli::CommandContext;
using fakepcd::cli::ExplainOptions;
using fakepcd::cli::TrainOptions;

int dispatch(int argc, char** argv) {
    CLI::App app{"Point cloud source attribution: simulate, train, attribute, explain, ablate"};
    app.require_subcommand(1);

    CommandContext simulate_ctx;
    simulate_ctx.name = "simulate";
    simulate_ctx.seed_key = "scenario.seed";
    auto* simulate = app.add_subcommand("simulate", "Generate a simulated source dataset");
    fakepcd::cli::register_seed_config_out(simulate, simulate_ctx);

    CommandContext train_ctx;
    train_ctx.name = "train";
    train_ctx.seed_key = "train.seed";
    TrainOptions train_options;
    auto* train = app.add_subcommand("train", "Close-world or open-world pre-training");
    train->add_option("--stage", train_options.stage, "closed or open")->required();
    train->add_option("--data", train_options.data_dir, "Dataset directory from `simulate`")
        ->required();
    train->add_option("--init-from", train_options.init_from,
                      "Closed-world checkpoint to initialize the open stage");
    fakepcd::cli::register_seed_config_out(train, train_ctx);

    CommandContext attribute_ctx;
    attribute_ctx.name = "attribute";
    attribute_ctx.seed_key = "attribute.seed";
    AttributeOptions attribute_options;
    auto* attribute = app.add_subcommand("attribute", "Threshold-based source assignment");
    attribute->add_option("--checkpoint", attribute_options.checkpoint, "Trained model checkpoint")
        ->required();
    attribute->add_option("--data", attribute_options.data_dir, "Dataset directory");
    attribute->add_option("--anchors", attribute_options.anchors_file, "Saved anchor set");
    attribute->add_option("--build-anchors", attribute_options.build_anchors,
                          "Build an anchor set with N anchors per source");
    attribute->add_option("--percentile", attribute_options.percentile,
                          "P-percentile for the distance threshold, in (0, 100]");
    attribute->add_flag("--tune", attribute_options.tune,
                        "Tune the percentile on the validation split");
    attribute->add_option("--query", attribute_options.queries,
                          "Attribute these cloud files instead of the test split");
    fakepcd::cli::register_seed_config_out(attribute, attribute_ctx);

    CommandContext explain_ctx;
    explain_ctx.name = "explain";
    explain_ctx.seed_key = "explain.seed";
    ExplainOptions explain_options;
    auto* explain = app.add_subcommand("explain", "Critical points, fingerprints, nearest match");
    explain->add_option("--checkpoint", explain_options.checkpoint, "Trained model checkpoint")
        ->required();
    explain->add_option("--data", explain_options.data_dir, "Dataset directory (fingerprints)");
    explain->add_option("--critical", explain_options.critical,
                        "Write critical point indices for these cloud files");
    explain->add_option("--fingerprint", explain_options.fingerprint_members,
                        "Build per-source fingerprints from M critical point sets");
    explain->add_option("--match", explain_options.match_query,
                        "Find the Chamfer-nearest candidate for this cloud");
    explain->add_option("--candidates", explain_options.candidates, "Candidate cloud files");
    explain->add_option("--resolution", explain_options.resolution,
                        "Depth image resolution (square)");
    explain->add_flag("--csv", explain_options.dump_csv, "Also dump raw float cells as CSV");
    fakepcd::cli::register_seed_config_out(explain, explain_ctx);

    CommandContext ablate_ctx;
    ablate_ctx.name = "ablate";
    ablate_ctx.seed_key = "train.seed";
    AblateOptions ablate_options;
    auto* ablate = app.add_subcommand("ablate", "Threshold/dim/pretrain/perturbation experiments");
    ablate->add_option("--which", ablate_options.which,
                       "threshold-sweep, dim-sweep, pretrain, or perturb")
        ->required();
    ablate->add_option("--data", ablate_options.data_dir, "Dataset directory")->required();
    ablate->add_option("--checkpoint", ablate_options.checkpoint, "Closed-stage checkpoint");
    ablate->add_option("--open-checkpoint", ablate_options.open_checkpoint,
                       "Open-stage checkpoint (threshold-sweep and perturb)");
    ablate->add_flag("--plot", ablate_options.plot, "Render the sweep as a PGM line plot");
    fakepcd::cli::register_seed_config_out(ablate, ablate_ctx);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    if (simulate->parsed()) return fakepcd::cli::run_simulate(simulate_ctx);
    if (train->parsed()) return fakepcd::cli::run_train(train_ctx, train_options);
    if (attribute->parsed()) return fakepcd::cli::run_attribute(attribute_ctx, attribute_options);
    if (explain->parsed()) return fakepcd::cli::run_explain(explain_ctx, explain_options);
    if (ablate->parsed()) return fakepcd::cli::run_ablate(ablate_ctx, ablate_options);
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const fakepcd::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const fakepcd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fakepcd::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const fakepcd::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const fakepcd::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
