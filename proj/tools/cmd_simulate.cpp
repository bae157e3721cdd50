#include <iostream>

#include "commands.hpp"

namespace fakepcd::cli {

namespace {

simsource::ScenarioConfig scenario_from_settings(const config::Settings& settings) {
    simsource::ScenarioConfig defaults;
    simsource::ScenarioConfig cfg;
    cfg.known_sources = settings.get_list("scenario.known_sources", defaults.known_sources);
    cfg.unknown_sources = settings.get_list("scenario.unknown_sources", defaults.unknown_sources);
    cfg.seen_shapes = settings.get_list("scenario.shapes", defaults.seen_shapes);
    cfg.unseen_shapes = settings.get_list("scenario.unseen_shapes", defaults.unseen_shapes);
    cfg.clouds_per_source_shape = static_cast<int>(
        settings.get_int("scenario.clouds_per_source", defaults.clouds_per_source_shape));
    cfg.points_per_cloud =
        static_cast<int>(settings.get_int("scenario.points_per_cloud", defaults.points_per_cloud));
    cfg.train_ratio = settings.get_double("scenario.train_ratio", defaults.train_ratio);
    cfg.validation_target = static_cast<int>(
        settings.get_int("scenario.validation_count", defaults.validation_target));
    cfg.seed = settings.get_seed("scenario.seed", defaults.seed);
    return cfg;
}

} // namespace

int run_simulate(CommandContext& ctx) {
    ctx.resolve_settings();
    const auto cfg = scenario_from_settings(ctx.settings);
    ctx.settings.reject_unconsumed();

    const auto scenario = simsource::build_scenario(cfg);
    std::filesystem::create_directories(ctx.out_dir);
    pipeline::write_dataset(scenario, ctx.out_dir);
    ctx.outputs.push_back((ctx.out_dir / "dataset.csv").string());
    ctx.write_run_manifest();

    std::cout << "simulate: " << scenario.train.size() << " train / "
              << scenario.validation.size() << " validation / " << scenario.test.size()
              << " test clouds in " << ctx.out_dir.string() << "\n";
    return 0;
}

} // namespace fakepcd::cli
