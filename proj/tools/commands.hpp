#pragma once

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fakepcd/config.hpp"
#include "fakepcd/pipeline.hpp"

namespace fakepcd::cli {

// Bookkeeping shared by every subcommand: config + --set overrides + --seed,
// and the run manifest written next to the outputs.
struct CommandContext {
    std::string name;
    std::filesystem::path out_dir;
    std::string config_path;
    std::vector<std::string> set_overrides;
    std::optional<std::uint64_t> seed_flag;
    std::string seed_key; // settings key the --seed flag overrides

    config::Settings settings;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::vector<std::string> command_flags; // literal flags for the canonical command
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    // Loads the config file and applies overrides; call before any get().
    void resolve_settings();

    void add_flag_pair(const std::string& flag, const std::string& value) {
        command_flags.push_back(flag);
        command_flags.push_back(value);
    }

    // Canonical re-executable command: subcommand, literal flags, then every
    // resolved setting as --set key=value. Rerunning it reproduces the run.
    std::string canonical_command() const;

    // Writes <out_dir>/manifest.txt; call once per run, after the outputs.
    void write_run_manifest();
};

void register_seed_config_out(CLI::App* cmd, CommandContext& ctx, bool out_required = true);

int run_simulate(CommandContext& ctx);

struct TrainOptions {
    std::string stage = "closed";
    std::string data_dir;
    std::string init_from;
};
int run_train(CommandContext& ctx, const TrainOptions& options);

struct AttributeOptions {
    std::string checkpoint;
    std::string data_dir;
    std::string anchors_file;
    int build_anchors = 0;
    double percentile = 0.0; // 0 means unset
    bool tune = false;
    std::vector<std::string> queries;
};
int run_attribute(CommandContext& ctx, const AttributeOptions& options);

struct ExplainOptions {
    std::string checkpoint;
    std::string data_dir;
    std::vector<std::string> critical; // cloud files
    int fingerprint_members = 0;
    std::string match_query;
    std::vector<std::string> candidates;
    int resolution = 64;
    bool dump_csv = false;
};
int run_explain(CommandContext& ctx, const ExplainOptions& options);

struct AblateOptions {
    std::string which;
    std::string data_dir;
    std::string checkpoint;      // closed-stage, for pretraining comparisons
    std::string open_checkpoint; // reusable open-stage model
    bool plot = false;
};
int run_ablate(CommandContext& ctx, const AblateOptions& options);

} // namespace fakepcd::cli
