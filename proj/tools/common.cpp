#include "commands.hpp"

namespace fakepcd::cli {

void CommandContext::resolve_settings() {
    if (!config_path.empty()) {
        settings.load_file(config_path);
        inputs.push_back(config_path);
    }
    for (const auto& pair : set_overrides) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + pair + "'");
        settings.set_override(pair.substr(0, eq), pair.substr(eq + 1));
    }
    if (seed_flag) settings.set_override(seed_key, std::to_string(*seed_flag));
}

std::string CommandContext::canonical_command() const {
    std::string cmd = name;
    for (const auto& token : command_flags) {
        cmd += " ";
        cmd += token.find(' ') == std::string::npos ? token : "\"" + token + "\"";
    }
    cmd += " --out " + out_dir.string();
    for (const auto& [key, value] : settings.resolved()) {
        cmd += " --set " + key + "=" +
               (value.find(' ') == std::string::npos ? value : "\"" + value + "\"");
    }
    return cmd;
}

void CommandContext::write_run_manifest() {
    pipeline::RunManifest manifest;
    manifest.command = canonical_command();
    manifest.resolved = settings.resolved();
    manifest.inputs = inputs;
    manifest.outputs = outputs;
    manifest.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();
    pipeline::write_manifest(manifest, out_dir / "manifest.txt");
}

void register_seed_config_out(CLI::App* cmd, CommandContext& ctx, bool out_required) {
    auto* out = cmd->add_option("--out", ctx.out_dir, "Output directory for results and manifest");
    if (out_required) out->required();
    cmd->add_option("--config", ctx.config_path, "key=value config file with [section] headers");
    cmd->add_option("--seed", ctx.seed_flag, "Master seed (overrides the config value)");
    cmd->add_option("--set", ctx.set_overrides,
                    "Override one config key, e.g. --set train.epochs=5 (repeatable)");
}

} // namespace fakepcd::cli
