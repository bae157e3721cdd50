#include <fstream>
#include <iostream>
#include <map>

#include "commands.hpp"
#include "fakepcd/explain.hpp"
#include "fakepcd/pcd_io.hpp"
#include "fakepcd/pcd_ops.hpp"
#include "fakepcd/rng.hpp"

namespace fakepcd::cli {

namespace {

void dump_cells_csv(const Eigen::MatrixXd& cells, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    for (int r = 0; r < cells.rows(); ++r) {
        for (int c = 0; c < cells.cols(); ++c) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.10g", cells(r, c));
            out << buf << (c + 1 == cells.cols() ? '\n' : ',');
        }
    }
}

} // namespace

int run_explain(CommandContext& ctx, const ExplainOptions& options) {
    ctx.resolve_settings();
    const int modes = (!options.critical.empty() ? 1 : 0) +
                      (options.fingerprint_members > 0 ? 1 : 0) +
                      (!options.match_query.empty() ? 1 : 0);
    if (modes != 1)
        throw ConfigError("explain: pass exactly one of --critical, --fingerprint, --match");
    if (options.resolution < 2) throw ConfigError("explain: --resolution must be >= 2");

    const auto model = nnet::load_checkpoint(options.checkpoint);
    ctx.inputs.push_back(options.checkpoint);
    std::filesystem::create_directories(ctx.out_dir);
    ctx.add_flag_pair("--checkpoint", options.checkpoint);
    ctx.add_flag_pair("--resolution", std::to_string(options.resolution));

    if (!options.critical.empty()) {
        const auto csv_path = ctx.out_dir / "critical_points.csv";
        std::ofstream csv(csv_path);
        if (!csv) throw IoError("cannot open file for writing: " + csv_path.string());
        csv << "id,point_count,critical_count,indices\n";
        for (const auto& file : options.critical) {
            const auto cloud = read_point_cloud(file);
            const auto critical = explain::critical_points(model, cloud);
            csv << std::filesystem::path(file).filename().string() << "," << cloud.size() << ","
                << critical.indices.size() << ",";
            for (std::size_t i = 0; i < critical.indices.size(); ++i) {
                csv << (i ? " " : "") << critical.indices[i];
            }
            csv << "\n";
            ctx.inputs.push_back(file);
            ctx.add_flag_pair("--critical", file);
        }
        ctx.outputs.push_back(csv_path.string());
        std::cout << "explain: critical point indices in " << csv_path.string() << "\n";
    } else if (options.fingerprint_members > 0) {
        if (options.data_dir.empty()) throw ConfigError("explain: --fingerprint needs --data");
        const auto data = pipeline::load_dataset(options.data_dir);
        ctx.inputs.push_back(options.data_dir);
        ctx.add_flag_pair("--data", options.data_dir);
        ctx.add_flag_pair("--fingerprint", std::to_string(options.fingerprint_members));
        const std::uint64_t seed = ctx.settings.get_seed("explain.seed", 11);

        // group every split by provenance name so unknown sources get
        // fingerprints too
        std::map<std::string, Dataset> by_source;
        for (const Dataset* split : {&data.train, &data.validation, &data.test}) {
            for (const auto& cloud : *split) {
                if (cloud.source) by_source[cloud.source->name].push_back(cloud);
            }
        }
        for (const auto& [name, clouds] : by_source) {
            const auto fp = explain::build_fingerprint(model, clouds, options.fingerprint_members,
                                                       options.resolution, options.resolution,
                                                       rng::derive(seed, rng::hash_string(name)));
            const auto pgm_path = ctx.out_dir / ("fingerprint_" + name + ".pgm");
            explain::write_pgm(fp.cells, pgm_path);
            ctx.outputs.push_back(pgm_path.string());
            if (options.dump_csv) {
                const auto csv_path = ctx.out_dir / ("fingerprint_" + name + ".csv");
                dump_cells_csv(fp.cells, csv_path);
                ctx.outputs.push_back(csv_path.string());
            }
        }
        std::cout << "explain: " << by_source.size() << " fingerprints in " << ctx.out_dir.string()
                  << "\n";
    } else {
        if (options.candidates.empty()) throw ConfigError("explain: --match needs --candidates");
        const auto query = read_point_cloud(options.match_query);
        ctx.inputs.push_back(options.match_query);
        ctx.add_flag_pair("--match", options.match_query);
        Dataset candidates;
        for (const auto& file : options.candidates) {
            candidates.push_back(read_point_cloud(file));
            ctx.inputs.push_back(file);
            ctx.add_flag_pair("--candidates", file);
        }
        const std::size_t best = explain::match_similar(query, candidates);
        const auto csv_path = ctx.out_dir / "match.csv";
        std::ofstream csv(csv_path);
        if (!csv) throw IoError("cannot open file for writing: " + csv_path.string());
        csv << "query,best_candidate,chamfer\n";
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.10g", chamfer_distance(query, candidates[best]));
        csv << options.match_query << "," << options.candidates[best] << "," << buf << "\n";
        ctx.outputs.push_back(csv_path.string());
        std::cout << "explain: nearest candidate is " << options.candidates[best] << "\n";
    }

    ctx.settings.reject_unconsumed();
    ctx.write_run_manifest();
    return 0;
}

} // namespace fakepcd::cli
