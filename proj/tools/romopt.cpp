// Command-line front end for the offline/online ROM-optimization pipeline.
//
//   romopt <stage> --config <path> [--stage-dir <path>]
//
// Stages: gen-data, build-rom, optimize, fom-eval, calibrate, update,
// sample, report. Exit codes: 0 success, 1 usage, 2 missing artifact,
// 3 digest mismatch, 4 stage failure. ROMOPT_THREADS caps parallelism.

#include <CLI11.hpp>

#include "romopt/pipeline.hpp"

#include <cstdio>

int main(int argc, char** argv) {
    CLI::App app{"ROM-constrained optimization with post-optimality discrepancy updates"};
    app.require_subcommand(1);

    std::string config_path;
    std::string stage_dir;

    std::vector<std::pair<std::string, romopt::cli::Stage>> stages;
    for (auto s : romopt::cli::all_stages())
        stages.emplace_back(romopt::cli::stage_name(s), s);

    romopt::cli::Stage selected{};
    for (auto& [name, stage] : stages) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "pipeline configuration (JSON)")
            ->required();
        sub->add_option("--stage-dir", stage_dir,
                        "artifact directory (defaults to the config's output_dir)");
        romopt::cli::Stage s = stage;
        sub->callback([&selected, s]() { selected = s; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        romopt::cli::PipelineConfig cfg = romopt::cli::parse_config(config_path);
        romopt::cli::StageOutcome out = romopt::cli::run_stage(selected, cfg, stage_dir);
        if (!out.up_to_date) {
            std::fprintf(stderr, "[%s] done in %.2f s\n",
                         romopt::cli::stage_name(selected).c_str(), out.wall_s);
            for (const auto& [key, value] : out.metrics)
                std::fprintf(stderr, "  %s = %.8g\n", key.c_str(), value);
        }
        return 0;
    } catch (const romopt::cli::MissingArtifact& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return romopt::cli::kExitMissingArtifact;
    } catch (const romopt::cli::DigestMismatch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return romopt::cli::kExitDigestMismatch;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return romopt::cli::kExitStageFailure;
    }
}
