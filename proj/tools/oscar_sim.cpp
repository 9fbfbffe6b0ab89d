// oscar-sim <stage> --config <path> [--out <dir>] [--seed <u64>]
// Exit codes: 0 ok, 1 bad input (CLI or config), 2 runtime failure.
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "oscar/config.hpp"
#include "oscar/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"One-shot federated learning simulator"};
    std::string stage_name, config_path, out_dir;
    std::uint64_t seed = 0;
    app.add_option("stage", stage_name,
                   "pretrain | federate | synthesize | train | evaluate | report | ablate | pilot | all")
        ->required();
    app.add_option("--config", config_path, "experiment config (INI)")->required();
    app.add_option("--out", out_dir, "output directory (overrides [run] out_dir)");
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides [run] seed)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    oscar::ExperimentConfig config;
    oscar::Stage stage;
    try {
        stage = oscar::parse_stage(stage_name);
        config = oscar::load_config(config_path);
        if (*seed_opt) config.seed = seed;
        if (!out_dir.empty()) config.out_dir = out_dir;
        oscar::require_seed(config);
    } catch (const std::exception& e) {
        // unreadable file, unknown stage or bad key: all input problems
        std::cerr << "oscar-sim: " << e.what() << "\n";
        return 1;
    }

    try {
        oscar::run_pipeline(config, stage, config.out_dir, [](const std::string& msg) {
            std::cerr << msg << "\n";
        });
    } catch (const oscar::ConfigError& e) {
        std::cerr << "oscar-sim: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "oscar-sim: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
