// Command-line entry point: synth | train | eval | gradcheck | ablate.
// Exit codes: 0 success, 1 contract/validation failure, 2 I/O failure.
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "posebridge/commands.hpp"

int main(int argc, char** argv) {
    using namespace posebridge;
    CLI::App app{"PoseBridge: zero-shot skeleton action recognition on a "
                 "deterministic synthetic benchmark"};
    app.require_subcommand(1);
    app.fallthrough();  // accept the global options after the subcommand

    std::string config_path;
    std::string out_dir = "out";
    int64_t seed = -1;
    app.add_option("--config", config_path, "configuration file (key = value)");
    app.add_option("--seed", seed, "override world and training seeds");
    app.add_option("--out", out_dir, "output directory")
        ->capture_default_str();

    CLI::App* synth = app.add_subcommand("synth", "generate world + datasets");
    CLI::App* train = app.add_subcommand("train", "train on the seen split");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    CLI::App* grad =
        app.add_subcommand("gradcheck", "finite-difference gradient suite");
    CLI::App* ablate =
        app.add_subcommand("ablate", "component-toggle ablation grid");

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = config_path.empty() ? Config()
                                         : Config::from_file(config_path);
        if (seed >= 0) {
            cfg.set("world.seed", std::to_string(seed));
            cfg.set("train.seed", std::to_string(seed));
        }
        if (synth->parsed()) {
            cmd_synth(cfg, out_dir);
        } else if (train->parsed()) {
            cmd_train(cfg, out_dir);
        } else if (eval->parsed()) {
            cmd_eval(cfg, out_dir);
        } else if (grad->parsed()) {
            if (!cmd_gradcheck(cfg, std::cout)) {
                std::cerr << "gradcheck: FAILED\n";
                return 1;
            }
        } else if (ablate->parsed()) {
            cmd_ablate(cfg, out_dir);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
