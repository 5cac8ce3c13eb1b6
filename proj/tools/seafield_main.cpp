// seafield — batch experiment runner for the seasonal-field forecasting
// toolkit. Subcommands: train, evaluate, ablate, reconstruct, synthesize.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "seafield/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t jobs = 1;
    std::int64_t seed = -1; // overrides config when >= 0
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--jobs", args.jobs, "concurrent jobs for fan-out subcommands");
}

seafield::config::Config load_config(const CommonArgs& args) {
    auto cfg = seafield::config::Config::from_file(args.config_path);
    if (args.seed >= 0) {
        cfg.set("train.seed", std::to_string(args.seed));
        cfg.set("synth.seed", std::to_string(args.seed));
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"seafield — seasonal-field spatio-temporal forecasting toolkit"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, ablate_args, recon_args, synth_args;
    std::string checkpoint_path;

    auto* cmd_train = app.add_subcommand("train", "train a forecasting model");
    add_common(cmd_train, train_args);

    auto* cmd_evaluate = app.add_subcommand("evaluate", "evaluate a trained checkpoint");
    add_common(cmd_evaluate, eval_args);
    cmd_evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    auto* cmd_ablate = app.add_subcommand("ablate", "run the ablation grid");
    add_common(cmd_ablate, ablate_args);

    auto* cmd_reconstruct =
        app.add_subcommand("reconstruct", "fit univariate series with coordinate MLPs");
    add_common(cmd_reconstruct, recon_args);

    auto* cmd_synthesize = app.add_subcommand("synthesize", "write a synthetic dataset");
    add_common(cmd_synthesize, synth_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Usage problems share the configuration-error exit status unless
        // the parser signals a clean exit (--help).
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        using namespace seafield;
        if (cmd_train->parsed()) {
            experiment::cmd_train(load_config(train_args), train_args.out_dir);
        } else if (cmd_evaluate->parsed()) {
            experiment::cmd_evaluate(load_config(eval_args), checkpoint_path, eval_args.out_dir);
        } else if (cmd_ablate->parsed()) {
            experiment::cmd_ablate(load_config(ablate_args), ablate_args.out_dir,
                                   ablate_args.jobs);
        } else if (cmd_reconstruct->parsed()) {
            experiment::cmd_reconstruct(load_config(recon_args), recon_args.out_dir,
                                        recon_args.jobs);
        } else if (cmd_synthesize->parsed()) {
            experiment::cmd_synthesize(load_config(synth_args), synth_args.out_dir);
        }
    } catch (const seafield::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
