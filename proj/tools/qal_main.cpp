#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qal/errors.hpp"
#include "qal/runner.hpp"

namespace {

struct Args {
    std::string config;
    std::string checkpoint;
    std::string out_dir;
    long long seed = -1;
};

void add_common(CLI::App* cmd, Args& args, bool needs_checkpoint) {
    cmd->add_option("--config", args.config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* ck = cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint to load");
    if (needs_checkpoint) ck->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out_dir, "output directory (overrides output.dir)");
    cmd->add_option("--seed", args.seed, "seed override for train/fed sections");
}

qal::RunOverrides overrides(const Args& args) {
    qal::RunOverrides ov;
    if (!args.out_dir.empty()) ov.out_dir = args.out_dir;
    if (args.seed >= 0) ov.seed = static_cast<uint64_t>(args.seed);
    return ov;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qal - quantization-activated attack lab"};
    app.require_subcommand(1);

    Args args;
    CLI::App* pretrain = app.add_subcommand("pretrain", "train a clean model");
    add_common(pretrain, args, false);
    CLI::App* attack = app.add_subcommand("attack", "adversarial QAT re-training");
    add_common(attack, args, true);
    CLI::App* evaluate = app.add_subcommand("evaluate", "metrics, transfer and defense panels");
    add_common(evaluate, args, true);
    CLI::App* fedsim = app.add_subcommand("fedsim", "federated learning simulation");
    add_common(fedsim, args, false);
    CLI::App* sweep = app.add_subcommand("sweep", "hyperparameter sweep over attack runs");
    add_common(sweep, args, true);

    CLI11_PARSE(app, argc, argv);

    try {
        qal::ExperimentConfig cfg = qal::load_config(args.config);
        const qal::RunOverrides ov = overrides(args);
        if (pretrain->parsed()) {
            qal::run_pretrain(std::move(cfg), ov);
        } else if (attack->parsed()) {
            qal::run_attack(std::move(cfg), args.checkpoint, ov);
        } else if (evaluate->parsed()) {
            qal::run_evaluate(std::move(cfg), args.checkpoint, ov);
        } else if (fedsim->parsed()) {
            qal::run_fedsim(std::move(cfg), ov);
        } else if (sweep->parsed()) {
            qal::run_sweep(std::move(cfg), args.checkpoint, ov);
        }
        return 0;
    } catch (const qal::ConfigError& e) {
        std::cerr << "error[config]: " << e.what() << "\n";
        return 2;
    } catch (const qal::IoError& e) {
        std::cerr << "error[io]: " << e.what() << "\n";
        return 3;
    } catch (const qal::FormatError& e) {
        std::cerr << "error[format]: " << e.what() << "\n";
        return 4;
    } catch (const qal::ContractError& e) {
        std::cerr << "error[contract]: " << e.what() << "\n";
        return 5;
    } catch (const qal::DimensionError& e) {
        std::cerr << "error[dimension]: " << e.what() << "\n";
        return 6;
    } catch (const qal::NumericError& e) {
        std::cerr << "error[numeric]: " << e.what() << "\n";
        return 7;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}
