#include <Eigen/Core>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rpk/experiment.hpp"

// ============================================================================
// rpk — prune, over-parameterize, fine-tune with similarity distillation,
// contract, and measure sequential networks stored as .rpk containers.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 property violation.
// ============================================================================

namespace {

void emit(const rpk::json& summary) { std::cout << summary.dump(2) << "\n"; }

rpk::json config_or_empty(const std::string& path) {
    return path.empty() ? rpk::json::object() : rpk::load_json_file(path);
}

// A config file either nests per-stage sections or IS the section itself.
rpk::json section(const rpk::json& config, const char* key) {
    return config.contains(key) ? config.at(key) : config;
}

} // namespace

int main(int argc, char** argv) {
    Eigen::setNbThreads(static_cast<int>(rpk::thread_budget()));

    CLI::App app{"structured channel pruning, linear over-parameterization and "
                 "similarity-preserving distillation for sequential networks"};
    app.require_subcommand(1);

    std::string in, out, ref, teacher, config_path, mode;
    std::optional<double> ratio, rate, gamma, tol;
    std::optional<std::uint64_t> seed;
    std::size_t inputs = 100;

    CLI::App* prune = app.add_subcommand("prune", "remove low-salience channels");
    prune->add_option("--in", in, "input .rpk model")->required();
    prune->add_option("--out", out, "output .rpk model")->required();
    prune->add_option("--config", config_path, "JSON config (prune section)");
    prune->add_option("--ratio", ratio, "fraction of channels to remove");

    CLI::App* expand = app.add_subcommand("expand", "replace layers by linear factor chains");
    expand->add_option("--in", in, "input .rpk model")->required();
    expand->add_option("--out", out, "output .rpk model")->required();
    expand->add_option("--config", config_path, "JSON config (expand section)");
    expand->add_option("--rate", rate, "width multiplier, >= 1");
    expand->add_option("--seed", seed, "factor sampling seed");

    CLI::App* finetune = app.add_subcommand("finetune", "train a model on a dataset");
    finetune->add_option("--in", in, "input .rpk model (omit to initialize from config)");
    finetune->add_option("--out", out, "output .rpk model")->required();
    finetune->add_option("--config", config_path, "JSON config (network/train/data/distill)")
        ->required();
    finetune->add_option("--teacher", teacher, "teacher .rpk model enabling distillation");
    finetune->add_option("--mode", mode,
                         "train_from_scratch|vanilla_finetune|overparam_finetune|"
                         "overparam_finetune_kd");
    finetune->add_option("--seed", seed, "training seed");
    finetune->add_option("--gamma", gamma, "similarity loss weight");

    CLI::App* contract = app.add_subcommand("contract", "merge factor chains back");
    contract->add_option("--in", in, "input .rpk model with expansion metadata")->required();
    contract->add_option("--out", out, "output .rpk model")->required();

    CLI::App* eval = app.add_subcommand("eval", "accuracy of a model on a dataset");
    eval->add_option("--in", in, "input .rpk model")->required();
    eval->add_option("--config", config_path, "JSON config (data section)")->required();
    eval->add_option("--seed", seed, "dataset seed override");

    CLI::App* verify = app.add_subcommand("verify", "forward-equivalence of two models");
    verify->add_option("--ref", ref, "reference .rpk model")->required();
    verify->add_option("--in", in, ".rpk model under test")->required();
    verify->add_option("--tol", tol, "max relative error (default 1e-5)");
    verify->add_option("--inputs", inputs, "number of seeded inputs");
    verify->add_option("--seed", seed, "input seed");

    CLI::App* stats = app.add_subcommand("stats", "parameter and FLOP counts");
    stats->add_option("--in", in, "input .rpk model")->required();

    CLI::App* ablation = app.add_subcommand("ablation", "mode-by-ratio accuracy study");
    ablation->add_option("--config", config_path, "JSON ablation config")->required();
    ablation->add_option("--out", out, "output directory")->required();
    ablation->add_option("--ratio", ratio, "single prune ratio override");
    ablation->add_option("--seed", seed, "single seed override");
    ablation->add_option("--gamma", gamma, "similarity loss weight override");
    ablation->add_option("--rate", rate, "expansion rate override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1; // usage errors are exit 1
    }

    try {
        if (prune->parsed()) {
            rpk::PruneConfig cfg =
                rpk::prune_config_from_json(section(config_or_empty(config_path), "prune"));
            if (ratio) cfg.ratio = *ratio;
            emit(rpk::prune_stage(in, out, cfg));
        } else if (expand->parsed()) {
            rpk::ExpansionPlan plan =
                rpk::plan_from_json(section(config_or_empty(config_path), "expand"));
            if (rate) plan.rate = *rate;
            if (seed) plan.seed = *seed;
            emit(rpk::expand_stage(in, out, plan));
        } else if (finetune->parsed()) {
            rpk::json config = rpk::load_json_file(config_path);
            if (!mode.empty()) config["train"]["mode"] = mode;
            if (seed) config["train"]["seed"] = *seed;
            if (gamma) config["distill"]["gamma"] = *gamma;
            emit(rpk::finetune_stage(in, teacher, config, out));
        } else if (contract->parsed()) {
            emit(rpk::contract_stage(in, out));
        } else if (eval->parsed()) {
            rpk::DataSpec data =
                rpk::data_spec_from_json(section(rpk::load_json_file(config_path), "data"));
            if (seed) data.seed = *seed;
            emit(rpk::eval_stage(in, data));
        } else if (verify->parsed()) {
            rpk::json summary =
                rpk::verify_stage(ref, in, tol.value_or(1e-5), inputs, seed.value_or(0));
            emit(summary);
            if (!summary.at("pass").get<bool>()) return 2;
        } else if (stats->parsed()) {
            emit(rpk::stats_stage(in));
        } else if (ablation->parsed()) {
            rpk::AblationConfig cfg =
                rpk::ablation_from_json(section(rpk::load_json_file(config_path), "ablation"));
            if (ratio) cfg.ratios = {*ratio};
            if (seed) cfg.seeds = {*seed};
            if (gamma) cfg.gamma = *gamma;
            if (rate) cfg.plan.rate = *rate;
            emit(rpk::run_ablation(cfg, out));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
