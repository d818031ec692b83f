#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hypergen/harness.hpp"

// Command-line front end over the experiment pipeline. Every subcommand is a
// thin wrapper around run_pipeline with a stage list; stages resume from
// checkpoints in the output directory (config out_dir, overridable through
// HYPERGEN_OUT) and the training subcommands require their upstream
// artifacts to exist already. `run` builds the whole chain in one go.

namespace {

using hypergen::harness::ExperimentConfig;
using hypergen::harness::PipelineOptions;

ExperimentConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return hypergen::harness::default_config();
    return hypergen::harness::load_config(config_path);
}

void run_stages(const std::string& config_path, std::vector<std::string> stages, bool force,
                bool require_deps, std::vector<hypergen::meta::Variant> variants = {}) {
    ExperimentConfig cfg = load_or_default(config_path);
    PipelineOptions opt;
    opt.stages = std::move(stages);
    opt.force = force;
    opt.require_deps = require_deps;
    opt.train_variants = std::move(variants);
    hypergen::harness::run_pipeline(cfg, opt);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hypergen: generative modeling of task-adapted network weights"};
    app.require_subcommand(1);

    std::string config_path;
    bool force = false;
    app.add_option("--config", config_path, "experiment config JSON (defaults when omitted)");
    app.add_flag("--force", force, "recompute requested stages even when checkpoints exist");

    auto* universe = app.add_subcommand("universe", "write task and descriptor CSVs");

    std::string train_method;
    auto* train = app.add_subcommand("train", "train one meta-learning variant");
    train->add_option("method", train_method, "variant name, e.g. hnet-maml-uncond")
        ->required();

    auto* corpus = app.add_subcommand("corpus", "collect the adapted-weight corpus");
    auto* train_vae = app.add_subcommand("train-vae", "train the weight VAE on the corpus");
    auto* train_clip =
        app.add_subcommand("train-hyperclip", "train the contrastive weight encoder");
    auto* train_ldm =
        app.add_subcommand("train-hyperldm", "train the latent diffusion models");
    auto* eval = app.add_subcommand("eval", "evaluate all configured methods");

    std::string sweep_method = "hnet-hyperldm";
    auto* sweep_gamma =
        app.add_subcommand("sweep-gamma", "zero-shot accuracy across guidance weights");
    sweep_gamma->add_option("--method", sweep_method,
                            "diffusion method (hnet-hyperldm or hvae-hyperldm)");

    std::vector<std::string> sweep_methods = {"mnet-multitask", "hnet-multitask-cond",
                                              "hnet-hyperldm", "hvae-hyperldm"};
    auto* sweep_fraction = app.add_subcommand(
        "sweep-fraction", "zero-shot accuracy across descriptor-availability fractions");
    sweep_fraction->add_option("--methods", sweep_methods, "methods to sweep");

    std::string run_config;
    auto* run = app.add_subcommand("run", "run the full pipeline from a config");
    run->add_option("config", run_config, "experiment config JSON")->required();

    try {
        app.parse(argc, argv);

        if (universe->parsed()) {
            run_stages(config_path, {"universe"}, force, true);
        } else if (train->parsed()) {
            run_stages(config_path, {"trainers"}, force, true,
                       {hypergen::meta::variant_from_name(train_method)});
        } else if (corpus->parsed()) {
            run_stages(config_path, {"corpus"}, force, true);
        } else if (train_vae->parsed()) {
            run_stages(config_path, {"vae"}, force, true);
        } else if (train_clip->parsed()) {
            run_stages(config_path, {"hyperclip"}, force, true);
        } else if (train_ldm->parsed()) {
            run_stages(config_path, {"hyperldm"}, force, true);
        } else if (eval->parsed()) {
            run_stages(config_path, {"eval"}, force, true);
        } else if (sweep_gamma->parsed()) {
            ExperimentConfig cfg = load_or_default(config_path);
            PipelineOptions opt;
            opt.force = force;
            opt.require_deps = true;
            hypergen::harness::run_gamma_sweep(
                cfg, hypergen::harness::method_from_name(sweep_method), opt);
        } else if (sweep_fraction->parsed()) {
            ExperimentConfig cfg = load_or_default(config_path);
            PipelineOptions opt;
            opt.force = force;
            opt.require_deps = true;
            std::vector<hypergen::harness::Method> methods;
            for (const auto& name : sweep_methods)
                methods.push_back(hypergen::harness::method_from_name(name));
            hypergen::harness::fraction_sweep(cfg, methods, cfg.sweep_fractions, opt);
        } else if (run->parsed()) {
            run_stages(run_config, hypergen::harness::kStageOrder, force, false);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
