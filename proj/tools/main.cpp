#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "emosde/runconfig.hpp"
#include "emosde/workbench.hpp"

namespace {

// exit codes: 0 success, 2 usage/config error, 1 runtime failure
constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

emosde::RunConfig load_config(const std::string& path, std::optional<uint64_t> seed_override) {
    emosde::RunConfig cfg = emosde::RunConfig::load(path);
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intensity-controllable emotional diffusion sampling workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed_override;
    app.add_option("--config", config_path, "Run config (JSON)")->required();
    app.add_option("--seed-override", seed_override, "Replace the config seed");

    auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
    gen->fallthrough();

    auto* train = app.add_subcommand("train", "Train one stage");
    train->fallthrough();
    std::string stage;
    bool resume = false;
    train->add_option("--stage", stage, "acoustic | classifier")
        ->required()
        ->check(CLI::IsMember({"acoustic", "classifier"}));
    train->add_flag("--resume", resume, "Continue the acoustic stage from its checkpoint");

    auto* samp = app.add_subcommand("sample", "Draw guided samples");
    samp->fallthrough();
    int emotion = 1;
    double alpha = 1.0;
    int n_samples = 1;
    std::string sample_out = "samples";
    bool force = false;
    samp->add_option("--emotion", emotion, "Target emotion id (0 = Neutral)")->required();
    samp->add_option("--alpha", alpha, "Intensity in [0, 1]")
        ->required()
        ->check(CLI::Range(0.0, 1.0));
    samp->add_option("--n", n_samples, "Number of samples")->required()->check(CLI::PositiveNumber);
    samp->add_option("--out", sample_out, "Output directory");
    samp->add_flag("--force", force, "Ignore config-hash mismatches");

    auto* evi = app.add_subcommand("eval-intensity", "Intensity sweep with both judges");
    evi->fallthrough();
    std::string eval_out;
    evi->add_option("--out", eval_out, "Output CSV path");
    evi->add_flag("--force", force, "Ignore config-hash mismatches");

    auto* evf = app.add_subcommand("eval-forward", "Monte-Carlo forward-marginal validation");
    evf->fallthrough();
    std::string evf_out;
    evf->add_option("--out", evf_out, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        const emosde::RunConfig cfg = load_config(config_path, seed_override);
        if (gen->parsed()) {
            emosde::cmd_gen_corpus(cfg);
            std::printf("corpus written to %s\n", cfg.corpus_dir().string().c_str());
        } else if (train->parsed()) {
            const auto st = stage == "acoustic" ? emosde::TrainStage::acoustic
                                                : emosde::TrainStage::classifier;
            emosde::cmd_train(cfg, st, resume);
            std::printf("%s checkpoint written\n", stage.c_str());
        } else if (samp->parsed()) {
            emosde::cmd_sample(cfg, emotion, alpha, n_samples, sample_out, force);
            std::printf("%d samples written to %s\n", n_samples, sample_out.c_str());
        } else if (evi->parsed()) {
            const std::string out =
                eval_out.empty() ? cfg.log_path("eval_intensity.csv").string() : eval_out;
            emosde::cmd_eval_intensity(cfg, out, force);
            std::printf("intensity report written to %s\n", out.c_str());
        } else if (evf->parsed()) {
            const std::string out =
                evf_out.empty() ? cfg.log_path("eval_forward.csv").string() : evf_out;
            emosde::cmd_eval_forward(cfg, out);
            std::printf("forward-marginal report written to %s\n", out.c_str());
        }
    } catch (const emosde::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsageError;
    } catch (const std::domain_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntimeError;
    }
    return 0;
}
