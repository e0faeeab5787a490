#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "emosde/acoustic.hpp"
#include "emosde/classifier.hpp"
#include "emosde/gmm_oracle.hpp"
#include "emosde/sde.hpp"

namespace emosde {

// Configuration problems are usage errors (CLI exit code 2), distinct from
// runtime failures.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GuidanceEvalParams {
    double gamma = 30.0;
    int n_steps = 100;
    std::vector<double> alpha_grid = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    int eval_samples_per_cell = 50;

    void validate() const;
};

// Complete description of a run. Config files must spell out every field
// (missing fields and unknown keys are both errors) and carry a mandatory
// seed; artifacts embed the hash of the effective config that produced them.
struct RunConfig {
    int format_version = 1;
    uint64_t seed = 1234;
    int threads = 0;  // 0 = hardware concurrency
    std::string run_dir = "runs/default";
    CorpusParams corpus;
    double beta0 = 0.05;
    double beta1 = 20.0;
    AcousticArch acoustic_arch;
    ClassifierArch classifier_arch;
    TrainParams acoustic_train;
    TrainParams classifier_train;
    GuidanceEvalParams guidance;

    static RunConfig defaults();
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    NoiseSchedule schedule() const { return NoiseSchedule(beta0, beta1); }
    std::string hash() const;
    int effective_threads() const;
    void validate() const;

    std::filesystem::path corpus_dir() const { return std::filesystem::path(run_dir) / "corpus"; }
    std::filesystem::path acoustic_ckpt_path() const {
        return std::filesystem::path(run_dir) / "acoustic.ckpt";
    }
    std::filesystem::path classifier_ckpt_path() const {
        return std::filesystem::path(run_dir) / "classifier.ckpt";
    }
    std::filesystem::path log_path(const std::string& name) const {
        return std::filesystem::path(run_dir) / name;
    }
};

}  // namespace emosde
