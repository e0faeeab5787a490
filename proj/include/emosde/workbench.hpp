#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "emosde/runconfig.hpp"

namespace emosde {

// Generates the corpus directory (manifest + records). Byte-identical for a
// fixed config and seed.
void cmd_gen_corpus(const RunConfig& cfg);

enum class TrainStage { acoustic, classifier };

// Trains one stage, writes the checkpoint and a training-log CSV. The
// classifier stage requires the acoustic checkpoint and never touches it.
// With resume = true the acoustic stage continues from its checkpoint toward
// the configured step count.
void cmd_train(const RunConfig& cfg, TrainStage stage, bool resume = false);

// Draws n guided samples for one (emotion, alpha) cell into out_dir, one
// record + JSON sidecar per sample, with per-sample rng streams. All samples
// of one invocation share a token sequence derived from the config seed.
void cmd_sample(const RunConfig& cfg, int emotion, double alpha, int n,
                const std::filesystem::path& out_dir, bool force = false);

struct IntensityCell {
    int emotion = 0;
    double alpha = 0.0;
    std::string judge;  // "classifier" | "oracle"
    double target_prob_mean = 0.0;
    double target_prob_std = 0.0;
    double neutral_prob_mean = 0.0;
    double neutral_prob_std = 0.0;
    int n = 0;
};

// The intensity-evaluation protocol: for every non-Neutral emotion and every
// alpha in the grid, draw k guided samples and judge the target-class
// probability at t = 0 with (a) the trained classifier and (b) the analytic
// oracle posterior. Returns one cell per (emotion, alpha, judge).
std::vector<IntensityCell> eval_intensity(const RunConfig& cfg, bool force = false);

void cmd_eval_intensity(const RunConfig& cfg, const std::filesystem::path& out_csv,
                        bool force = false);

// Monte-Carlo validation of the closed-form forward marginals; one CSV row
// per (capture time, coordinate).
void cmd_eval_forward(const RunConfig& cfg, const std::filesystem::path& out_csv);

// CSV helper shared by commands and tests: header + rows, '.' decimal
// separator, no locale dependence.
void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::string>& rows);

std::string format_double(double v);

}  // namespace emosde
