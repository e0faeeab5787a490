#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emosde/tensor.hpp"

namespace emosde {

// One synthetic utterance: token ids, per-token frame counts, the per-frame
// acoustic matrix x0, and an utterance-level emotion label.
struct Utterance {
    std::vector<int> tokens;
    std::vector<int> durations;
    int emotion_id = 0;
    Tensor frames;  // [n_frames x dim]

    int n_frames() const { return frames.rows(); }

    // Token id of every frame, expanding tokens by durations.
    std::vector<int> frame_tokens() const {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(frames.rows()));
        for (size_t i = 0; i < tokens.size(); ++i)
            for (int r = 0; r < durations[i]; ++r) out.push_back(tokens[i]);
        return out;
    }

    void validate(int dim) const;
};

struct EmotionProfile {
    std::vector<double> offset;  // added to every token base vector
    double noise_std = 0.3;
};

struct CorpusManifest {
    int format_version = 1;
    std::string config_hash;
    uint64_t seed = 0;
    int vocab_size = 0;
    int dim = 0;
    int num_emotions = 0;
    std::vector<double> priors;
    std::vector<EmotionProfile> profiles;
    std::vector<std::vector<double>> token_base;
    std::vector<int> train_ids;
    std::vector<int> val_ids;
    std::string records_file = "records.bin";
};

struct Corpus {
    CorpusManifest manifest;
    std::vector<Utterance> utterances;

    const Utterance& at(int id) const { return utterances.at(static_cast<size_t>(id)); }
};

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

// Single-record utterance files reuse the corpus record layout; used for
// sampler outputs.
void save_utterance_record(const std::filesystem::path& path, const Utterance& utt);
Utterance load_utterance_record(const std::filesystem::path& path, int dim);

}  // namespace emosde
