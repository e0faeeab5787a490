#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "emosde/corpus.hpp"
#include "emosde/sde.hpp"
#include "emosde/tensor.hpp"

namespace emosde {

struct CorpusParams {
    int vocab_size = 16;
    int dim = 8;
    int num_emotions = 5;
    int num_utterances = 600;
    int min_tokens = 4;
    int max_tokens = 12;
    int min_duration = 1;
    int max_duration = 4;
    double noise_std = 0.3;
    double offset_radius = 1.5;
    double min_offset_distance = 1.0;
    double val_fraction = 0.2;

    void validate() const;
};

// Synthetic corpus with Gaussian class-conditional frames:
//   x0_frame = token_base[token] + profile[emotion].offset + noise_std * eps
// Classes are balanced within +-1 and the train/validation split is stratified
// per class.
Corpus generate_corpus(const CorpusParams& params, uint64_t seed);

// Closed-form class-conditional Gaussians carried through the diffusion:
// given x0 | e ~ N(m_ke, sigma_e^2 I) per frame and the forward marginal
// x_t = a x0 + (1-a) mu + sqrt(lambda) eps, each class component diffuses to
//   x_t | e ~ N(a m_ke + (1-a) mu_f, (lambda + a^2 sigma_e^2) I)
// with the emotion shared across all frames of an utterance. Scores, log
// densities, and posteriors of that mixture are exact; this is the ground
// truth every learned component is checked against.
class GmmOracle {
public:
    GmmOracle(std::vector<std::vector<double>> token_base, std::vector<EmotionProfile> profiles,
              std::vector<double> priors, NoiseSchedule schedule);

    static GmmOracle from_manifest(const CorpusManifest& manifest, const NoiseSchedule& schedule);

    int dim() const { return dim_; }
    int num_emotions() const { return static_cast<int>(profiles_.size()); }
    const NoiseSchedule& schedule() const { return schedule_; }

    // Mean of x0 for (token, emotion).
    std::vector<double> class_mean(int token, int emotion) const;

    // Score of the diffused density at time t. With a condition: the single
    // class-conditional Gaussian score grad_x log p_t(x | e). Without: the
    // mixture score grad_x log p_t(x), with the mixture taken over the
    // utterance-level emotion.
    DTensor score(const DTensor& x_t, const DTensor& mu, const std::vector<int>& frame_tokens,
                  double t, std::optional<int> condition) const;

    // log p_t(x | e) (with condition) or log p_t(x) (without, priors included).
    double log_density(const DTensor& x_t, const DTensor& mu, const std::vector<int>& frame_tokens,
                       double t, std::optional<int> condition) const;

    // Posterior p(e | x_t, mu, t) over all emotions.
    std::vector<double> posterior(const DTensor& x_t, const DTensor& mu,
                                  const std::vector<int>& frame_tokens, double t) const;

    double log_posterior(const DTensor& x_t, const DTensor& mu,
                         const std::vector<int>& frame_tokens, double t, int emotion) const;

    // grad_x log p(e | x_t, mu, t), via the softmax gradient over class
    // logits (not via the score difference, so the Bayes identity stays a
    // real cross-check).
    DTensor posterior_log_grad(const DTensor& x_t, const DTensor& mu,
                               const std::vector<int>& frame_tokens, double t, int emotion) const;

private:
    struct Diffusion {
        double a = 1.0;        // e^{-B/2}
        double lambda = 0.0;   // 1 - e^{-B}
    };

    Diffusion diffusion_at(double t) const;
    double diffused_var(const Diffusion& d, int emotion) const;
    // Per-class utterance log likelihood log p_t(X | e) plus log prior.
    std::vector<double> class_logits(const DTensor& x_t, const DTensor& mu,
                                     const std::vector<int>& frame_tokens, double t) const;
    DTensor conditional_score(const DTensor& x_t, const DTensor& mu,
                              const std::vector<int>& frame_tokens, const Diffusion& d,
                              int emotion) const;
    void check_inputs(const DTensor& x_t, const DTensor& mu,
                      const std::vector<int>& frame_tokens) const;

    int dim_;
    std::vector<std::vector<double>> token_base_;
    std::vector<EmotionProfile> profiles_;
    std::vector<double> priors_;
    NoiseSchedule schedule_;
};

}  // namespace emosde
