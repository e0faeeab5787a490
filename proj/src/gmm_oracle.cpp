#include "emosde/gmm_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "emosde/rng.hpp"

namespace emosde {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

void CorpusParams::validate() const {
    if (num_emotions < 2) throw std::domain_error("corpus: num_emotions must be >= 2");
    if (dim < 1) throw std::domain_error("corpus: dim must be >= 1");
    if (vocab_size < 1) throw std::domain_error("corpus: vocab_size must be >= 1");
    if (num_utterances < num_emotions)
        throw std::domain_error("corpus: need at least one utterance per emotion");
    if (min_tokens < 1 || max_tokens < min_tokens)
        throw std::domain_error("corpus: bad token length range");
    if (min_duration < 1 || max_duration < min_duration)
        throw std::domain_error("corpus: bad duration range");
    if (noise_std < 0.0) throw std::domain_error("corpus: noise_std must be >= 0");
    if (!(offset_radius > 0.0)) throw std::domain_error("corpus: offset_radius must be > 0");
    if (min_offset_distance < 0.0) throw std::domain_error("corpus: min_offset_distance < 0");
    if (min_offset_distance > 2.0 * offset_radius)
        throw std::domain_error(
            "corpus: degenerate config, min_offset_distance exceeds the offset sphere diameter");
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw std::domain_error("corpus: val_fraction outside (0, 1)");
}

namespace {

std::vector<std::vector<double>> draw_offsets(const CorpusParams& p, Rng& rng) {
    const int max_attempts = 1000;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        std::vector<std::vector<double>> offsets(p.num_emotions, std::vector<double>(p.dim));
        for (auto& off : offsets) {
            double norm2 = 0.0;
            for (auto& v : off) {
                v = rng.normal();
                norm2 += v * v;
            }
            const double scale = p.offset_radius / std::sqrt(std::max(norm2, 1e-30));
            for (auto& v : off) v *= scale;
        }
        bool ok = true;
        for (size_t i = 0; i < offsets.size() && ok; ++i)
            for (size_t j = i + 1; j < offsets.size() && ok; ++j) {
                double d2 = 0.0;
                for (int k = 0; k < p.dim; ++k) {
                    const double d = offsets[i][k] - offsets[j][k];
                    d2 += d * d;
                }
                if (std::sqrt(d2) < p.min_offset_distance) ok = false;
            }
        if (ok) return offsets;
    }
    throw std::runtime_error(
        "corpus: could not draw emotion offsets satisfying min_offset_distance; "
        "profiles would be degenerate");
}

}  // namespace

Corpus generate_corpus(const CorpusParams& p, uint64_t seed) {
    p.validate();

    Corpus corpus;
    CorpusManifest& m = corpus.manifest;
    m.seed = seed;
    m.vocab_size = p.vocab_size;
    m.dim = p.dim;
    m.num_emotions = p.num_emotions;
    m.priors.assign(static_cast<size_t>(p.num_emotions), 1.0 / p.num_emotions);

    Rng offset_rng = Rng::stream(seed, "corpus-offsets");
    for (auto& off : draw_offsets(p, offset_rng)) {
        EmotionProfile prof;
        prof.offset = std::move(off);
        prof.noise_std = p.noise_std;
        m.profiles.push_back(std::move(prof));
    }

    Rng base_rng = Rng::stream(seed, "corpus-token-base");
    m.token_base.assign(static_cast<size_t>(p.vocab_size), std::vector<double>(p.dim));
    for (auto& base : m.token_base)
        for (auto& v : base) v = base_rng.normal();

    Rng utt_rng = Rng::stream(seed, "corpus-utterances");
    corpus.utterances.reserve(static_cast<size_t>(p.num_utterances));
    for (int i = 0; i < p.num_utterances; ++i) {
        Utterance u;
        u.emotion_id = i % p.num_emotions;  // balanced within +-1
        const int n_tokens = utt_rng.uniform_int(p.min_tokens, p.max_tokens);
        u.tokens.resize(n_tokens);
        u.durations.resize(n_tokens);
        int total = 0;
        for (int k = 0; k < n_tokens; ++k) {
            u.tokens[k] = utt_rng.uniform_int(0, p.vocab_size - 1);
            u.durations[k] = utt_rng.uniform_int(p.min_duration, p.max_duration);
            total += u.durations[k];
        }
        u.frames = Tensor::zeros({total, p.dim});
        const auto& offset = m.profiles[static_cast<size_t>(u.emotion_id)].offset;
        int row = 0;
        for (int k = 0; k < n_tokens; ++k) {
            const auto& base = m.token_base[static_cast<size_t>(u.tokens[k])];
            for (int r = 0; r < u.durations[k]; ++r, ++row)
                for (int d = 0; d < p.dim; ++d)
                    u.frames.at(row, d) =
                        static_cast<float>(base[d] + offset[d] + p.noise_std * utt_rng.normal());
        }
        corpus.utterances.push_back(std::move(u));
    }

    // Stratified split: per class, shuffle ids and hold out the tail.
    Rng split_rng = Rng::stream(seed, "corpus-split");
    for (int e = 0; e < p.num_emotions; ++e) {
        std::vector<int> ids;
        for (int i = 0; i < p.num_utterances; ++i)
            if (corpus.utterances[static_cast<size_t>(i)].emotion_id == e) ids.push_back(i);
        for (size_t k = ids.size(); k > 1; --k)
            std::swap(ids[k - 1], ids[split_rng.below(k)]);
        const size_t n_val = std::max<size_t>(1, static_cast<size_t>(std::floor(
                                                     p.val_fraction * static_cast<double>(ids.size()))));
        for (size_t k = 0; k < ids.size(); ++k)
            (k < ids.size() - n_val ? m.train_ids : m.val_ids).push_back(ids[k]);
    }
    std::sort(m.train_ids.begin(), m.train_ids.end());
    std::sort(m.val_ids.begin(), m.val_ids.end());
    return corpus;
}

// ---- oracle ----

GmmOracle::GmmOracle(std::vector<std::vector<double>> token_base,
                     std::vector<EmotionProfile> profiles, std::vector<double> priors,
                     NoiseSchedule schedule)
    : token_base_(std::move(token_base)),
      profiles_(std::move(profiles)),
      priors_(std::move(priors)),
      schedule_(schedule) {
    if (token_base_.empty() || profiles_.empty())
        throw std::invalid_argument("oracle: empty token base or profiles");
    dim_ = static_cast<int>(token_base_[0].size());
    for (const auto& b : token_base_)
        if (static_cast<int>(b.size()) != dim_)
            throw std::invalid_argument("oracle: inconsistent token base dims");
    for (const auto& p : profiles_)
        if (static_cast<int>(p.offset.size()) != dim_)
            throw std::invalid_argument("oracle: inconsistent profile dims");
    if (priors_.size() != profiles_.size())
        throw std::invalid_argument("oracle: priors/profiles length mismatch");
    double total = 0.0;
    for (double w : priors_) {
        if (w < 0.0) throw std::invalid_argument("oracle: negative prior");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("oracle: priors must sum to 1");
}

GmmOracle GmmOracle::from_manifest(const CorpusManifest& m, const NoiseSchedule& schedule) {
    return GmmOracle(m.token_base, m.profiles, m.priors, schedule);
}

std::vector<double> GmmOracle::class_mean(int token, int emotion) const {
    std::vector<double> mean = token_base_.at(static_cast<size_t>(token));
    const auto& off = profiles_.at(static_cast<size_t>(emotion)).offset;
    for (int d = 0; d < dim_; ++d) mean[static_cast<size_t>(d)] += off[static_cast<size_t>(d)];
    return mean;
}

GmmOracle::Diffusion GmmOracle::diffusion_at(double t) const {
    const MarginalParams mp = schedule_.marginal_params(t);
    return Diffusion{mp.mean_coeff_x0, mp.variance};
}

double GmmOracle::diffused_var(const Diffusion& d, int emotion) const {
    const double sigma = profiles_[static_cast<size_t>(emotion)].noise_std;
    const double v = d.lambda + d.a * d.a * sigma * sigma;
    if (!(v > 0.0))
        throw std::domain_error("oracle: degenerate diffused variance (sigma = 0 at t = 0)");
    return v;
}

void GmmOracle::check_inputs(const DTensor& x_t, const DTensor& mu,
                             const std::vector<int>& frame_tokens) const {
    if (!x_t.same_shape(mu)) throw std::invalid_argument("oracle: x/mu shape mismatch");
    if (x_t.shape.size() != 2 || x_t.cols() != dim_)
        throw std::invalid_argument("oracle: frame matrix must be [frames x dim]");
    if (static_cast<int>(frame_tokens.size()) != x_t.rows())
        throw std::invalid_argument("oracle: frame_tokens length mismatch");
    for (int tok : frame_tokens)
        if (tok < 0 || tok >= static_cast<int>(token_base_.size()))
            throw std::out_of_range("oracle: token id out of range");
}

std::vector<double> GmmOracle::class_logits(const DTensor& x_t, const DTensor& mu,
                                            const std::vector<int>& frame_tokens, double t) const {
    check_inputs(x_t, mu, frame_tokens);
    const Diffusion d = diffusion_at(t);
    const int frames = x_t.rows();
    std::vector<double> logits(profiles_.size());
    for (size_t e = 0; e < profiles_.size(); ++e) {
        const double v = diffused_var(d, static_cast<int>(e));
        const auto& off = profiles_[e].offset;
        double ll = -0.5 * frames * dim_ * (kLog2Pi + std::log(v));
        for (int f = 0; f < frames; ++f) {
            const auto& base = token_base_[static_cast<size_t>(frame_tokens[static_cast<size_t>(f)])];
            double q = 0.0;
            for (int k = 0; k < dim_; ++k) {
                const double dm = d.a * (base[static_cast<size_t>(k)] + off[static_cast<size_t>(k)]) +
                                  (1.0 - d.a) * mu.at(f, k);
                const double r = x_t.at(f, k) - dm;
                q += r * r;
            }
            ll -= 0.5 * q / v;
        }
        logits[e] = std::log(priors_[e]) + ll;
    }
    return logits;
}

DTensor GmmOracle::conditional_score(const DTensor& x_t, const DTensor& mu,
                                     const std::vector<int>& frame_tokens, const Diffusion& d,
                                     int emotion) const {
    const double v = diffused_var(d, emotion);
    const auto& off = profiles_[static_cast<size_t>(emotion)].offset;
    DTensor out = DTensor::zeros(x_t.shape);
    for (int f = 0; f < x_t.rows(); ++f) {
        const auto& base = token_base_[static_cast<size_t>(frame_tokens[static_cast<size_t>(f)])];
        for (int k = 0; k < dim_; ++k) {
            const double dm = d.a * (base[static_cast<size_t>(k)] + off[static_cast<size_t>(k)]) +
                              (1.0 - d.a) * mu.at(f, k);
            out.at(f, k) = -(x_t.at(f, k) - dm) / v;
        }
    }
    return out;
}

DTensor GmmOracle::score(const DTensor& x_t, const DTensor& mu,
                         const std::vector<int>& frame_tokens, double t,
                         std::optional<int> condition) const {
    check_inputs(x_t, mu, frame_tokens);
    const Diffusion d = diffusion_at(t);
    if (condition) {
        if (*condition < 0 || *condition >= num_emotions())
            throw std::out_of_range("oracle: emotion id out of range");
        return conditional_score(x_t, mu, frame_tokens, d, *condition);
    }
    const std::vector<double> logits = class_logits(x_t, mu, frame_tokens, t);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double norm = 0.0;
    std::vector<double> resp(logits.size());
    for (size_t e = 0; e < logits.size(); ++e) {
        resp[e] = std::exp(logits[e] - mx);
        norm += resp[e];
    }
    DTensor out = DTensor::zeros(x_t.shape);
    for (size_t e = 0; e < logits.size(); ++e) {
        const double w = resp[e] / norm;
        if (w == 0.0) continue;
        const DTensor cs = conditional_score(x_t, mu, frame_tokens, d, static_cast<int>(e));
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += w * cs.data[i];
    }
    return out;
}

double GmmOracle::log_density(const DTensor& x_t, const DTensor& mu,
                              const std::vector<int>& frame_tokens, double t,
                              std::optional<int> condition) const {
    const std::vector<double> logits = class_logits(x_t, mu, frame_tokens, t);
    if (condition) {
        if (*condition < 0 || *condition >= num_emotions())
            throw std::out_of_range("oracle: emotion id out of range");
        return logits[static_cast<size_t>(*condition)] - std::log(priors_[static_cast<size_t>(*condition)]);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return mx + std::log(s);
}

std::vector<double> GmmOracle::posterior(const DTensor& x_t, const DTensor& mu,
                                         const std::vector<int>& frame_tokens, double t) const {
    const std::vector<double> logits = class_logits(x_t, mu, frame_tokens, t);
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double norm = 0.0;
    for (size_t e = 0; e < logits.size(); ++e) {
        out[e] = std::exp(logits[e] - mx);
        norm += out[e];
    }
    for (auto& p : out) p /= norm;
    return out;
}

double GmmOracle::log_posterior(const DTensor& x_t, const DTensor& mu,
                                const std::vector<int>& frame_tokens, double t, int emotion) const {
    const std::vector<double> logits = class_logits(x_t, mu, frame_tokens, t);
    if (emotion < 0 || emotion >= num_emotions())
        throw std::out_of_range("oracle: emotion id out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return logits[static_cast<size_t>(emotion)] - (mx + std::log(s));
}

DTensor GmmOracle::posterior_log_grad(const DTensor& x_t, const DTensor& mu,
                                      const std::vector<int>& frame_tokens, double t,
                                      int emotion) const {
    check_inputs(x_t, mu, frame_tokens);
    if (emotion < 0 || emotion >= num_emotions())
        throw std::out_of_range("oracle: emotion id out of range");
    const Diffusion d = diffusion_at(t);
    const std::vector<double> post = posterior(x_t, mu, frame_tokens, t);
    // grad log p(e|X) = grad logit_e - sum_e' p(e'|X) grad logit_e'
    DTensor out = conditional_score(x_t, mu, frame_tokens, d, emotion);
    for (size_t e = 0; e < post.size(); ++e) {
        if (post[e] == 0.0) continue;
        const DTensor cs = conditional_score(x_t, mu, frame_tokens, d, static_cast<int>(e));
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= post[e] * cs.data[i];
    }
    return out;
}

}  // namespace emosde
