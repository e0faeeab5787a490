#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "emosde/checkpoint.hpp"
#include "emosde/corpus.hpp"
#include "emosde/graph.hpp"
#include "emosde/nn.hpp"
#include "emosde/sde.hpp"

namespace emosde {

struct AcousticArch {
    int vocab_size = 16;
    int dim = 8;
    int token_embed = 32;
    int encoder_hidden = 64;
    int score_hidden = 64;
    int score_conv_layers = 2;
    int score_kernel = 3;
    int time_embed = 16;

    nlohmann::json to_json() const;
    static AcousticArch from_json(const nlohmann::json& j);
};

// Emotion-unconditional acoustic model: a per-token encoder feeding the
// aligned-mean head and the log-duration head, plus the score network
// s(x_t, mu, t). The encoder is strictly per-token, so expanding by durations
// is the only cross-token operation on the mu path.
template <typename T>
struct AcousticModelT {
    using Ref = typename GraphT<T>::Ref;

    AcousticArch arch;
    ParamSetT<T> params;

    static AcousticModelT init(const AcousticArch& a, Rng& rng) {
        AcousticModelT m;
        m.arch = a;
        ParamSetT<T>& p = m.params;
        p.add("enc.embed", init_normal<T>({a.vocab_size, a.token_embed}, 1.0, rng));
        p.add("enc.w1", init_linear_weight<T>(a.token_embed, a.encoder_hidden, rng));
        p.add("enc.b1", TensorT<T>::zeros({a.encoder_hidden}));
        p.add("enc.w2", init_linear_weight<T>(a.encoder_hidden, a.encoder_hidden, rng));
        p.add("enc.b2", TensorT<T>::zeros({a.encoder_hidden}));
        p.add("mu.w", init_linear_weight<T>(a.encoder_hidden, a.dim, rng));
        p.add("mu.b", TensorT<T>::zeros({a.dim}));
        p.add("dur.w", init_linear_weight<T>(a.encoder_hidden, 1, rng));
        p.add("dur.b", TensorT<T>::zeros({1}));
        const int in_dim = 2 * a.dim + a.time_embed;
        p.add("score.in_w", init_linear_weight<T>(in_dim, a.score_hidden, rng));
        p.add("score.in_b", TensorT<T>::zeros({a.score_hidden}));
        for (int l = 0; l < a.score_conv_layers; ++l) {
            const std::string prefix = "score.conv" + std::to_string(l);
            p.add(prefix + ".w", init_conv_weight<T>(a.score_kernel, a.score_hidden, a.score_hidden, rng));
            p.add(prefix + ".b", TensorT<T>::zeros({a.score_hidden}));
        }
        // Zero-initialized output layer: the score starts at exactly zero.
        p.add("score.out_w", TensorT<T>::zeros({a.score_hidden, a.dim}));
        p.add("score.out_b", TensorT<T>::zeros({a.dim}));
        return m;
    }

    void check_tokens(const std::vector<int>& tokens) const {
        if (tokens.empty()) throw std::invalid_argument("acoustic: empty token sequence");
        for (int t : tokens)
            if (t < 0 || t >= arch.vocab_size)
                throw std::out_of_range("vocabulary error: token id out of range");
    }

    // ---- graph builders ----

    Ref build_token_feats(GraphT<T>& g, const BoundParams<T>& p,
                          const std::vector<int>& tokens) const {
        check_tokens(tokens);
        Ref e = g.embed_rows(p["enc.embed"], tokens);
        Ref h1 = g.tanh_act(g.add_rowvec(g.matmul(e, p["enc.w1"]), p["enc.b1"]));
        return g.tanh_act(g.add_rowvec(g.matmul(h1, p["enc.w2"]), p["enc.b2"]));
    }

    Ref build_mu_tokens(GraphT<T>& g, const BoundParams<T>& p, Ref token_feats) const {
        return g.add_rowvec(g.matmul(token_feats, p["mu.w"]), p["mu.b"]);
    }

    Ref build_log_dur(GraphT<T>& g, const BoundParams<T>& p, Ref token_feats) const {
        return g.add_rowvec(g.matmul(token_feats, p["dur.w"]), p["dur.b"]);
    }

    // Score network on a pair of frame-aligned refs. Throws at t with
    // lambda(t) = 0 (the score is undefined at t = 0).
    Ref build_score(GraphT<T>& g, const BoundParams<T>& p, Ref x_t, Ref mu, double t,
                    const NoiseSchedule& sched) const {
        const double lambda = sched.marginal_params(t).variance;
        if (!(lambda > 0.0)) throw std::domain_error("acoustic: score undefined at lambda(t) = 0");
        const int frames = g.val(x_t).rows();
        Ref temb = g.constant(time_embedding_rows<T>(t, arch.time_embed, frames));
        Ref in = g.concat_cols(g.concat_cols(x_t, mu), temb);
        Ref h = g.tanh_act(g.add_rowvec(g.matmul(in, p["score.in_w"]), p["score.in_b"]));
        for (int l = 0; l < arch.score_conv_layers; ++l) {
            const std::string prefix = "score.conv" + std::to_string(l);
            h = g.tanh_act(g.conv1d_same(h, p[prefix + ".w"], p[prefix + ".b"]));
        }
        Ref raw = g.add_rowvec(g.matmul(h, p["score.out_w"]), p["score.out_b"]);
        // The net predicts sqrt(lambda) * score (the noise scale), so its
        // output stays O(1) across the whole time range.
        return g.scale(raw, 1.0 / std::sqrt(lambda));
    }

    // ---- evaluation-mode conveniences (fresh graph, values only) ----

    TensorT<T> predict_mu(const std::vector<int>& tokens, const std::vector<int>& durations) const {
        if (tokens.size() != durations.size())
            throw std::invalid_argument("acoustic: token/duration length mismatch");
        for (int d : durations)
            if (d < 1) throw std::invalid_argument("acoustic: durations must be positive");
        GraphT<T> g;
        BoundParams<T> p(g, params, /*requires_grad=*/false);
        Ref feats = build_token_feats(g, p, tokens);
        Ref mu_tokens = build_mu_tokens(g, p, feats);
        return g.val(g.repeat_rows(mu_tokens, durations));
    }

    std::vector<double> predict_log_dur(const std::vector<int>& tokens) const {
        GraphT<T> g;
        BoundParams<T> p(g, params, /*requires_grad=*/false);
        Ref ld = build_log_dur(g, p, build_token_feats(g, p, tokens));
        std::vector<double> out;
        for (T v : g.val(ld).data) out.push_back(static_cast<double>(v));
        return out;
    }

    // Predicted durations: nearest positive integer of exp(log duration).
    std::vector<int> predict_durations(const std::vector<int>& tokens) const {
        std::vector<int> out;
        for (double ld : predict_log_dur(tokens))
            out.push_back(std::max(1, static_cast<int>(std::lround(std::exp(ld)))));
        return out;
    }

    TensorT<T> score_eval(const TensorT<T>& x_t, const TensorT<T>& mu, double t,
                          const NoiseSchedule& sched) const {
        if (!x_t.same_shape(mu)) throw std::invalid_argument("acoustic: x/mu shape mismatch");
        GraphT<T> g;
        BoundParams<T> p(g, params, /*requires_grad=*/false);
        return g.val(build_score(g, p, g.constant(x_t), g.constant(mu), t, sched));
    }
};

using AcousticModel = AcousticModelT<float>;

// ---- losses ----

// Mean squared error between predicted log-durations and log(true durations),
// averaged over tokens.
template <typename T>
typename GraphT<T>::Ref build_duration_loss(GraphT<T>& g, typename GraphT<T>::Ref pred_log_dur,
                                            const std::vector<int>& true_dur) {
    const int n = static_cast<int>(true_dur.size());
    if (g.val(pred_log_dur).numel() != n)
        throw std::invalid_argument("duration loss: length mismatch");
    TensorT<T> target = TensorT<T>::zeros(g.val(pred_log_dur).shape);
    for (int i = 0; i < n; ++i) {
        if (true_dur[static_cast<size_t>(i)] < 1)
            throw std::domain_error("duration loss: durations must be >= 1");
        target.data[static_cast<size_t>(i)] =
            static_cast<T>(std::log(static_cast<double>(true_dur[static_cast<size_t>(i)])));
    }
    return g.scale(g.sum_sq_diff(pred_log_dur, g.constant(std::move(target))), 1.0 / n);
}

double duration_loss(const std::vector<double>& pred_log_dur, const std::vector<int>& true_dur);

// -log N(x0; mu, I) averaged per frame:
//   0.5 * mean_f ||x0_f - mu_f||^2 + (dim/2) * log(2 pi)
template <typename T>
typename GraphT<T>::Ref build_prior_loss(GraphT<T>& g, typename GraphT<T>::Ref mu_frames,
                                         typename GraphT<T>::Ref x0) {
    const int frames = g.val(x0).rows();
    const int dim = g.val(x0).cols();
    constexpr double kLog2Pi = 1.8378770664093453;
    return g.add_scalar(g.scale(g.sum_sq_diff(x0, mu_frames), 0.5 / frames), 0.5 * dim * kLog2Pi);
}

template <typename T>
double prior_loss(const TensorT<T>& x0, const TensorT<T>& mu) {
    GraphT<T> g;
    return static_cast<double>(g.val(build_prior_loss(g, g.constant(mu), g.constant(x0))).data[0]);
}

// lambda_t * mean_f ||s - target||^2 for a score ref and a fixed target.
template <typename T>
typename GraphT<T>::Ref build_diffusion_loss(GraphT<T>& g, typename GraphT<T>::Ref score,
                                             const TensorT<T>& target, double lambda_t) {
    const int frames = target.rows();
    return g.scale(g.sum_sq_diff(score, g.constant(target)), lambda_t / frames);
}

// One-draw estimate of the score-matching objective: t ~ U[t_min, 1],
// (x_t, target) from the closed-form forward marginal.
template <typename T>
double diffusion_loss(const AcousticModelT<T>& model, const TensorT<T>& x0, const TensorT<T>& mu,
                      const NoiseSchedule& sched, double t_min, Rng& rng) {
    const double t = t_min + (1.0 - t_min) * rng.uniform();
    const ForwardSample<T> fs = sample_forward(x0, mu, t, sched, rng);
    GraphT<T> g;
    BoundParams<T> p(g, model.params, /*requires_grad=*/false);
    auto score = model.build_score(g, p, g.constant(fs.x_t), g.constant(mu), t, sched);
    const double lambda = sched.marginal_params(t).variance;
    return static_cast<double>(g.val(build_diffusion_loss(g, score, fs.score_target, lambda)).data[0]);
}

// ---- training ----

struct TrainParams {
    int64_t steps = 6000;
    int batch_size = 8;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.995;
    double t_min = 1e-3;
    int log_every = 100;

    void validate() const;
};

struct TrainLogRow {
    int64_t step = 0;
    double dur_loss = 0.0;
    double diff_loss = 0.0;
    double prior_loss = 0.0;
    double total = 0.0;
};

struct AcousticCheckpointBundle {
    AcousticArch arch;
    NoiseSchedule schedule;
    int64_t train_step = 0;
    std::string config_hash;
    ParamSet live;
    ParamSet ema;
    ParamSet adam_m, adam_v;

    AcousticModel inference_model() const {
        AcousticModel m;
        m.arch = arch;
        m.params = ema;
        return m;
    }
};

struct AcousticTrainResult {
    AcousticCheckpointBundle bundle;
    std::vector<TrainLogRow> log;
};

// Minimizes L_dur + L_diff + L_prior with Adam; the emotion label is never
// read. Gradients within a batch are computed per utterance (optionally in
// parallel) and reduced in index order, so results are independent of the
// thread count. Per-step rng streams are derived from (seed, global step), so
// a resumed run reproduces an uninterrupted one exactly.
AcousticTrainResult train_acoustic(const Corpus& corpus, const NoiseSchedule& sched,
                                   const AcousticArch& arch, const TrainParams& tp, uint64_t seed,
                                   const std::string& config_hash,
                                   const AcousticCheckpointBundle* resume_from = nullptr,
                                   int threads = 1);

Checkpoint pack_acoustic(const AcousticCheckpointBundle& bundle);
AcousticCheckpointBundle unpack_acoustic(const Checkpoint& ckpt);

}  // namespace emosde
