#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "emosde/acoustic.hpp"
#include "emosde/corpus.hpp"
#include "emosde/graph.hpp"
#include "emosde/nn.hpp"
#include "emosde/sde.hpp"

namespace emosde {

// Basic emotion id; id 0 is reserved for Neutral.
struct EmotionLabel {
    int id = 0;

    EmotionLabel() = default;
    EmotionLabel(int id_, int num_emotions) : id(id_) {
        if (id < 0 || id >= num_emotions) throw std::domain_error("emotion label: id out of range");
    }
};

struct ClassifierOutput {
    std::vector<double> log_probs;

    std::vector<double> probs() const {
        std::vector<double> p(log_probs.size());
        for (size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_probs[i]);
        return p;
    }
};

struct ClassifierArch {
    int dim = 8;
    int num_emotions = 5;
    int channels = 64;
    int blocks = 4;
    int kernel = 3;
    int time_embed = 64;
    double dropout = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    nlohmann::json to_json() const;
    static ClassifierArch from_json(const nlohmann::json& j);
};

// Time-conditioned emotion classifier p(e | x_t, mu, t): 4 conv blocks over
// the frame axis (conv -> batchnorm -> tanh -> dropout), mean pool, sinusoidal
// t embedding added to the pooled features, linear head, log-softmax.
template <typename T>
struct ClassifierModelT {
    using Ref = typename GraphT<T>::Ref;

    ClassifierArch arch;
    ParamSetT<T> params;
    ParamSetT<T> buffers;  // batchnorm running statistics

    static ClassifierModelT init(const ClassifierArch& a, Rng& rng) {
        ClassifierModelT m;
        m.arch = a;
        ParamSetT<T>& p = m.params;
        int cin = 2 * a.dim;
        for (int b = 0; b < a.blocks; ++b) {
            const std::string prefix = "block" + std::to_string(b);
            p.add(prefix + ".conv.w", init_conv_weight<T>(a.kernel, cin, a.channels, rng));
            p.add(prefix + ".conv.b", TensorT<T>::zeros({a.channels}));
            p.add(prefix + ".bn.gamma", TensorT<T>::full({a.channels}, T(1)));
            p.add(prefix + ".bn.beta", TensorT<T>::zeros({a.channels}));
            m.buffers.add(prefix + ".bn.run_mean", TensorT<T>::zeros({a.channels}));
            m.buffers.add(prefix + ".bn.run_var", TensorT<T>::full({a.channels}, T(1)));
            cin = a.channels;
        }
        p.add("temb.w", init_linear_weight<T>(a.time_embed, a.channels, rng));
        p.add("temb.b", TensorT<T>::zeros({a.channels}));
        p.add("head.w", init_linear_weight<T>(a.channels, a.num_emotions, rng));
        p.add("head.b", TensorT<T>::zeros({a.num_emotions}));
        return m;
    }

    // Batch statistics of one training-mode forward, reported per block so the
    // trainer can fold them into the running buffers in a fixed order.
    struct BatchStats {
        std::vector<TensorT<T>> mean;
        std::vector<TensorT<T>> var;  // population variance over frames
        int frames = 0;
    };

    static void frame_stats(const TensorT<T>& x, TensorT<T>* mean_out, TensorT<T>* var_out) {
        const int frames = x.rows(), ch = x.cols();
        TensorT<T> mean = TensorT<T>::zeros({ch});
        TensorT<T> var = TensorT<T>::zeros({ch});
        for (int c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (int f = 0; f < frames; ++f) acc += static_cast<double>(x.at(f, c));
            const double m = acc / frames;
            double vacc = 0.0;
            for (int f = 0; f < frames; ++f) {
                const double d = static_cast<double>(x.at(f, c)) - m;
                vacc += d * d;
            }
            mean.data[c] = static_cast<T>(m);
            var.data[c] = static_cast<T>(vacc / frames);
        }
        *mean_out = std::move(mean);
        *var_out = std::move(var);
    }

    // Builds log-probabilities [1 x m]. Training mode uses batch statistics
    // and dropout; evaluation mode uses running statistics and no dropout, so
    // the output (and its input gradient) is deterministic per input.
    Ref build_log_probs(GraphT<T>& g, const BoundParams<T>& p, Ref x_t, Ref mu, double t,
                        bool training, Rng* dropout_rng, BatchStats* stats_out) const {
        if (!(t >= 0.0) || !(t <= 1.0)) throw std::domain_error("classifier: t outside [0, 1]");
        if (!g.val(x_t).same_shape(g.val(mu)))
            throw std::invalid_argument("classifier: x/mu shape mismatch");
        if (g.val(x_t).cols() != arch.dim)
            throw std::invalid_argument("classifier: frame dim mismatch");
        if (stats_out) {
            stats_out->mean.clear();
            stats_out->var.clear();
            stats_out->frames = g.val(x_t).rows();
        }
        Ref h = g.concat_cols(x_t, mu);
        for (int b = 0; b < arch.blocks; ++b) {
            const std::string prefix = "block" + std::to_string(b);
            h = g.conv1d_same(h, p[prefix + ".conv.w"], p[prefix + ".conv.b"]);
            if (training && stats_out) {
                // Batch statistics of the block input feed the running
                // buffers, but normalization always uses the running
                // statistics. A frame batch from a single utterance carries
                // the emotion in its channel means; subtracting those would
                // erase the class signal during training.
                TensorT<T> mean, var;
                frame_stats(g.val(h), &mean, &var);
                stats_out->mean.push_back(std::move(mean));
                stats_out->var.push_back(std::move(var));
            }
            h = g.batchnorm_eval(h, p[prefix + ".bn.gamma"], p[prefix + ".bn.beta"],
                                 buffers.at(prefix + ".bn.run_mean"),
                                 buffers.at(prefix + ".bn.run_var"), arch.bn_eps);
            h = g.tanh_act(h);
            if (training && arch.dropout > 0.0) {
                if (!dropout_rng) throw std::invalid_argument("classifier: training needs a dropout rng");
                h = g.dropout_train(h, arch.dropout, *dropout_rng);
            }
        }
        Ref pooled = g.mean_rows(h);
        Ref temb = g.constant(time_embedding_rows<T>(t, arch.time_embed, 1));
        Ref tproj = g.add_rowvec(g.matmul(temb, p["temb.w"]), p["temb.b"]);
        Ref z = g.tanh_act(g.add(pooled, tproj));
        Ref logits = g.add_rowvec(g.matmul(z, p["head.w"]), p["head.b"]);
        return g.log_softmax(logits);
    }

    // Evaluation-mode utterance-level distribution over emotions.
    ClassifierOutput classify(const TensorT<T>& x_t, const TensorT<T>& mu, double t) const {
        GraphT<T> g;
        BoundParams<T> p(g, params, /*requires_grad=*/false);
        Ref lp = build_log_probs(g, p, g.constant(x_t), g.constant(mu), t, false, nullptr, nullptr);
        ClassifierOutput out;
        for (T v : g.val(lp).data) out.log_probs.push_back(static_cast<double>(v));
        return out;
    }

    // grad_x log p(label | x_t, mu, t), evaluation mode.
    TensorT<T> class_log_prob_grad(const TensorT<T>& x_t, const TensorT<T>& mu, double t,
                                   int label) const {
        if (label < 0 || label >= arch.num_emotions)
            throw std::domain_error("classifier: label out of range");
        GraphT<T> g;
        BoundParams<T> p(g, params, /*requires_grad=*/false);
        Ref x_ref = g.leaf(x_t, /*requires_grad=*/true);
        Ref lp = build_log_probs(g, p, x_ref, g.constant(mu), t, false, nullptr, nullptr);
        g.backward(g.pick(lp, label));
        return g.grad(x_ref);
    }
};

using ClassifierModel = ClassifierModelT<float>;

struct ClassifierCheckpointBundle {
    ClassifierArch arch;
    NoiseSchedule schedule;
    int64_t train_step = 0;
    std::string config_hash;
    std::string acoustic_config_hash;
    ParamSet live;
    ParamSet buffers;
    ParamSet ema;
    ParamSet adam_m, adam_v;

    ClassifierModel inference_model() const {
        ClassifierModel m;
        m.arch = arch;
        m.params = ema;
        m.buffers = buffers;
        return m;
    }
};

struct ClassifierTrainLogRow {
    int64_t step = 0;
    double ce_loss = 0.0;
};

struct ClassifierTrainResult {
    ClassifierCheckpointBundle bundle;
    std::vector<ClassifierTrainLogRow> log;
};

// Cross-entropy training on diffused samples with the acoustic model frozen:
// per utterance, t ~ U[t_min, 1], x_t drawn from the closed-form forward
// marginal around the frozen model's mu. Only classifier weights are updated.
ClassifierTrainResult train_classifier(const Corpus& corpus, const AcousticCheckpointBundle& acoustic,
                                       const ClassifierArch& arch, const TrainParams& tp,
                                       uint64_t seed, const std::string& config_hash,
                                       int threads = 1);

struct ClassifierEvalRow {
    double t = 0.0;
    double ce = 0.0;
    double accuracy = 0.0;
};

// Validation-split sweep over diffusion times (t = 0 uses the clean frames).
std::vector<ClassifierEvalRow> evaluate_classifier(const Corpus& corpus,
                                                   const AcousticCheckpointBundle& acoustic,
                                                   const ClassifierModel& classifier,
                                                   const std::vector<double>& t_grid, uint64_t seed,
                                                   int threads = 1);

Checkpoint pack_classifier(const ClassifierCheckpointBundle& bundle);
ClassifierCheckpointBundle unpack_classifier(const Checkpoint& ckpt);

}  // namespace emosde
