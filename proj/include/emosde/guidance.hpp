#pragma once

#include <cstdint>
#include <vector>

#include "emosde/acoustic.hpp"
#include "emosde/classifier.hpp"
#include "emosde/graph.hpp"
#include "emosde/sde.hpp"

namespace emosde {

// Point on the emotion probability simplex. An intensity label puts alpha on
// the target emotion and 1 - alpha on Neutral (id 0); a mixture label is any
// normalized nonnegative weighting.
struct SoftLabel {
    std::vector<double> weights;

    static SoftLabel intensity(const EmotionLabel& emotion, double alpha, int num_emotions);
    static SoftLabel mixture(const std::vector<double>& raw);

    void validate() const;
    int size() const { return static_cast<int>(weights.size()); }
    int argmax() const;
    bool is_one_hot() const;
};

// grad_x sum_i w_i log p(e_i | x_t, mu, t), computed as a single backward pass
// through the weighted log-probability (equivalently, the input gradient of
// -CE[w, p(.|x_t)]).
template <typename T>
TensorT<T> soft_label_grad(const ClassifierModelT<T>& classifier, const TensorT<T>& x_t,
                           const TensorT<T>& mu, double t, const SoftLabel& d) {
    d.validate();
    if (d.size() != classifier.arch.num_emotions)
        throw std::invalid_argument("soft label: weight length does not match the classifier");
    GraphT<T> g;
    BoundParams<T> p(g, classifier.params, /*requires_grad=*/false);
    auto x_ref = g.leaf(x_t, /*requires_grad=*/true);
    auto lp = classifier.build_log_probs(g, p, x_ref, g.constant(mu), t, false, nullptr, nullptr);
    TensorT<T> w = TensorT<T>::zeros({d.size()});
    for (int i = 0; i < d.size(); ++i) w.data[static_cast<size_t>(i)] = static_cast<T>(d.weights[static_cast<size_t>(i)]);
    g.backward(g.dot_const(lp, std::move(w)));
    return g.grad(x_ref);
}

// Reference path for the same quantity: one backward pass per class, weighted
// and summed explicitly. Used to check the single-backward form against the
// weighted-sum definition.
template <typename T>
TensorT<T> soft_label_grad_explicit(const ClassifierModelT<T>& classifier, const TensorT<T>& x_t,
                                    const TensorT<T>& mu, double t, const SoftLabel& d) {
    d.validate();
    TensorT<T> out = TensorT<T>::zeros(x_t.shape);
    for (int i = 0; i < d.size(); ++i) {
        const double w = d.weights[static_cast<size_t>(i)];
        if (w == 0.0) continue;
        const TensorT<T> gi = classifier.class_log_prob_grad(x_t, mu, t, i);
        for (size_t k = 0; k < out.data.size(); ++k)
            out.data[k] += static_cast<T>(w * static_cast<double>(gi.data[k]));
    }
    return out;
}

// s(x_t, mu, t) + gamma * grad_x log p(d | x_t, mu, t)
template <typename T>
TensorT<T> guided_score(const AcousticModelT<T>& acoustic, const ClassifierModelT<T>& classifier,
                        const TensorT<T>& x_t, const TensorT<T>& mu, double t, const SoftLabel& d,
                        double gamma, const NoiseSchedule& sched) {
    if (gamma < 0.0) throw std::domain_error("guidance: gamma must be >= 0");
    TensorT<T> s = acoustic.score_eval(x_t, mu, t, sched);
    if (gamma == 0.0) return s;
    const TensorT<T> g = soft_label_grad(classifier, x_t, mu, t, d);
    for (size_t i = 0; i < s.data.size(); ++i)
        s.data[i] += static_cast<T>(gamma * static_cast<double>(g.data[i]));
    return s;
}

struct GuidanceConfig {
    double gamma = 30.0;
    SolverConfig solver;

    void validate() const {
        if (gamma < 0.0) throw std::domain_error("guidance: gamma must be >= 0");
        solver.validate();
    }
};

template <typename T>
struct SampleOutput {
    TensorT<T> frames;
    std::vector<int> tokens;
    std::vector<int> durations;
};

namespace detail {

// Shared reverse-SDE loop. Predicts mu and durations from the tokens, draws
// x1 ~ N(mu, I), and runs Euler-Maruyama from t = 1 to t = 0 with the caller's
// guidance gradient added to the unconditional score at every step.
template <typename T, typename GuidanceFn>
SampleOutput<T> run_reverse(const AcousticModelT<T>& acoustic, const std::vector<int>& tokens,
                            const GuidanceConfig& cfg, const NoiseSchedule& sched,
                            GuidanceFn&& guidance_grad, std::vector<TensorT<T>>* trace) {
    cfg.validate();
    SampleOutput<T> out;
    out.tokens = tokens;
    out.durations = acoustic.predict_durations(tokens);
    const TensorT<T> mu = acoustic.predict_mu(tokens, out.durations);

    Rng rng = Rng::stream(cfg.solver.seed, "sample-path");
    TensorT<T> x = mu;
    for (auto& v : x.data) v += static_cast<T>(rng.normal());
    if (trace) {
        trace->clear();
        trace->push_back(x);
    }

    const int n = cfg.solver.n_steps;
    const double dt = 1.0 / n;
    for (int k = n; k >= 1; --k) {
        const double t = static_cast<double>(k) * dt;
        TensorT<T> s = acoustic.score_eval(x, mu, t, sched);
        if (cfg.gamma > 0.0) {
            const TensorT<T> g = guidance_grad(x, mu, t);
            for (size_t i = 0; i < s.data.size(); ++i)
                s.data[i] += static_cast<T>(cfg.gamma * static_cast<double>(g.data[i]));
        }
        x = reverse_step(x, t, dt, mu, s, sched, rng);
        if (trace) trace->push_back(x);
    }
    out.frames = std::move(x);
    return out;
}

}  // namespace detail

// Soft-label guided sampling (the alpha = 1 / alpha = 0 cases reduce exactly
// to one-hot classifier guidance).
template <typename T>
SampleOutput<T> sample(const AcousticModelT<T>& acoustic, const ClassifierModelT<T>& classifier,
                       const std::vector<int>& tokens, const SoftLabel& d, const GuidanceConfig& cfg,
                       const NoiseSchedule& sched, std::vector<TensorT<T>>* trace = nullptr) {
    d.validate();
    if (d.size() != classifier.arch.num_emotions)
        throw std::invalid_argument("sample: soft label length does not match the classifier");
    return detail::run_reverse(acoustic, tokens, cfg, sched,
                               [&](const TensorT<T>& x, const TensorT<T>& mu, double t) {
                                   return soft_label_grad(classifier, x, mu, t, d);
                               },
                               trace);
}

// Hard one-hot classifier guidance: the reference implementation the soft
// path must reduce to at alpha in {0, 1}.
template <typename T>
SampleOutput<T> sample_hard(const AcousticModelT<T>& acoustic, const ClassifierModelT<T>& classifier,
                            const std::vector<int>& tokens, int label, const GuidanceConfig& cfg,
                            const NoiseSchedule& sched, std::vector<TensorT<T>>* trace = nullptr) {
    if (label < 0 || label >= classifier.arch.num_emotions)
        throw std::domain_error("sample: label out of range");
    return detail::run_reverse(acoustic, tokens, cfg, sched,
                               [&](const TensorT<T>& x, const TensorT<T>& mu, double t) {
                                   return classifier.class_log_prob_grad(x, mu, t, label);
                               },
                               trace);
}

}  // namespace emosde
