#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "emosde/rng.hpp"
#include "emosde/tensor.hpp"

namespace emosde {

struct MarginalParams {
    double mean_coeff_x0 = 1.0;  // e^{-B(t)/2}
    double mean_coeff_mu = 0.0;  // 1 - e^{-B(t)/2}
    double variance = 0.0;       // lambda_t = 1 - e^{-B(t)}
};

// Linear noise schedule beta(t) = beta0 + (beta1 - beta0) * t on t in [0, 1].
// Valid schedules are strictly increasing and destroy essentially all signal
// by t = 1: exp(-B(1)) <= 1e-4.
class NoiseSchedule {
public:
    NoiseSchedule() : NoiseSchedule(0.05, 20.0) {}

    NoiseSchedule(double beta0, double beta1) : beta0_(beta0), beta1_(beta1) {
        if (!(beta0 > 0.0) || !(beta1 > beta0))
            throw std::domain_error("noise schedule: requires beta1 > beta0 > 0");
        const double terminal = std::exp(-beta_integral_unchecked(1.0));
        if (terminal > 1e-4)
            throw std::domain_error("noise schedule: exp(-B(1)) > 1e-4, terminal distribution too far from N(mu, I)");
    }

    double beta0() const { return beta0_; }
    double beta1() const { return beta1_; }

    double beta(double t) const {
        check_time(t);
        return beta0_ + (beta1_ - beta0_) * t;
    }

    // B(t) = int_0^t beta(s) ds = beta0*t + (beta1 - beta0)*t^2/2
    double beta_integral(double t) const {
        check_time(t);
        return beta_integral_unchecked(t);
    }

    MarginalParams marginal_params(double t) const {
        check_time(t);
        const double b = beta_integral_unchecked(t);
        const double a = std::exp(-0.5 * b);
        MarginalParams mp;
        mp.mean_coeff_x0 = a;
        mp.mean_coeff_mu = 1.0 - a;
        mp.variance = 1.0 - std::exp(-b);
        return mp;
    }

private:
    static void check_time(double t) {
        if (!(t >= 0.0) || !(t <= 1.0)) throw std::domain_error("noise schedule: t outside [0, 1]");
    }

    double beta_integral_unchecked(double t) const {
        return beta0_ * t + 0.5 * (beta1_ - beta0_) * t * t;
    }

    double beta0_;
    double beta1_;
};

struct SolverConfig {
    int n_steps = 100;
    uint64_t seed = 0;

    void validate() const {
        if (n_steps < 1) throw std::domain_error("solver config: n_steps must be >= 1");
    }
};

template <typename T>
struct ForwardSample {
    TensorT<T> x_t;
    TensorT<T> score_target;  // grad_x log p(x_t | x0) = -eps / sqrt(lambda_t)
};

// Core of the forward sampler with the noise supplied by the caller; the
// public overload draws eps from an rng stream.
template <typename T>
ForwardSample<T> sample_forward_with_eps(const TensorT<T>& x0, const TensorT<T>& mu, double t,
                                         const NoiseSchedule& sched, const TensorT<T>& eps) {
    if (!x0.same_shape(mu) || !x0.same_shape(eps))
        throw std::invalid_argument("sample_forward: shape mismatch");
    if (t <= 0.0)
        throw std::domain_error("sample_forward: lambda(0) = 0, score target undefined at t = 0");
    const MarginalParams mp = sched.marginal_params(t);
    const double sd = std::sqrt(mp.variance);
    ForwardSample<T> out;
    out.x_t = TensorT<T>::zeros(x0.shape);
    out.score_target = TensorT<T>::zeros(x0.shape);
    for (size_t i = 0; i < x0.data.size(); ++i) {
        const double rho = mp.mean_coeff_x0 * static_cast<double>(x0.data[i]) +
                           mp.mean_coeff_mu * static_cast<double>(mu.data[i]);
        const double e = static_cast<double>(eps.data[i]);
        out.x_t.data[i] = static_cast<T>(rho + sd * e);
        out.score_target.data[i] = static_cast<T>(-e / sd);
    }
    return out;
}

template <typename T>
ForwardSample<T> sample_forward(const TensorT<T>& x0, const TensorT<T>& mu, double t,
                                const NoiseSchedule& sched, Rng& rng) {
    TensorT<T> eps = TensorT<T>::zeros(x0.shape);
    for (auto& e : eps.data) e = static_cast<T>(rng.normal());
    return sample_forward_with_eps(x0, mu, t, sched, eps);
}

// One Euler-Maruyama update of the reverse-time SDE, expressed directly in
// terms of the local rate beta = beta(t) and the Brownian increment z:
//   x <- x - [0.5*(mu - x) - score] * beta * dt + sqrt(beta*dt) * z
template <typename T>
TensorT<T> reverse_step_raw(const TensorT<T>& x, double beta, double dt, const TensorT<T>& mu,
                            const TensorT<T>& score, const TensorT<T>& z) {
    if (!x.same_shape(mu) || !x.same_shape(score) || !x.same_shape(z))
        throw std::invalid_argument("reverse_step: shape mismatch");
    if (!(dt > 0.0)) throw std::domain_error("reverse_step: dt must be positive");
    const double noise_scale = std::sqrt(beta * dt);
    TensorT<T> out = TensorT<T>::zeros(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double xi = static_cast<double>(x.data[i]);
        const double drift = (0.5 * (static_cast<double>(mu.data[i]) - xi) -
                              static_cast<double>(score.data[i])) *
                             beta * dt;
        out.data[i] = static_cast<T>(xi - drift + noise_scale * static_cast<double>(z.data[i]));
    }
    return out;
}

template <typename T>
TensorT<T> reverse_step(const TensorT<T>& x, double t, double dt, const TensorT<T>& mu,
                        const TensorT<T>& score, const NoiseSchedule& sched, Rng& rng) {
    if (!(dt > 0.0)) throw std::domain_error("reverse_step: dt must be positive");
    if (t - dt < -1e-12) throw std::domain_error("reverse_step: step crosses t = 0");
    TensorT<T> z = TensorT<T>::zeros(x.shape);
    for (auto& v : z.data) v = static_cast<T>(rng.normal());
    return reverse_step_raw(x, sched.beta(t), dt, mu, score, z);
}

// Euler-Maruyama simulation of the forward SDE from t = 0 to t_end. Used to
// validate the closed-form marginals, not in training.
template <typename T>
TensorT<T> simulate_forward_sde(const TensorT<T>& x0, const TensorT<T>& mu,
                                const NoiseSchedule& sched, const SolverConfig& cfg,
                                double t_end = 1.0) {
    if (!x0.same_shape(mu)) throw std::invalid_argument("simulate_forward_sde: shape mismatch");
    cfg.validate();
    if (!(t_end > 0.0) || !(t_end <= 1.0))
        throw std::domain_error("simulate_forward_sde: t_end outside (0, 1]");
    Rng rng = Rng::stream(cfg.seed, "forward-sde");
    const double dt = t_end / cfg.n_steps;
    TensorT<T> x = x0;
    for (int k = 0; k < cfg.n_steps; ++k) {
        const double t = k * dt;
        const double beta = sched.beta(t);
        const double noise_scale = std::sqrt(beta * dt);
        for (size_t i = 0; i < x.data.size(); ++i) {
            const double xi = static_cast<double>(x.data[i]);
            const double drift = 0.5 * (static_cast<double>(mu.data[i]) - xi) * beta * dt;
            x.data[i] = static_cast<T>(xi + drift + noise_scale * rng.normal());
        }
    }
    return x;
}

// Empirical moments of the forward SDE at selected times, against the closed
// forms. One row per capture time.
struct ForwardMomentsRow {
    double t = 0.0;
    std::vector<double> empirical_mean;
    std::vector<double> empirical_var;
    std::vector<double> exact_mean;  // rho(x0, mu, t)
    double exact_var = 0.0;          // lambda_t
    double mean_se = 0.0;            // sqrt(lambda_t / n_paths)
    int n_paths = 0;
};

std::vector<ForwardMomentsRow> forward_moments(const std::vector<double>& x0,
                                               const std::vector<double>& mu,
                                               const NoiseSchedule& sched, int n_steps,
                                               int n_paths,
                                               const std::vector<double>& capture_times,
                                               uint64_t seed, int threads = 1);

}  // namespace emosde
