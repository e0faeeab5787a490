#include "emosde/sde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

namespace emosde {

std::vector<ForwardMomentsRow> forward_moments(const std::vector<double>& x0,
                                               const std::vector<double>& mu,
                                               const NoiseSchedule& sched, int n_steps, int n_paths,
                                               const std::vector<double>& capture_times,
                                               uint64_t seed, int threads) {
    if (x0.size() != mu.size() || x0.empty())
        throw std::invalid_argument("forward_moments: x0/mu size mismatch");
    if (n_steps < 1 || n_paths < 2) throw std::domain_error("forward_moments: bad step/path count");
    const int dim = static_cast<int>(x0.size());
    const double dt = 1.0 / n_steps;

    // Capture after the step whose end time is closest to the requested time.
    std::vector<int> capture_steps;
    for (double t : capture_times) {
        if (!(t > 0.0) || !(t <= 1.0))
            throw std::domain_error("forward_moments: capture time outside (0, 1]");
        capture_steps.push_back(
            std::clamp(static_cast<int>(std::lround(t * n_steps)), 1, n_steps));
    }

    const size_t n_cap = capture_times.size();
    struct Acc {
        std::vector<double> sum, sumsq;
    };
    const int n_threads = std::max(1, threads);
    std::vector<std::vector<Acc>> partial(static_cast<size_t>(n_threads),
                                          std::vector<Acc>(n_cap));
    for (auto& per_thread : partial)
        for (auto& acc : per_thread) {
            acc.sum.assign(static_cast<size_t>(dim), 0.0);
            acc.sumsq.assign(static_cast<size_t>(dim), 0.0);
        }

    auto run_paths = [&](int thread_idx, int lo, int hi) {
        std::vector<double> x(static_cast<size_t>(dim));
        auto& accs = partial[static_cast<size_t>(thread_idx)];
        for (int path = lo; path < hi; ++path) {
            Rng rng = Rng::stream(seed, "forward-moments", static_cast<uint64_t>(path));
            x = x0;
            for (int k = 0; k < n_steps; ++k) {
                const double t = k * dt;
                const double beta = sched.beta(t);
                const double noise_scale = std::sqrt(beta * dt);
                for (int d = 0; d < dim; ++d) {
                    const size_t di = static_cast<size_t>(d);
                    x[di] += 0.5 * (mu[di] - x[di]) * beta * dt + noise_scale * rng.normal();
                }
                for (size_t c = 0; c < n_cap; ++c) {
                    if (capture_steps[c] != k + 1) continue;
                    for (int d = 0; d < dim; ++d) {
                        const size_t di = static_cast<size_t>(d);
                        accs[c].sum[di] += x[di];
                        accs[c].sumsq[di] += x[di] * x[di];
                    }
                }
            }
        }
    };

    if (n_threads == 1) {
        run_paths(0, 0, n_paths);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n_paths + n_threads - 1) / n_threads;
        for (int ti = 0; ti < n_threads; ++ti) {
            const int lo = ti * chunk;
            const int hi = std::min(n_paths, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_paths, ti, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    std::vector<ForwardMomentsRow> rows;
    for (size_t c = 0; c < n_cap; ++c) {
        ForwardMomentsRow row;
        row.t = capture_steps[c] * dt;
        row.n_paths = n_paths;
        const MarginalParams mp = sched.marginal_params(row.t);
        row.exact_var = mp.variance;
        row.mean_se = std::sqrt(mp.variance / n_paths);
        row.empirical_mean.resize(static_cast<size_t>(dim));
        row.empirical_var.resize(static_cast<size_t>(dim));
        row.exact_mean.resize(static_cast<size_t>(dim));
        for (int d = 0; d < dim; ++d) {
            const size_t di = static_cast<size_t>(d);
            double sum = 0.0, sumsq = 0.0;
            for (const auto& per_thread : partial) {
                sum += per_thread[c].sum[di];
                sumsq += per_thread[c].sumsq[di];
            }
            const double mean = sum / n_paths;
            row.empirical_mean[di] = mean;
            row.empirical_var[di] = (sumsq - n_paths * mean * mean) / (n_paths - 1);
            row.exact_mean[di] = mp.mean_coeff_x0 * x0[di] + mp.mean_coeff_mu * mu[di];
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace emosde
