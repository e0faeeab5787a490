#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace emosde {

// Runs fn(0..n_jobs-1) on up to `threads` workers. Jobs must be independent;
// each writes its own output slot, so results do not depend on the thread
// count or schedule. The first exception is rethrown after all workers join.
inline void parallel_for_jobs(int n_jobs, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n_jobs <= 1) {
        for (int i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const int n_workers = std::min(threads, n_jobs);
    for (int w = 0; w < n_workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n_jobs) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace emosde
