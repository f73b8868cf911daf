#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace taskadapt {

// Runs independent jobs on up to `parallelism` threads. Jobs write into
// pre-assigned result slots, so the assembled output never depends on
// scheduling order. The first job exception is rethrown after all workers
// finish.
inline void run_jobs(const std::vector<std::function<void()>>& jobs, int parallelism) {
    if (parallelism <= 1 || jobs.size() <= 1) {
        for (const auto& job : jobs) job();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(parallelism), jobs.size());
    threads.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace taskadapt
