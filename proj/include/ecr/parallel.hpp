#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ecr {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Splits [0, count) into one contiguous block per worker and runs
/// body(worker, begin, end) on each. The first exception thrown by any
/// worker is rethrown on the calling thread.
template <class Body>
void parallel_blocks(std::size_t count, int threads, Body&& body) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), count);
    if (workers <= 1) {
        if (count > 0) body(std::size_t{0}, std::size_t{0}, count);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                body(w, count * w / workers, count * (w + 1) / workers);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

/// Runs body(i) for i in [0, count); body must only write to state owned
/// by index i.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
    parallel_blocks(count, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) body(i);
    });
}

}  // namespace ecr
