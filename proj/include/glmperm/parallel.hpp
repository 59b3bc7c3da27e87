#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace glmperm {

namespace detail {

inline std::atomic<std::size_t>& thread_setting() {
    static std::atomic<std::size_t> n{std::max<std::size_t>(1, std::thread::hardware_concurrency())};
    return n;
}

inline bool& inside_parallel_region() {
    thread_local bool inside = false;
    return inside;
}

} // namespace detail

inline void set_thread_count(std::size_t n) {
    detail::thread_setting() = n == 0 ? std::max<std::size_t>(1, std::thread::hardware_concurrency()) : n;
}

inline std::size_t thread_count() { return detail::thread_setting(); }

// Runs body(i) for i in [0, n). Work is handed out dynamically, so callers must
// write into per-index slots (or reduce with an order-independent operation).
// Nested calls run serially on the calling worker.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1 || detail::inside_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        detail::inside_parallel_region() = true;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
        detail::inside_parallel_region() = false;
    };

    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

} // namespace glmperm
