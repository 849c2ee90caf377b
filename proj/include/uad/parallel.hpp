#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace uad {

// Runs f(lo, hi) over a fixed contiguous partition of [0, n). The partition
// depends only on n and the thread count, and every reduction a caller
// performs inside one chunk stays sequential, so results are reproducible.
template <typename F>
void parallel_for_chunks(std::size_t n, int threads, F&& f) {
    if (n == 0) return;
    const std::size_t t = std::min<std::size_t>(std::max(threads, 1), n);
    if (t <= 1) {
        f(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t - 1);
    std::exception_ptr error;
    std::mutex error_mutex;
    const std::size_t base = n / t, rem = n % t;
    std::size_t lo = 0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t hi = lo + base + (i < rem ? 1 : 0);
        ranges.emplace_back(lo, hi);
        lo = hi;
    }
    auto run = [&](std::size_t a, std::size_t b) {
        try {
            f(a, b);
        } catch (...) {
            std::lock_guard<std::mutex> g(error_mutex);
            if (!error) error = std::current_exception();
        }
    };
    for (std::size_t i = 1; i < t; ++i) pool.emplace_back(run, ranges[i].first, ranges[i].second);
    run(ranges[0].first, ranges[0].second);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace uad
