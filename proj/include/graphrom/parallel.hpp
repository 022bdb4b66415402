#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace graphrom {

inline int hardware_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

/// Runs fn(i) for i in [0, n). Work is block-partitioned across threads.
/// Callers that need bitwise thread-count independence must write results
/// into per-index slots and reduce in index order afterwards.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    const int t = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t lo = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(t);
            const std::size_t hi = n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(t);
            for (std::size_t i = lo; i < hi; ++i) fn(i, w);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace graphrom
