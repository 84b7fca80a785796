#pragma once

// Row-sliced worker pool for the forward passes. Each output row is produced
// by exactly one worker with the same per-pixel arithmetic order as the
// serial loop, so results are bit-identical for any thread count.

#include <cstdint>
#include <thread>
#include <vector>

namespace dpn::detail {

template <typename Fn>
void parallel_rows(std::uint32_t rows, unsigned threads, Fn&& fn) {
    if (threads <= 1 || rows <= 1) {
        for (std::uint32_t y = 0; y < rows; ++y) fn(y);
        return;
    }
    const unsigned workers = std::min<unsigned>(threads, rows);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&, t] {
            for (std::uint32_t y = t; y < rows; y += workers) fn(y);
        });
    for (auto& th : pool) th.join();
}

}  // namespace dpn::detail
