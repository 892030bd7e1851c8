#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace lode {

// Fixed-size chunk decomposition: the chunk grid depends only on (n, chunk),
// never on the worker count, so per-chunk partial results reduced in chunk
// order give bit-identical totals for any number of threads.
inline size_t chunk_count(size_t n, size_t chunk) { return n == 0 ? 0 : (n + chunk - 1) / chunk; }

template <typename Fn>
void parallel_chunks(size_t n, size_t chunk, int threads, Fn&& fn) {
    size_t nchunks = chunk_count(n, chunk);
    if (nchunks == 0) return;
    if (threads <= 1 || nchunks == 1) {
        for (size_t c = 0; c < nchunks; ++c) fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t c = next.fetch_add(1);
            if (c >= nchunks) return;
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        }
    };
    size_t nw = std::min<size_t>(size_t(threads), nchunks);
    std::vector<std::thread> pool;
    pool.reserve(nw - 1);
    for (size_t t = 1; t < nw; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

} // namespace lode
