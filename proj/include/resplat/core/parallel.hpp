#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace resplat {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
    static std::atomic<int> n{static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))};
    return n;
}
} // namespace detail

inline int thread_count() { return detail::thread_count_slot().load(); }
inline void set_thread_count(int n) { detail::thread_count_slot().store(std::max(1, n)); }

/// Runs fn(worker, begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the thread count, so per-worker buffers merged in worker
/// order give results that are deterministic for a fixed thread count.
template <class Fn>
void parallel_chunks(std::int64_t n, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::int64_t>(thread_count(), std::max<std::int64_t>(n, 1)));
    if (workers <= 1) {
        fn(0, std::int64_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::int64_t step = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        const std::int64_t b = std::min(n, w * step), e = std::min(n, (w + 1) * step);
        pool.emplace_back([&fn, w, b, e] { fn(w, b, e); });
    }
    fn(0, std::int64_t{0}, std::min(n, step));
    for (auto& t : pool) t.join();
}

inline int chunk_workers(std::int64_t n) {
    return static_cast<int>(std::min<std::int64_t>(thread_count(), std::max<std::int64_t>(n, 1)));
}

} // namespace resplat
