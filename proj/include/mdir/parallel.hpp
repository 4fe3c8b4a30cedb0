#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mdir {

// Global worker-thread cap. 0 = one thread per hardware core.
// Work is always partitioned into fixed-size blocks, so numeric results do
// not depend on the thread count; set_num_threads(1) is the documented
// single-threaded mode.
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{1};
    return cap;
}

inline void set_num_threads(int n) { thread_cap().store(n < 0 ? 0 : n); }

inline int num_threads() {
    int n = thread_cap().load();
    if (n == 0) {
        unsigned hc = std::thread::hardware_concurrency();
        n = hc == 0 ? 1 : static_cast<int>(hc);
    }
    return n;
}

// Runs fn(begin, end) over [0, total) in fixed blocks. Blocks must write
// disjoint outputs; any accumulation inside a block keeps its serial order.
template <class Fn>
void parallel_blocks(std::int64_t total, std::int64_t block, const Fn& fn) {
    if (total <= 0) return;
    const std::int64_t nblocks = (total + block - 1) / block;
    const int nt = num_threads();
    if (nt <= 1 || nblocks <= 1) {
        for (std::int64_t b = 0; b < nblocks; ++b)
            fn(b * block, std::min(total, (b + 1) * block));
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt)
    for (std::int64_t b = 0; b < nblocks; ++b)
        fn(b * block, std::min(total, (b + 1) * block));
#else
    for (std::int64_t b = 0; b < nblocks; ++b)
        fn(b * block, std::min(total, (b + 1) * block));
#endif
}

}  // namespace mdir
