#pragma once

#include <cstddef>
#include <functional>

namespace pebm {

// Process-wide worker pool for data-parallel loops. Work is split into
// contiguous index ranges, so results are independent of the worker count
// as long as the loop body writes disjoint outputs.
//
// Worker count: PEBM_THREADS env var if set, else hardware concurrency.
class ThreadPool {
public:
    static ThreadPool& instance();

    // Runs fn(begin, end) over a partition of [0, n). Serial when the pool
    // has one worker or n is small. Blocks until every range completes.
    void parallel_for(std::size_t n, std::size_t min_grain,
                      const std::function<void(std::size_t, std::size_t)>& fn);

    int num_threads() const { return num_threads_; }

    ~ThreadPool();
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    ThreadPool();
    struct Impl;
    Impl* impl_;
    int num_threads_;
};

inline void parallel_for(std::size_t n, std::size_t min_grain,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
    ThreadPool::instance().parallel_for(n, min_grain, fn);
}

} // namespace pebm
