#include "pebm/thread_pool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace pebm {

namespace {
// Nested parallel_for calls (and calls from inside a worker) run serially.
thread_local bool g_inside_pool_job = false;
} // namespace

struct ThreadPool::Impl {
    std::vector<std::thread> workers;
    std::mutex submit_mu; // one job at a time
    std::mutex mu;
    std::condition_variable cv_work;
    std::condition_variable cv_done;
    bool shutdown = false;

    // Current job; workers grab chunk indices from next_chunk.
    std::uint64_t generation = 0;
    const std::function<void(std::size_t, std::size_t)>* job = nullptr;
    std::size_t total = 0;
    std::size_t chunk = 0;
    std::atomic<std::size_t> next_chunk{0};
    std::size_t num_chunks = 0;
    std::atomic<std::size_t> chunks_done{0};

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lk(mu);
                cv_work.wait(lk, [&] { return shutdown || generation != seen; });
                if (shutdown) return;
                seen = generation;
            }
            run_chunks();
        }
    }

    void run_chunks() {
        g_inside_pool_job = true;
        for (;;) {
            const std::size_t c = next_chunk.fetch_add(1);
            if (c >= num_chunks) break;
            const std::size_t b = c * chunk;
            const std::size_t e = std::min(total, b + chunk);
            (*job)(b, e);
            if (chunks_done.fetch_add(1) + 1 == num_chunks) {
                std::lock_guard lk(mu);
                cv_done.notify_all();
            }
        }
        g_inside_pool_job = false;
    }
};

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

ThreadPool::ThreadPool() : impl_(new Impl) {
    int n = 0;
    if (const char* env = std::getenv("PEBM_THREADS")) {
        n = std::atoi(env);
    }
    if (n <= 0) {
        n = static_cast<int>(std::thread::hardware_concurrency());
    }
    if (n <= 0) n = 1;
    num_threads_ = n;
    for (int i = 1; i < n; ++i) {
        impl_->workers.emplace_back([this] { impl_->worker_loop(); });
    }
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard lk(impl_->mu);
        impl_->shutdown = true;
        impl_->cv_work.notify_all();
    }
    for (auto& w : impl_->workers) w.join();
    delete impl_;
}

void ThreadPool::parallel_for(std::size_t n, std::size_t min_grain,
                              const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (min_grain == 0) min_grain = 1;
    const std::size_t max_chunks =
        static_cast<std::size_t>(num_threads_) * 4;
    if (g_inside_pool_job || num_threads_ == 1 || n <= min_grain ||
        max_chunks < 2) {
        fn(0, n);
        return;
    }
    std::size_t chunk = (n + max_chunks - 1) / max_chunks;
    if (chunk < min_grain) chunk = min_grain;
    const std::size_t num_chunks = (n + chunk - 1) / chunk;
    if (num_chunks < 2) {
        fn(0, n);
        return;
    }

    std::lock_guard submit_lk(impl_->submit_mu);
    {
        std::lock_guard lk(impl_->mu);
        impl_->job = &fn;
        impl_->total = n;
        impl_->chunk = chunk;
        impl_->num_chunks = num_chunks;
        impl_->next_chunk.store(0);
        impl_->chunks_done.store(0);
        ++impl_->generation;
        impl_->cv_work.notify_all();
    }
    // The calling thread participates too.
    impl_->run_chunks();
    std::unique_lock lk(impl_->mu);
    impl_->cv_done.wait(lk, [&] {
        return impl_->chunks_done.load() == impl_->num_chunks;
    });
    impl_->job = nullptr;
}

} // namespace pebm
