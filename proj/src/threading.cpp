#include "kelab/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace kelab {

namespace {

int resolve_thread_count() {
    if (const char* env = std::getenv("KELAB_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Minimal persistent pool; workers idle on a condition variable between
// parallel_for calls.
class Pool {
public:
    explicit Pool(int workers) {
        for (int i = 1; i < workers; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i); });
        }
        n_workers_ = workers;
    }

    ~Pool() {
        {
            std::unique_lock lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int parts = static_cast<int>(std::min<int64_t>(n_workers_, n));
        if (parts == 1) {
            fn(0, n);
            return;
        }
        {
            std::unique_lock lk(mu_);
            job_ = &fn;
            job_n_ = n;
            job_parts_ = parts;
            pending_ = parts - 1;
            ++generation_;
        }
        cv_.notify_all();
        run_chunk(0);
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    void run_chunk(int part) {
        int64_t chunk = (job_n_ + job_parts_ - 1) / job_parts_;
        int64_t begin = part * chunk;
        int64_t end = std::min<int64_t>(begin + chunk, job_n_);
        if (begin < end) (*job_)(begin, end);
    }

    void worker_loop(int index) {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            if (index < job_parts_) {
                run_chunk(index);
                std::unique_lock lk(mu_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int64_t, int64_t)>* job_ = nullptr;
    int64_t job_n_ = 0;
    int job_parts_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    int n_workers_ = 1;
    bool stop_ = false;
};

}  // namespace

int thread_count() {
    static int n = resolve_thread_count();
    return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    static Pool pool(thread_count());
    pool.run(n, fn);
}

}  // namespace kelab
