#include "pdnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace pdnet {
namespace {

thread_local bool t_inside_pool = false;

int default_workers() {
    if (const char* env = std::getenv("PDNET_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 2u));
}

std::atomic<int> g_workers{default_workers()};

// One persistent helper thread; the caller executes the first chunk itself.
// Enough for the two-core target; extend to a real pool if wider machines matter.
class Helper {
  public:
    static Helper& instance() {
        static Helper h;
        return h;
    }

    void run(const std::function<void()>& job) {
        {
            std::unique_lock<std::mutex> lk(m_);
            job_ = &job;
            has_job_ = true;
        }
        cv_.notify_one();
    }

    void wait() {
        std::unique_lock<std::mutex> lk(m_);
        done_cv_.wait(lk, [this] { return !has_job_; });
    }

  private:
    Helper() {
        worker_ = std::thread([this] {
            t_inside_pool = true;
            std::unique_lock<std::mutex> lk(m_);
            for (;;) {
                cv_.wait(lk, [this] { return has_job_ || stop_; });
                if (stop_) return;
                const std::function<void()>* job = job_;
                lk.unlock();
                (*job)();
                lk.lock();
                has_job_ = false;
                done_cv_.notify_all();
            }
        });
    }

    ~Helper() {
        {
            std::unique_lock<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_.notify_one();
        worker_.join();
    }

    std::thread worker_;
    std::mutex m_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void()>* job_ = nullptr;
    bool has_job_ = false;
    bool stop_ = false;
};

}  // namespace

int worker_count() { return g_workers.load(std::memory_order_relaxed); }

void set_worker_count(int n) { g_workers.store(std::max(1, n), std::memory_order_relaxed); }

std::mutex& helper_owner_mutex() {
    static std::mutex m;
    return m;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = worker_count();
    if (workers < 2 || n < 2 || t_inside_pool) {
        fn(0, n);
        return;
    }
    // the single helper serves one caller at a time; concurrent callers fall
    // back to inline execution (results are split-independent by contract)
    std::unique_lock<std::mutex> owner(helper_owner_mutex(), std::try_to_lock);
    if (!owner.owns_lock()) {
        fn(0, n);
        return;
    }
    const std::int64_t mid = n / 2;
    std::function<void()> job = [&fn, mid, n] { fn(mid, n); };
    Helper::instance().run(job);
    {
        const bool prev = t_inside_pool;
        t_inside_pool = true;
        fn(0, mid);
        t_inside_pool = prev;
    }
    Helper::instance().wait();
}

}  // namespace pdnet
