#include "mcseg/common.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace mcseg {

namespace {

std::atomic<bool> g_debug_checks{false};
thread_local bool t_inside_pool = false;

int resolve_thread_count_from_env() {
  const char* env = std::getenv("MCSEG_THREADS");
  if (env != nullptr) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1 && v <= 256) return static_cast<int>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  if (hc == 0) hc = 1;
  return static_cast<int>(hc > 4 ? 4 : hc);
}

// Minimal persistent worker pool. parallel_for splits [begin,end) into one
// contiguous chunk per participant; chunk boundaries depend only on the range
// and the participant count, never on scheduling.
class Pool {
 public:
  static Pool& instance() {
    static Pool* pool = new Pool();  // leaked: detached workers may outlive exit
    return *pool;
  }

  void set_threads(int n) {
    std::lock_guard<std::mutex> lk(config_mutex_);
    threads_ = n < 1 ? 1 : n;
  }

  int threads() {
    std::lock_guard<std::mutex> lk(config_mutex_);
    if (threads_ == 0) threads_ = resolve_thread_count_from_env();
    return threads_;
  }

  void run(std::int64_t begin, std::int64_t end,
           const std::function<void(std::int64_t)>& fn) {
    const std::int64_t len = end - begin;
    if (len <= 0) return;
    int n = threads();
    if (n > len) n = static_cast<int>(len);
    // Nested or trivially small jobs run inline.
    if (n == 1 || t_inside_pool) {
      for (std::int64_t i = begin; i < end; ++i) fn(i);
      return;
    }

    std::lock_guard<std::mutex> serial(run_mutex_);
    ensure_workers(n - 1);
    {
      std::lock_guard<std::mutex> lk(mutex_);
      job_fn_ = &fn;
      job_begin_ = begin;
      job_len_ = len;
      job_parts_ = n;
      pending_ = n - 1;
      ++generation_;
    }
    cv_.notify_all();

    run_chunk(fn, begin, len, n, 0);  // part 0 runs on the calling thread

    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() = default;

  static void run_chunk(const std::function<void(std::int64_t)>& fn,
                        std::int64_t begin, std::int64_t len, int parts,
                        int part) {
    const std::int64_t lo = begin + len * part / parts;
    const std::int64_t hi = begin + len * (part + 1) / parts;
    for (std::int64_t i = lo; i < hi; ++i) fn(i);
  }

  void ensure_workers(int count) {
    std::lock_guard<std::mutex> lk(mutex_);
    while (static_cast<int>(workers_.size()) < count) {
      int part = static_cast<int>(workers_.size()) + 1;
      workers_.emplace_back([this, part] { worker_loop(part); });
      workers_.back().detach();
    }
  }

  void worker_loop(int part) {
    t_inside_pool = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t)>* fn = nullptr;
      std::int64_t begin = 0, len = 0;
      int parts = 0;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return generation_ != seen; });
        seen = generation_;
        if (part < job_parts_) {
          fn = job_fn_;
          begin = job_begin_;
          len = job_len_;
          parts = job_parts_;
        }
      }
      if (fn == nullptr) continue;  // not a participant this round
      run_chunk(*fn, begin, len, parts, part);
      std::lock_guard<std::mutex> lk(mutex_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::mutex config_mutex_;
  int threads_ = 0;

  std::mutex run_mutex_;  // serializes top-level parallel_for calls
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  const std::function<void(std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_begin_ = 0;
  std::int64_t job_len_ = 0;
  int job_parts_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }

int thread_count() { return Pool::instance().threads(); }
void set_thread_count(int n) { Pool::instance().set_threads(n); }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn) {
  Pool::instance().run(begin, end, fn);
}

}  // namespace mcseg
