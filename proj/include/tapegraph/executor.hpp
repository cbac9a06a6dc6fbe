#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tapegraph {

/// Fixed-size worker pool fed by a FIFO injection queue. With one worker,
/// jobs run strictly in submission order.
class Executor {
 public:
  explicit Executor(std::size_t worker_count);
  ~Executor();

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  void post(std::function<void()> job);

  std::size_t worker_count() const noexcept { return workers_.size(); }

  /// True when called from one of this executor's worker threads.
  bool in_worker_thread() const noexcept;

 private:
  void worker_loop();

  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

/// Reads TAPEGRAPH_WORKERS, falling back to `fallback` when unset or invalid.
std::size_t default_worker_count(std::size_t fallback = 1);

}  // namespace tapegraph
