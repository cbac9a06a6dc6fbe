#include "tapegraph/executor.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

#include "tapegraph/error.hpp"
#include "tapegraph/task.hpp"

namespace tapegraph {

namespace {
thread_local const Executor* current_executor = nullptr;
}

Executor::Executor(std::size_t worker_count) {
  if (worker_count == 0) throw usage_error("executor needs at least one worker");
  workers_.reserve(worker_count);
  for (std::size_t i = 0; i < worker_count; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

Executor::~Executor() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  ready_.notify_all();
  for (auto& t : workers_) t.join();
}

void Executor::post(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(job));
  }
  ready_.notify_one();
}

bool Executor::in_worker_thread() const noexcept { return current_executor == this; }

void Executor::worker_loop() {
  current_executor = this;
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    try {
      job();
    } catch (const std::exception& e) {
      // Task plumbing routes errors through callbacks; reaching here means a
      // callback itself threw.
      std::cerr << "tapegraph: uncaught exception in worker: " << e.what() << '\n';
    }
  }
}

std::size_t default_worker_count(std::size_t fallback) {
  const char* env = std::getenv("TAPEGRAPH_WORKERS");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(env, &pos);
    if (pos == std::string(env).size() && n >= 1) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  return fallback;
}

}  // namespace tapegraph

namespace tapegraph::detail {

void debug_log(std::string_view message) {
  static const bool enabled = [] {
    const char* env = std::getenv("TAPEGRAPH_DEBUG");
    return env != nullptr && *env != '\0' && std::string(env) != "0";
  }();
  if (enabled) std::clog << "tapegraph: " << message << '\n';
}

}  // namespace tapegraph::detail
