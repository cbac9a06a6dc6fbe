#pragma once

#include <chrono>
#include <cstddef>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tapegraph/layers.hpp"
#include "tapegraph/rng.hpp"

namespace tgtest {

using namespace tapegraph;

/// Thread-safe log of labelled effects, in execution order.
class Recorder {
 public:
  void push(std::string s) {
    std::lock_guard lock(m_);
    log_.push_back(std::move(s));
  }
  std::vector<std::string> log() const {
    std::lock_guard lock(m_);
    return log_;
  }
  std::size_t size() const {
    std::lock_guard lock(m_);
    return log_.size();
  }

 private:
  mutable std::mutex m_;
  std::vector<std::string> log_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// A literal whose forward sleeps for `ms` milliseconds.
inline ScalarLayer slow_literal(double value, int ms) {
  return ScalarLayer([value, ms](const ForwardScope& scope) {
    return delay([value, ms, scope] {
      std::this_thread::sleep_for(std::chrono::milliseconds(ms));
      return scope.make_node(make_literal<double>(value), {}, false);
    });
  });
}

/// Central difference of a scalar function of one weight, via predict.
template <class F>
double numeric_derivative(ScalarWeight w, F build, Executor& ex, double h = 1e-6) {
  const double x = w.value();
  w.assign(x + h);
  const double up = run_blocking(predict(build()), ex);
  w.assign(x - h);
  const double down = run_blocking(predict(build()), ex);
  w.assign(x);
  return (up - down) / (2 * h);
}

/// Gradients of `build()` with respect to each of `ws`, recorded instead of
/// applied. Every weight the expression trains must be listed.
template <class F>
std::vector<double> analytic_gradients(std::vector<ScalarWeight> ws, F build, Executor& ex) {
  auto grads = std::make_shared<std::vector<double>>(ws.size(), 0.0);
  auto m = std::make_shared<std::mutex>();
  for (std::size_t i = 0; i < ws.size(); ++i) {
    ws[i].set_update_rule([grads, m, i](double&, const double& d, double) {
      std::lock_guard lock(*m);
      (*grads)[i] += d;
    });
  }
  run_blocking(train(build()), ex);
  for (auto& w : ws) w.set_update_rule([](double& s, const double& d, double lr) { s -= lr * d; });
  return *grads;
}

}  // namespace tgtest
