#pragma once

// Deferred computations with an error channel.
//
// A Task<A> is a recipe: building or composing Tasks performs no side effect.
// Work happens only inside run_blocking, on an Executor. Every Task is
// single-shot; starting the same Task value twice reports a UsageError on the
// second start. Use memoize() when one result must feed several consumers.

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "tapegraph/error.hpp"
#include "tapegraph/executor.hpp"

namespace tapegraph {

struct Unit {
  friend bool operator==(Unit, Unit) { return true; }
};

template <class A>
class Result {
 public:
  Result(A value) : v_(std::in_place_index<0>, std::move(value)) {}
  Result(Error error) : v_(std::in_place_index<1>, std::move(error)) {}

  bool ok() const noexcept { return v_.index() == 0; }
  const A& value() const& { return std::get<0>(v_); }
  A&& value() && { return std::get<0>(std::move(v_)); }
  const Error& error() const { return std::get<1>(v_); }

 private:
  std::variant<A, Error> v_;
};

template <class A>
using Callback = std::function<void(Result<A>)>;

template <class A>
class Task {
 public:
  using value_type = A;
  using StartFn = std::function<void(Executor&, Callback<A>)>;

  explicit Task(StartFn start) : state_(std::make_shared<State>(std::move(start))) {}

  /// Runs the recipe, delivering exactly one Result to `k`.
  void start(Executor& ex, Callback<A> k) const {
    if (state_->started.exchange(true)) {
      k(Result<A>(usage_error("task started more than once")));
      return;
    }
    StartFn fn = std::move(state_->start);
    fn(ex, std::move(k));
  }

  bool started() const noexcept { return state_->started.load(); }

 private:
  struct State {
    explicit State(StartFn s) : start(std::move(s)) {}
    StartFn start;
    std::atomic<bool> started{false};
  };
  std::shared_ptr<State> state_;
};

template <class T>
struct is_task : std::false_type {};
template <class A>
struct is_task<Task<A>> : std::true_type {};

namespace detail {

void debug_log(std::string_view message);

template <class T>
using unit_if_void = std::conditional_t<std::is_void_v<T>, Unit, T>;

template <class F, class... Args>
auto invoke_to_value(F& f, Args&&... args) {
  if constexpr (std::is_void_v<std::invoke_result_t<F&, Args...>>) {
    std::invoke(f, std::forward<Args>(args)...);
    return Unit{};
  } else {
    return std::invoke(f, std::forward<Args>(args)...);
  }
}

}  // namespace detail

template <class A>
Task<std::decay_t<A>> now(A value) {
  using V = std::decay_t<A>;
  return Task<V>([v = V(std::move(value))](Executor&, Callback<V> k) mutable {
    k(Result<V>(std::move(v)));
  });
}

inline Task<Unit> unit() { return now(Unit{}); }

template <class A>
Task<A> failed(Error error) {
  return Task<A>([e = std::move(error)](Executor&, Callback<A> k) { k(Result<A>(e)); });
}

/// Defers `thunk` until the task runs. Exceptions become errors on the channel.
template <class F>
auto delay(F thunk) -> Task<detail::unit_if_void<std::invoke_result_t<F&>>> {
  using V = detail::unit_if_void<std::invoke_result_t<F&>>;
  return Task<V>([thunk = std::move(thunk)](Executor&, Callback<V> k) mutable {
    std::optional<Result<V>> out;
    try {
      out.emplace(detail::invoke_to_value(thunk));
    } catch (...) {
      out.emplace(capture_error(std::current_exception()));
    }
    k(std::move(*out));
  });
}

/// Sequential composition: `f` sees `t`'s value once `t` completes and returns
/// the next Task. Errors skip `f`.
template <class A, class F>
auto then(Task<A> t, F f) -> std::invoke_result_t<F&, A> {
  using Next = std::invoke_result_t<F&, A>;
  static_assert(is_task<Next>::value, "then() continuation must return a Task");
  using B = typename Next::value_type;
  return Next([t = std::move(t), f = std::move(f)](Executor& ex, Callback<B> k) mutable {
    t.start(ex, [&ex, f = std::move(f), k = std::move(k)](Result<A> r) mutable {
      if (!r.ok()) {
        k(Result<B>(r.error()));
        return;
      }
      std::optional<Next> next;
      try {
        next.emplace(std::invoke(f, std::move(r).value()));
      } catch (...) {
        k(Result<B>(capture_error(std::current_exception())));
        return;
      }
      next->start(ex, std::move(k));
    });
  });
}

template <class A, class F>
auto map(Task<A> t, F f) -> Task<detail::unit_if_void<std::invoke_result_t<F&, A>>> {
  using B = detail::unit_if_void<std::invoke_result_t<F&, A>>;
  return Task<B>([t = std::move(t), f = std::move(f)](Executor& ex, Callback<B> k) mutable {
    t.start(ex, [f = std::move(f), k = std::move(k)](Result<A> r) mutable {
      if (!r.ok()) {
        k(Result<B>(r.error()));
        return;
      }
      std::optional<Result<B>> out;
      try {
        out.emplace(detail::invoke_to_value(f, std::move(r).value()));
      } catch (...) {
        out.emplace(capture_error(std::current_exception()));
      }
      k(std::move(*out));
    });
  });
}

/// Parallel composition. `b` is posted to the executor and `a` starts on the
/// current worker, so with one worker `a` runs before `b`. When both fail the
/// left error is reported.
template <class A, class B>
Task<std::pair<A, B>> zip_par(Task<A> a, Task<B> b) {
  using P = std::pair<A, B>;
  struct Join {
    std::mutex m;
    std::optional<Result<A>> left;
    std::optional<Result<B>> right;
    Callback<P> k;

    void finish() {
      if (!left->ok()) {
        if (!right->ok()) {
          detail::debug_log(std::string("zip_par: discarding right error: ") +
                            right->error().what());
        }
        k(Result<P>(left->error()));
      } else if (!right->ok()) {
        k(Result<P>(right->error()));
      } else {
        k(Result<P>(P(std::move(*left).value(), std::move(*right).value())));
      }
    }
  };
  return Task<P>([a = std::move(a), b = std::move(b)](Executor& ex, Callback<P> k) {
    auto join = std::make_shared<Join>();
    join->k = std::move(k);
    ex.post([&ex, b, join] {
      b.start(ex, [join](Result<B> r) {
        bool done;
        {
          std::lock_guard lock(join->m);
          join->right.emplace(std::move(r));
          done = join->left.has_value();
        }
        if (done) join->finish();
      });
    });
    a.start(ex, [join](Result<A> r) {
      bool done;
      {
        std::lock_guard lock(join->m);
        join->left.emplace(std::move(r));
        done = join->right.has_value();
      }
      if (done) join->finish();
    });
  });
}

/// Runs both effect tasks (in parallel) and combines their unit results.
inline Task<Unit> append_effects(Task<Unit> a, Task<Unit> b) {
  return map(zip_par(std::move(a), std::move(b)), [](const std::pair<Unit, Unit>&) {});
}

/// Balanced parallel fold of append_effects over a list of effects.
inline Task<Unit> all_effects(std::vector<Task<Unit>> effects) {
  if (effects.empty()) return unit();
  while (effects.size() > 1) {
    std::vector<Task<Unit>> next;
    next.reserve((effects.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < effects.size(); i += 2) {
      next.push_back(append_effects(std::move(effects[i]), std::move(effects[i + 1])));
    }
    if (effects.size() % 2 == 1) next.push_back(std::move(effects.back()));
    effects = std::move(next);
  }
  return std::move(effects.front());
}

/// Memoizing fan-out: the source runs at most once, on the first start of any
/// task handed out by get(); every handed-out task receives the same result.
template <class A>
class Shared {
 public:
  explicit Shared(Task<A> source) : state_(std::make_shared<State>(std::move(source))) {}

  Task<A> get() const {
    return Task<A>([st = state_](Executor& ex, Callback<A> k) {
      std::unique_lock lock(st->m);
      if (st->result) {
        Result<A> r = *st->result;
        lock.unlock();
        k(std::move(r));
        return;
      }
      st->waiters.push_back(std::move(k));
      if (!st->source) return;
      Task<A> src = std::move(*st->source);
      st->source.reset();
      lock.unlock();
      src.start(ex, [st](Result<A> r) {
        std::vector<Callback<A>> waiters;
        {
          std::lock_guard inner(st->m);
          st->result.emplace(r);
          waiters.swap(st->waiters);
        }
        for (auto& w : waiters) w(r);
      });
    });
  }

  bool source_started() const {
    std::lock_guard lock(state_->m);
    return !state_->source.has_value();
  }

 private:
  struct State {
    explicit State(Task<A> s) : source(std::move(s)) {}
    std::mutex m;
    std::optional<Task<A>> source;
    std::optional<Result<A>> result;
    std::vector<Callback<A>> waiters;
  };
  std::shared_ptr<State> state_;
};

template <class A>
Shared<A> memoize(Task<A> source) {
  return Shared<A>(std::move(source));
}

/// Drives `t` to completion on `ex` and returns its value or throws its error.
/// Must be called from outside the executor's workers.
template <class A>
A run_blocking(Task<A> t, Executor& ex) {
  if (ex.in_worker_thread()) {
    throw usage_error("run_blocking called from inside an executor worker");
  }
  std::mutex m;
  std::condition_variable cv;
  std::optional<Result<A>> out;
  ex.post([&ex, &m, &cv, &out, t] {
    t.start(ex, [&m, &cv, &out](Result<A> r) {
      std::lock_guard lock(m);
      out.emplace(std::move(r));
      cv.notify_one();
    });
  });
  std::unique_lock lock(m);
  cv.wait(lock, [&out] { return out.has_value(); });
  if (!out->ok()) throw out->error();
  return std::move(*out).value();
}

}  // namespace tapegraph
