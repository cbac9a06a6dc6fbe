#pragma once

// Closure-based dual numbers.
//
// A Tape pairs a forward value with a backward closure. The closure takes a
// deferred delta and returns the deferred weight-update effects it implies; it
// never performs an effect itself. Closures form a vector space:
//
//   (f0 + f1)(x) = f0(x) + f1(x)      closure_plus
//   (a f)(x)     = f(a x)             closure_scale
//
// and every differentiable primitive below is written in terms of those two
// operations (or closure_map, the general linear-map form used by tensors).

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <vector>

#include "tapegraph/task.hpp"
#include "tapegraph/tensor.hpp"

namespace tapegraph {

template <class Delta>
using UpdateClosure = std::function<Task<Unit>(Task<Delta>)>;

template <class Data, class Delta = Data>
struct Tape {
  Data data;
  UpdateClosure<Delta> backward;
};

template <class Delta>
UpdateClosure<Delta> no_op_closure() {
  return [](Task<Delta>) { return unit(); };
}

/// Both closures receive the same delta; the delta task is memoized so it runs
/// once no matter how many consumers force it.
template <class Delta>
UpdateClosure<Delta> closure_plus(UpdateClosure<Delta> f0, UpdateClosure<Delta> f1) {
  return [f0 = std::move(f0), f1 = std::move(f1)](Task<Delta> x) {
    Shared<Delta> shared = memoize(std::move(x));
    return append_effects(f0(shared.get()), f1(shared.get()));
  };
}

/// Pulls `f` back along a linear map: the result feeds `f` with linear(delta).
template <class From, class To>
UpdateClosure<From> closure_map(UpdateClosure<To> f, std::function<To(const From&)> linear) {
  return [f = std::move(f), linear = std::move(linear)](Task<From> x) {
    return f(map(std::move(x), linear));
  };
}

inline UpdateClosure<double> closure_scale(double x0, UpdateClosure<double> f) {
  return closure_map<double, double>(std::move(f), [x0](const double& d) { return x0 * d; });
}

inline UpdateClosure<Tensor> closure_scale(double x0, UpdateClosure<Tensor> f) {
  return closure_map<Tensor, Tensor>(std::move(f),
                                     [x0](const Tensor& d) { return scalar_mul(x0, d); });
}

inline double delta_add(double a, double b) { return a + b; }
inline Tensor delta_add(const Tensor& a, const Tensor& b) { return elementwise_add(a, b); }

/// Multiplicative identity used to seed backward passes.
inline double unit_seed(double) { return 1.0; }
inline Tensor unit_seed(const Tensor& like) { return Tensor::ones(like.shape()); }

/// Trainable variable: a shared mutable store plus the rule that applies a
/// delta to it. Copies of a Weight alias the same store.
template <class T>
class Weight {
 public:
  using UpdateRule = std::function<void(T& store, const T& delta, double learning_rate)>;

  Weight(T initial, double learning_rate)
      : state_(std::make_shared<State>(std::move(initial), learning_rate)) {
    if (!(learning_rate > 0.0)) throw usage_error("learning rate must be positive");
  }

  T value() const {
    std::lock_guard lock(state_->m);
    return state_->store;
  }

  void assign(T value) {
    std::lock_guard lock(state_->m);
    state_->store = std::move(value);
  }

  double learning_rate() const {
    std::lock_guard lock(state_->m);
    return state_->learning_rate;
  }

  void set_learning_rate(double lr) {
    if (!(lr > 0.0)) throw usage_error("learning rate must be positive");
    std::lock_guard lock(state_->m);
    state_->learning_rate = lr;
  }

  /// Replaces plain SGD with a custom optimizer step.
  void set_update_rule(UpdateRule rule) {
    std::lock_guard lock(state_->m);
    state_->rule = std::move(rule);
  }

  /// Number of times an update effect has mutated the store.
  std::size_t update_count() const {
    std::lock_guard lock(state_->m);
    return state_->updates;
  }

  Tape<T> tape() const {
    auto st = state_;
    T snapshot = value();
    UpdateClosure<T> backward = [st](Task<T> delta) {
      return map(std::move(delta), [st](const T& d) {
        std::lock_guard lock(st->m);
        st->rule(st->store, d, st->learning_rate);
        ++st->updates;
      });
    };
    return Tape<T>{std::move(snapshot), std::move(backward)};
  }

  const void* identity() const noexcept { return state_.get(); }

  friend bool operator==(const Weight& a, const Weight& b) { return a.state_ == b.state_; }

 private:
  static void sgd(double& store, const double& delta, double lr) { store -= lr * delta; }
  static void sgd(Tensor& store, const Tensor& delta, double lr) {
    store = elementwise_sub(store, scalar_mul(lr, delta));
  }

  struct State {
    State(T initial, double lr)
        : store(std::move(initial)),
          learning_rate(lr),
          rule([](T& s, const T& d, double rate) { sgd(s, d, rate); }) {}
    mutable std::mutex m;
    T store;
    double learning_rate;
    UpdateRule rule;
    std::size_t updates = 0;
  };
  std::shared_ptr<State> state_;
};

template <class T>
Weight<T> make_weight(T initial, double learning_rate) {
  return Weight<T>(std::move(initial), learning_rate);
}

/// Non-trainable value. Its backward never forces the delta task.
template <class Data, class Delta = Data>
Tape<Data, Delta> make_literal(Data value) {
  return Tape<Data, Delta>{std::move(value), no_op_closure<Delta>()};
}

// Differentiable primitives on tapes. Shape errors are thrown eagerly while
// computing `data`; backward closures stay pure.

Tape<double> dual_add(const Tape<double>& l, const Tape<double>& r);
Tape<Tensor> dual_add(const Tape<Tensor>& l, const Tape<Tensor>& r);
Tape<double> dual_sub(const Tape<double>& l, const Tape<double>& r);
Tape<Tensor> dual_sub(const Tape<Tensor>& l, const Tape<Tensor>& r);
Tape<double> dual_neg(const Tape<double>& x);
Tape<Tensor> dual_neg(const Tape<Tensor>& x);

/// Product rule: d(l r) = r dl + l dr.
Tape<double> dual_mul(const Tape<double>& l, const Tape<double>& r);
/// Elementwise product.
Tape<Tensor> dual_mul(const Tape<Tensor>& l, const Tape<Tensor>& r);
Tape<double> dual_div(const Tape<double>& l, const Tape<double>& r);
/// Ties route the whole delta to the left operand.
Tape<double> dual_max(const Tape<double>& l, const Tape<double>& r);

Tape<Tensor> dual_matmul(const Tape<Tensor>& l, const Tape<Tensor>& r);
Tape<Tensor> dual_relu(const Tape<Tensor>& x);
Tape<double> dual_sum(const Tape<Tensor>& x);
Tape<double> dual_dot(const Tape<Tensor>& l, const Tape<Tensor>& r);
Tape<Tensor> dual_scalar_mul_tensor(const Tape<double>& s, const Tape<Tensor>& t);
/// m + broadcast_row(row, m.rows()).
Tape<Tensor> dual_add_row(const Tape<Tensor>& m, const Tape<Tensor>& row);

/// Mean over rows of -log softmax(logits)[label]. Backward is the fused
/// (probs - one_hot) / batch.
Tape<double> dual_softmax_cross_entropy(const Tape<Tensor>& logits,
                                        const std::vector<std::size_t>& labels);

}  // namespace tapegraph
