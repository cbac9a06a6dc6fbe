#pragma once

// Differentiable expressions.
//
// Anything with a Differentiable<> specialization can be an operand: plain
// numbers and Tensors (literals), Weights (trainable variables) and Layers
// (lazily evaluated expressions). Every operator accepts any mix of them as
// long as the Data types line up, and the operands of a binary operator are
// forwarded in parallel.
//
// Nothing here performs work when called. train() / predict() return Tasks;
// effects happen when those Tasks run.

#include <atomic>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <type_traits>
#include <utility>
#include <vector>

#include "tapegraph/graph.hpp"
#include "tapegraph/tape.hpp"
#include "tapegraph/task.hpp"
#include "tapegraph/tensor.hpp"

namespace tapegraph {

template <class T>
class Layer {
 public:
  using data_type = T;
  using Recipe = std::function<Task<NodePtr<T>>(const ForwardScope&)>;

  explicit Layer(Recipe recipe) : impl_(std::make_shared<const Impl>(Impl{std::move(recipe)})) {}

  /// Shared within `scope`: a second forward of the same Layer yields the same node.
  Task<NodePtr<T>> forward(const ForwardScope& scope) const {
    auto impl = impl_;
    return scope.memoized<T>(impl.get(), [impl, scope] { return impl->recipe(scope); });
  }

  const void* identity() const noexcept { return impl_.get(); }

 private:
  struct Impl {
    Recipe recipe;
  };
  std::shared_ptr<const Impl> impl_;
};

using ScalarLayer = Layer<double>;
using TensorLayer = Layer<Tensor>;
using ScalarWeight = Weight<double>;
using TensorWeight = Weight<Tensor>;

template <class X>
struct Differentiable;

template <class X>
  requires std::is_arithmetic_v<X>
struct Differentiable<X> {
  using Data = double;
  using Delta = double;
  static Task<NodePtr<double>> forward(X value, const ForwardScope& scope) {
    const double v = static_cast<double>(value);
    return delay([v, scope] { return scope.make_node(make_literal<double>(v), {}, false); });
  }
};

template <>
struct Differentiable<Tensor> {
  using Data = Tensor;
  using Delta = Tensor;
  static Task<NodePtr<Tensor>> forward(const Tensor& value, const ForwardScope& scope) {
    return delay([value, scope] { return scope.make_node(make_literal<Tensor>(value), {}, false); });
  }
};

template <class T>
struct Differentiable<Weight<T>> {
  using Data = T;
  using Delta = T;
  static Task<NodePtr<T>> forward(const Weight<T>& w, const ForwardScope& scope) {
    return scope.memoized<T>(w.identity(), [w, scope] {
      // The store is read when the forward runs, not when it is built.
      return delay([w, scope] { return scope.make_node(w.tape(), {}, true); });
    });
  }
};

template <class T>
struct Differentiable<Layer<T>> {
  using Data = T;
  using Delta = T;
  static Task<NodePtr<T>> forward(const Layer<T>& layer, const ForwardScope& scope) {
    return layer.forward(scope);
  }
};

template <class X>
concept DifferentiableValue = requires { typename Differentiable<std::remove_cvref_t<X>>::Data; };

template <class X>
using data_of = typename Differentiable<std::remove_cvref_t<X>>::Data;

template <class X>
inline constexpr bool is_expression_v = false;
template <class T>
inline constexpr bool is_expression_v<Layer<T>> = true;
template <class T>
inline constexpr bool is_expression_v<Weight<T>> = true;

/// A Layer or Weight, as opposed to a plain literal.
template <class X>
concept Expression = is_expression_v<std::remove_cvref_t<X>>;

template <class A, class B>
concept OperandPair = DifferentiableValue<A> && DifferentiableValue<B> &&
                      (Expression<A> || Expression<B>);

template <class A, class B>
concept SameDataOperands = OperandPair<A, B> && std::same_as<data_of<A>, data_of<B>>;

template <DifferentiableValue X>
Task<NodePtr<data_of<X>>> forward_node(const X& x, const ForwardScope& scope) {
  return Differentiable<std::remove_cvref_t<X>>::forward(x, scope);
}

/// Lifts any differentiable value into a Layer.
template <DifferentiableValue X>
Layer<data_of<X>> as_layer(X x) {
  return Layer<data_of<X>>(
      [x = std::move(x)](const ForwardScope& scope) { return forward_node(x, scope); });
}

namespace detail {

template <class R, class A, class B, class Op>
Layer<R> binary(A a, B b, Op op) {
  return Layer<R>([a = std::move(a), b = std::move(b), op](const ForwardScope& scope) {
    return map(zip_par(forward_node(a, scope), forward_node(b, scope)), [scope, op](auto nodes) {
      auto& [l, r] = nodes;
      return scope.make_node(op(l->tape(), r->tape()), {l, r});
    });
  });
}

template <class R, class A, class Op>
Layer<R> unary(A a, Op op) {
  return Layer<R>([a = std::move(a), op](const ForwardScope& scope) {
    return map(forward_node(a, scope), [scope, op](auto node) {
      return scope.make_node(op(node->tape()), {node});
    });
  });
}

}  // namespace detail

template <class A, class B>
  requires SameDataOperands<A, B>
Layer<data_of<A>> operator+(const A& a, const B& b) {
  return detail::binary<data_of<A>>(a, b, [](const auto& l, const auto& r) { return dual_add(l, r); });
}

template <class A, class B>
  requires SameDataOperands<A, B>
Layer<data_of<A>> operator-(const A& a, const B& b) {
  return detail::binary<data_of<A>>(a, b, [](const auto& l, const auto& r) { return dual_sub(l, r); });
}

template <Expression A>
Layer<data_of<A>> operator-(const A& a) {
  return detail::unary<data_of<A>>(a, [](const auto& x) { return dual_neg(x); });
}

/// Scalar product, or elementwise product for tensors.
template <class A, class B>
  requires SameDataOperands<A, B>
Layer<data_of<A>> operator*(const A& a, const B& b) {
  return detail::binary<data_of<A>>(a, b, [](const auto& l, const auto& r) { return dual_mul(l, r); });
}

/// Scalar times tensor.
template <class A, class B>
  requires OperandPair<A, B> && std::same_as<data_of<A>, double> && std::same_as<data_of<B>, Tensor>
TensorLayer operator*(const A& s, const B& t) {
  return detail::binary<Tensor>(
      s, t, [](const Tape<double>& l, const Tape<Tensor>& r) { return dual_scalar_mul_tensor(l, r); });
}

template <class A, class B>
  requires OperandPair<A, B> && std::same_as<data_of<A>, Tensor> && std::same_as<data_of<B>, double>
TensorLayer operator*(const A& t, const B& s) {
  return detail::binary<Tensor>(
      s, t, [](const Tape<double>& l, const Tape<Tensor>& r) { return dual_scalar_mul_tensor(l, r); });
}

template <class A, class B>
  requires SameDataOperands<A, B> && std::same_as<data_of<A>, double>
ScalarLayer operator/(const A& a, const B& b) {
  return detail::binary<double>(a, b, [](const Tape<double>& l, const Tape<double>& r) { return dual_div(l, r); });
}

/// Ties send the whole gradient to `a`.
template <class A, class B>
  requires SameDataOperands<A, B> && std::same_as<data_of<A>, double>
ScalarLayer max(const A& a, const B& b) {
  return detail::binary<double>(a, b, [](const Tape<double>& l, const Tape<double>& r) { return dual_max(l, r); });
}

template <class A, class B>
  requires SameDataOperands<A, B> && std::same_as<data_of<A>, Tensor>
ScalarLayer dot(const A& a, const B& b) {
  return detail::binary<double>(a, b, [](const Tape<Tensor>& l, const Tape<Tensor>& r) { return dual_dot(l, r); });
}

template <class A, class B>
  requires SameDataOperands<A, B> && std::same_as<data_of<A>, Tensor>
TensorLayer matmul(const A& a, const B& b) {
  return detail::binary<Tensor>(a, b, [](const Tape<Tensor>& l, const Tape<Tensor>& r) { return dual_matmul(l, r); });
}

/// Adds a rank-1 row vector to every row of a matrix (dense-layer bias).
template <class A, class B>
  requires SameDataOperands<A, B> && std::same_as<data_of<A>, Tensor>
TensorLayer add_row(const A& m, const B& row) {
  return detail::binary<Tensor>(m, row, [](const Tape<Tensor>& l, const Tape<Tensor>& r) { return dual_add_row(l, r); });
}

template <Expression A>
  requires std::same_as<data_of<A>, Tensor>
TensorLayer relu(const A& a) {
  return detail::unary<Tensor>(a, [](const Tape<Tensor>& x) { return dual_relu(x); });
}

template <Expression A>
  requires std::same_as<data_of<A>, Tensor>
ScalarLayer sum(const A& a) {
  return detail::unary<double>(a, [](const Tape<Tensor>& x) { return dual_sum(x); });
}

template <Expression A>
  requires std::same_as<data_of<A>, Tensor>
ScalarLayer softmax_cross_entropy(const A& logits, std::vector<std::size_t> labels) {
  return detail::unary<double>(logits, [labels = std::move(labels)](const Tape<Tensor>& x) {
    return dual_softmax_cross_entropy(x, labels);
  });
}

/// Counts how many times the wrapped layer's forward actually executes.
template <class T>
Layer<T> with_probe(Layer<T> inner, std::shared_ptr<std::atomic<int>> counter) {
  return Layer<T>([inner = std::move(inner), counter](const ForwardScope& scope) {
    return then(delay([counter] { ++*counter; }), [inner, scope](Unit) { return inner.forward(scope); });
  });
}

/// Two expressions forwarded in parallel, for use with sequence_then.
template <DifferentiableValue A, DifferentiableValue B>
struct PairStage {
  A first;
  B second;
};

template <DifferentiableValue A, DifferentiableValue B>
PairStage<A, B> parallel_pair(A a, B b) {
  return PairStage<A, B>{std::move(a), std::move(b)};
}

/// Data-dependent graph construction: forwards `a`, hands its value to `cont`,
/// and continues with whatever expression `cont` returns. Only the returned
/// expression is reachable from the result, so branches that are not chosen
/// are never forwarded.
template <DifferentiableValue A, class F>
  requires DifferentiableValue<std::invoke_result_t<F&, const data_of<A>&>>
auto sequence_then(A a, F cont) -> Layer<data_of<std::invoke_result_t<F&, const data_of<A>&>>> {
  using Next = std::invoke_result_t<F&, const data_of<A>&>;
  using R = data_of<Next>;
  return Layer<R>([a = std::move(a), cont = std::move(cont)](const ForwardScope& scope) {
    return then(forward_node(a, scope), [scope, cont](NodePtr<data_of<A>> node) {
      return forward_node(cont(node->data()), scope);
    });
  });
}

template <class A, class B, class F>
  requires DifferentiableValue<
      std::invoke_result_t<F&, const std::pair<data_of<A>, data_of<B>>&>>
auto sequence_then(PairStage<A, B> stage, F cont)
    -> Layer<data_of<std::invoke_result_t<F&, const std::pair<data_of<A>, data_of<B>>&>>> {
  using Values = std::pair<data_of<A>, data_of<B>>;
  using R = data_of<std::invoke_result_t<F&, const Values&>>;
  return Layer<R>([stage = std::move(stage), cont = std::move(cont)](const ForwardScope& scope) {
    auto both = zip_par(forward_node(stage.first, scope), forward_node(stage.second, scope));
    return then(std::move(both), [scope, cont](auto nodes) {
      return forward_node(cont(Values(nodes.first->data(), nodes.second->data())), scope);
    });
  });
}

namespace detail {

template <class A>
Task<A> closing(Task<A> inner, ForwardScope scope) {
  return Task<A>([inner = std::move(inner), scope](Executor& ex, Callback<A> k) {
    inner.start(ex, [scope, k = std::move(k)](Result<A> r) {
      scope.close();
      k(std::move(r));
    });
  });
}

}  // namespace detail

/// Builds the graph of `x` in `scope` without acquiring anything.
template <DifferentiableValue X>
Task<GraphHandle<data_of<X>>> forward(const X& x, ForwardScope scope = ForwardScope::make()) {
  using T = data_of<X>;
  return map(forward_node(x, scope),
             [scope](NodePtr<T> root) { return GraphHandle<T>{std::move(root), scope}; });
}

/// One training iteration in a caller-provided scope: forward, acquire, seed
/// the root with the multiplicative identity, release. Returns the
/// pre-update value. Tensor roots are seeded with ones (sum-loss semantics).
template <DifferentiableValue X>
Task<data_of<X>> train_in(const X& x, ForwardScope scope) {
  using T = data_of<X>;
  auto pass = then(forward_node(x, scope), [](NodePtr<T> root) {
    return then(acquire(root), [root](Unit) {
      Task<Unit> seeded = root->tape().backward(now(unit_seed(root->data())));
      return then(std::move(seeded), [root](Unit) {
        return map(release(root), [root](Unit) { return root->data(); });
      });
    });
  });
  return detail::closing(std::move(pass), std::move(scope));
}

template <DifferentiableValue X>
Task<data_of<X>> train(const X& x) {
  return train_in(x, ForwardScope::make());
}

/// Forward pass and bookkeeping only; no weight changes.
template <DifferentiableValue X>
Task<data_of<X>> predict_in(const X& x, ForwardScope scope) {
  using T = data_of<X>;
  auto pass = then(forward_node(x, scope), [](NodePtr<T> root) {
    return then(acquire(root), [root](Unit) {
      return map(release(root), [root](Unit) { return root->data(); });
    });
  });
  return detail::closing(std::move(pass), std::move(scope));
}

template <DifferentiableValue X>
Task<data_of<X>> predict(const X& x) {
  return predict_in(x, ForwardScope::make());
}

/// Turns a function producing a scalar expression into one producing the
/// weight-update effects of its gradient.
template <class D, class F>
  requires std::same_as<data_of<std::invoke_result_t<F&, const D&>>, double>
std::function<Task<Unit>(const D&)> grad_of(F f) {
  return [f = std::move(f)](const D& input) mutable {
    return map(train(f(input)), [](double) {});
  };
}

}  // namespace tapegraph
