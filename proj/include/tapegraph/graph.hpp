#pragma once

// Reference-counted tape nodes.
//
// Each node wraps an inner Tape and exposes an outer tape to its consumers
// whose backward only accumulates into the node. The inner backward runs once,
// when the last consumer releases the node, with the accumulated delta; the
// node then releases its own dependencies. This keeps a backward pass linear
// in the size of the graph even with shared subexpressions.
//
// Protocol for one pass: forward builds nodes with counter 0, acquire(root)
// counts every edge reachable from the root, root backward seeds the root
// accumulator, release(root) cascades the flushes.

#include <any>
#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "tapegraph/tape.hpp"
#include "tapegraph/task.hpp"

namespace tapegraph {

enum class GraphMode {
  RefCounted,
  // Plain closure recursion with no accumulation. Kept for equivalence and
  // blowup measurements only.
  Naive,
};

struct NodeStats {
  std::atomic<int> backward_calls{0};  // outer backward invocations
  std::atomic<int> flushes{0};         // inner backward effects built
  std::atomic<int> releases{0};
};

class NodeBase : public std::enable_shared_from_this<NodeBase> {
 public:
  NodeBase(std::vector<std::shared_ptr<NodeBase>> deps, bool requires_grad, GraphMode mode);
  virtual ~NodeBase() = default;

  NodeBase(const NodeBase&) = delete;
  NodeBase& operator=(const NodeBase&) = delete;

  int counter() const noexcept { return counter_.load(); }
  bool requires_grad() const noexcept { return requires_grad_; }
  GraphMode mode() const noexcept { return mode_; }
  const NodeStats& stats() const noexcept { return stats_; }
  const std::vector<std::shared_ptr<NodeBase>>& dependencies() const noexcept { return deps_; }
  virtual bool accumulator_empty() const = 0;

  /// Increments the counter; on 0 -> 1 acquires every dependency edge.
  void acquire_now();

  /// Decrements the counter; on 1 -> 0 flushes and releases dependencies.
  Task<Unit> release();

 protected:
  /// Builds the inner backward effect from the accumulator and resets it.
  /// Returns nothing when no delta reached the node this pass.
  virtual std::optional<Task<Unit>> take_flush() = 0;

  NodeStats stats_;

 private:
  std::vector<std::shared_ptr<NodeBase>> deps_;
  std::atomic<int> counter_{0};
  bool requires_grad_;
  GraphMode mode_;
};

using NodeRef = std::shared_ptr<NodeBase>;

template <class Data, class Delta = Data>
class RefNode final : public NodeBase {
 public:
  RefNode(Tape<Data, Delta> inner, std::vector<NodeRef> deps, bool requires_grad, GraphMode mode)
      : NodeBase(std::move(deps), requires_grad, mode), inner_(std::move(inner)) {}

  const Data& data() const noexcept { return inner_.data; }

  /// The tape consumers build on.
  Tape<Data, Delta> tape() {
    auto self = std::static_pointer_cast<RefNode>(shared_from_this());
    UpdateClosure<Delta> backward;
    if (mode() == GraphMode::Naive) {
      backward = [self](Task<Delta> d) {
        ++self->stats_.backward_calls;
        return self->inner_.backward(std::move(d));
      };
    } else {
      backward = [self](Task<Delta> d) { return self->backward_accumulate(std::move(d)); };
    }
    return Tape<Data, Delta>{inner_.data, std::move(backward)};
  }

  /// Adds the delta's value to the accumulator. Constant nodes only record
  /// that a delta arrived and never force it.
  Task<Unit> backward_accumulate(Task<Delta> delta) {
    ++stats_.backward_calls;
    auto self = std::static_pointer_cast<RefNode>(shared_from_this());
    if (!requires_grad()) {
      return delay([self] {
        self->require_live();
        std::lock_guard lock(self->m_);
        self->received_ = true;
      });
    }
    return then(delay([self] { self->require_live(); }), [self, delta](Unit) {
      return map(delta, [self](const Delta& d) {
        std::lock_guard lock(self->m_);
        self->received_ = true;
        self->accumulator_ = self->accumulator_ ? delta_add(*self->accumulator_, d) : d;
      });
    });
  }

  std::optional<Delta> accumulator() const {
    std::lock_guard lock(m_);
    return accumulator_;
  }

  bool accumulator_empty() const override {
    std::lock_guard lock(m_);
    return !accumulator_.has_value() && !received_;
  }

 protected:
  std::optional<Task<Unit>> take_flush() override {
    std::optional<Delta> acc;
    bool received = false;
    {
      std::lock_guard lock(m_);
      acc.swap(accumulator_);
      received = std::exchange(received_, false);
    }
    if (!received) return std::nullopt;
    ++stats_.flushes;
    if (!acc) {
      // Constant subgraph: nothing downstream will force this delta.
      return inner_.backward(failed<Delta>(usage_error("delta of a constant node was forced")));
    }
    return inner_.backward(now(std::move(*acc)));
  }

 private:
  void require_live() const {
    if (counter() < 1) throw usage_error("backward on a node that is not acquired");
  }

  Tape<Data, Delta> inner_;
  mutable std::mutex m_;
  std::optional<Delta> accumulator_;
  bool received_ = false;
};

template <class Data, class Delta = Data>
using NodePtr = std::shared_ptr<RefNode<Data, Delta>>;

inline Task<Unit> acquire(const NodeRef& node) {
  return delay([node] { node->acquire_now(); });
}

inline Task<Unit> release(const NodeRef& node) { return node->release(); }

template <class Data, class Delta>
Task<Unit> backward_accumulate(const NodePtr<Data, Delta>& node, Task<Delta> delta) {
  return node->backward_accumulate(std::move(delta));
}

/// Per-pass node table. Forwarding the same Layer or Weight twice within one
/// scope yields one node; the scope also records every node it created.
class ForwardScope {
 public:
  static ForwardScope make(GraphMode mode = GraphMode::RefCounted);

  GraphMode mode() const noexcept { return state_->mode; }

  template <class Data, class Delta = Data>
  NodePtr<Data, Delta> make_node(Tape<Data, Delta> inner, std::vector<NodeRef> deps,
                                 std::optional<bool> requires_grad = std::nullopt) const {
    bool grad = requires_grad.value_or(false);
    if (!requires_grad) {
      for (const auto& d : deps) grad = grad || d->requires_grad();
    }
    auto node = std::make_shared<RefNode<Data, Delta>>(std::move(inner), std::move(deps), grad,
                                                       state_->mode);
    std::lock_guard lock(state_->m);
    state_->nodes.push_back(node);
    return node;
  }

  /// Returns the shared forward of `key`, running `recipe` only the first time.
  template <class Data, class Delta = Data, class Recipe>
  Task<NodePtr<Data, Delta>> memoized(const void* key, Recipe recipe) const {
    using Memo = Shared<NodePtr<Data, Delta>>;
    std::lock_guard lock(state_->m);
    auto it = state_->memo.find(key);
    if (it == state_->memo.end()) {
      // The recipe is only expanded when the memoized task first runs.
      auto deferred = then(unit(), [recipe = std::move(recipe)](Unit) mutable {
        return Task<NodePtr<Data, Delta>>(recipe());
      });
      it = state_->memo.emplace(key, std::any(Memo(std::move(deferred)))).first;
    }
    return std::any_cast<const Memo&>(it->second).get();
  }

  std::vector<NodeRef> nodes() const {
    std::lock_guard lock(state_->m);
    return state_->nodes;
  }

  /// Drops the memo table. Recipes capture their scope, so this breaks the
  /// reference cycle once a pass is over.
  void close() const {
    std::unordered_map<const void*, std::any> memo;
    std::lock_guard lock(state_->m);
    memo.swap(state_->memo);
  }

  std::size_t node_count() const {
    std::lock_guard lock(state_->m);
    return state_->nodes.size();
  }

 private:
  struct State {
    explicit State(GraphMode m) : mode(m) {}
    GraphMode mode;
    mutable std::mutex m;
    std::unordered_map<const void*, std::any> memo;
    std::vector<NodeRef> nodes;
  };
  explicit ForwardScope(std::shared_ptr<State> s) : state_(std::move(s)) {}
  std::shared_ptr<State> state_;
};

/// A forwarded graph: its root node and the scope that owns every node.
template <class Data, class Delta = Data>
struct GraphHandle {
  NodePtr<Data, Delta> root;
  ForwardScope scope;
};

}  // namespace tapegraph
