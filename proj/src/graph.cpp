#include "tapegraph/graph.hpp"

namespace tapegraph {

NodeBase::NodeBase(std::vector<std::shared_ptr<NodeBase>> deps, bool requires_grad,
                   GraphMode mode)
    : deps_(std::move(deps)), requires_grad_(requires_grad), mode_(mode) {}

void NodeBase::acquire_now() {
  if (counter_.fetch_add(1) == 0) {
    for (const auto& dep : deps_) dep->acquire_now();
  }
}

Task<Unit> NodeBase::release() {
  auto self = shared_from_this();
  return Task<Unit>([self](Executor& ex, Callback<Unit> k) {
    ++self->stats_.releases;
    int current = self->counter_.load();
    do {
      if (current <= 0) {
        k(Result<Unit>(usage_error("release of a node whose counter is already zero")));
        return;
      }
    } while (!self->counter_.compare_exchange_weak(current, current - 1));
    if (current > 1) {
      k(Result<Unit>(Unit{}));
      return;
    }
    // This caller performed the 1 -> 0 transition and owns the flush.
    std::optional<Task<Unit>> effect;
    if (self->mode_ == GraphMode::RefCounted) {
      try {
        effect = self->take_flush();
      } catch (...) {
        k(Result<Unit>(capture_error(std::current_exception())));
        return;
      }
    }
    Task<Unit> flushed = effect ? std::move(*effect) : unit();
    then(std::move(flushed), [self](Unit) {
      std::vector<Task<Unit>> releases;
      releases.reserve(self->deps_.size());
      for (const auto& dep : self->deps_) releases.push_back(dep->release());
      return all_effects(std::move(releases));
    }).start(ex, std::move(k));
  });
}

ForwardScope ForwardScope::make(GraphMode mode) {
  return ForwardScope(std::make_shared<State>(mode));
}

}  // namespace tapegraph
