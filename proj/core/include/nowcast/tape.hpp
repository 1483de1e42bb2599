#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

struct BackwardOptions {
  /// Add the computed gradients into the grad buffers of requires_grad leaves.
  /// Grad-CAM turns this off so parameters stay untouched and read-only.
  bool accumulate_into_leaves = true;
};

/// Ordered record of differentiable operations (reverse-mode autodiff).
///
/// Ops append one entry per call when given a tape and at least one tracked
/// input. Gradients of intermediate tensors live inside the tape and are
/// reachable through grad_of() after backward(); leaf gradients are added to
/// the tensors' own buffers. A tape is single-writer; use one per thread.
template <Real T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  struct Entry {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  /// A tensor takes part in differentiation if it is a requires_grad leaf or
  /// the output of a recorded op.
  bool tracks(const Tensor<T>& t) const {
    return t.defined() && (t.requires_grad() || produced_.contains(t.id()));
  }

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn backward) {
    // Inputs already exist when the op runs, so entries stay topologically
    // ordered; an output may only be recorded once.
    if (!produced_.insert(output.id()).second)
      throw UsageError("tensor recorded twice on the tape by op " + op);
    entries_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  /// Gradient slot of `t` during backward; allocated as zeros on first use.
  std::span<T> grad(const Tensor<T>& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end())
      it = grads_.emplace(t.id(), Slot{t, std::vector<T>(t.numel(), T(0))}).first;
    return it->second.grad;
  }

  /// Gradient computed by the last backward(); empty if `t` was not reached.
  std::span<const T> grad_of(const Tensor<T>& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return {};
    return it->second.grad;
  }

  /// Replays the tape in reverse from a scalar loss.
  ///
  /// Intermediate gradients are recomputed from scratch on every call, leaf
  /// gradients accumulate: calling twice without zero_grad() doubles them.
  void backward(const Tensor<T>& loss, BackwardOptions options = {}) {
    if (!loss.defined() || loss.shape() != Shape{1, 1, 1, 1})
      throw UsageError("backward() needs a [1,1,1,1] loss, got " +
                       (loss.defined() ? loss.shape().str() : std::string("undefined")));
    if (!tracks(loss)) throw UsageError("loss is not reachable from any tracked tensor");
    grads_.clear();
    grad(loss)[0] = T(1);
    visits_ = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      ++visits_;
      if (grads_.contains(it->output.id())) it->backward(*this);
    }
    if (!options.accumulate_into_leaves) return;
    for (auto& [id, slot] : grads_) {
      if (produced_.contains(id) || !slot.tensor.requires_grad()) continue;
      auto dst = slot.tensor.grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += slot.grad[i];
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const Entry> entries() const noexcept { return entries_; }
  /// Number of entries replayed by the most recent backward().
  std::size_t last_visit_count() const noexcept { return visits_; }

  void clear() {
    entries_.clear();
    produced_.clear();
    grads_.clear();
    visits_ = 0;
  }

 private:
  struct Slot {
    Tensor<T> tensor;
    std::vector<T> grad;
  };

  std::vector<Entry> entries_;
  std::unordered_set<const void*> produced_;
  std::unordered_map<const void*, Slot> grads_;
  std::size_t visits_ = 0;
};

}  // namespace nowcast
