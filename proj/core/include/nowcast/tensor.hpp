#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/errors.hpp"

namespace nowcast {

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

/// Extents of a rank-4 array in [batch, channels, height, width] order.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t offset(std::size_t in, std::size_t ic, std::size_t iy,
                               std::size_t ix) const noexcept {
    return ((in * c + ic) * h + iy) * w + ix;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
  }
};

inline void require_valid(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
    throw DimensionError("tensor dims must all be >= 1, got " + s.str());
}

/// Rank-4 real array with an optional gradient buffer.
///
/// A Tensor is a cheap handle: copies share storage. Values are treated as
/// immutable once an op has produced them; only initialisers and optimisers
/// write through mutable_data(). The gradient buffer exists iff
/// requires_grad() and is filled by Tape::backward for leaf tensors.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<T>(checked_numel(shape), T(0)), requires_grad) {}

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    require_valid(shape);
    if (values.size() != shape.numel())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape.str());
    for (T v : values)
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor " + shape.str());
    init(shape, std::move(values), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(checked_numel(shape), value), requires_grad);
  }

  /// Construction path for op outputs; the finiteness scan only runs in debug builds.
  static Tensor from_op(Shape shape, std::vector<T> values) {
#ifndef NDEBUG
    return Tensor(shape, std::move(values));
#else
    Tensor t;
    t.init(shape, std::move(values), false);
    return t;
#endif
  }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t numel() const { return s_->data.size(); }

  std::span<const T> data() const { return s_->data; }
  std::span<T> mutable_data() { return s_->data; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on)
      s_->grad.assign(s_->data.size(), T(0));
    else
      s_->grad.clear();
  }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }
  void zero_grad() {
    for (auto& g : s_->grad) g = T(0);
  }

  T at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
    return s_->data[s_->shape.offset(in, ic, iy, ix)];
  }
  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape().str());
    return s_->data[0];
  }

  /// Deep copy; the copy keeps the requires_grad flag with a zeroed gradient.
  Tensor clone() const {
    Tensor t;
    t.init(s_->shape, s_->data, s_->requires_grad);
    return t;
  }

  template <Real U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(s_->data.begin(), s_->data.end());
    return Tensor<U>(s_->shape, std::move(out), requires_grad);
  }

  /// Identity of the underlying storage; used by the tape to key gradients.
  const void* id() const noexcept { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static std::size_t checked_numel(const Shape& s) {
    require_valid(s);
    return s.numel();
  }

  void init(Shape shape, std::vector<T> values, bool requires_grad) {
    s_ = std::make_shared<Storage>();
    s_->shape = shape;
    s_->data = std::move(values);
    s_->requires_grad = requires_grad;
    if (requires_grad) s_->grad.assign(s_->data.size(), T(0));
  }

  std::shared_ptr<Storage> s_;
};

/// Ordered (hierarchical name, tensor) pairs, e.g. "enc0.block.dsc1.depthwise".
template <Real T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

}  // namespace nowcast
