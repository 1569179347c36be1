#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scanfill/errors.hpp"

namespace scanfill::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape);

class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  // Shared so that parameter shadows can alias the master values.
  std::shared_ptr<std::vector<T>> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  Tape* tape = nullptr;
  std::size_t node = 0;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(value->size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor;

template <typename T>
void backward(const Tensor<T>& loss);

/// Append-only record of differentiable operations, replayed in reverse by
/// backward(). A tape may be consumed once; reset() makes it reusable.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t record(std::function<void()> node);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

 private:
  template <typename T>
  friend void backward(const Tensor<T>& loss);

  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

/// Tape that operations on this thread record into, or nullptr (no recording).
Tape* active_tape();

/// Makes a tape active on the current thread for the guard's lifetime.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->value = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->value->size(); }

  std::span<const T> data() const { return *impl_->value; }
  /// Writable values; only leaves may be mutated (optimizer updates, init).
  std::span<T> mutable_data() {
    if (!impl_->is_leaf) throw GraphError("cannot mutate the values of a recorded tensor");
    return *impl_->value;
  }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return (*impl_->value)[0];
  }
  T operator[](std::size_t i) const { return (*impl_->value)[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  /// Marks a leaf as a differentiation target.
  Tensor& set_requires_grad(bool on = true) {
    if (!impl_->is_leaf) throw GraphError("requires_grad can only be set on leaf tensors");
    impl_->requires_grad = on;
    return *this;
  }

  /// Accumulated gradient; all zeros when nothing has flowed in yet.
  std::vector<T> grad() const {
    if (impl_->grad.empty()) return std::vector<T>(size(), T(0));
    return impl_->grad;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }
  /// Adds an externally computed gradient (e.g. from a shadow) to this one.
  void accumulate_grad(std::span<const T> g) {
    if (g.size() != size()) throw ShapeError("accumulate_grad: size mismatch for " + to_string(shape()));
    auto dst = impl_->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Leaf with a private copy of the values and no gradient tracking.
  Tensor detach() const {
    Tensor out;
    out.impl_ = std::make_shared<detail::TensorImpl<T>>();
    out.impl_->shape = impl_->shape;
    out.impl_->value = std::make_shared<std::vector<T>>(*impl_->value);
    return out;
  }

  /// Leaf aliasing this tensor's values but owning a separate gradient.
  /// Lets independent tapes differentiate the same parameters concurrently.
  Tensor shadow() const {
    Tensor out;
    out.impl_ = std::make_shared<detail::TensorImpl<T>>();
    out.impl_->shape = impl_->shape;
    out.impl_->value = impl_->value;
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  /// Deep copy preserving requires_grad (a fresh leaf).
  Tensor clone() const {
    Tensor out = detach();
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*impl_->value)[i]);
    return Tensor<U>(shape(), std::move(v));
  }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, std::vector<std::span<T>>& grad_in)>;

/// Builds an operation result and, when any input requires a gradient and a
/// tape is active, records `backward` on that tape. `grad_in[i]` is empty for
/// inputs that do not require a gradient.
template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                    BackwardFn<T> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (!track) return out;

  std::vector<std::shared_ptr<detail::TensorImpl<T>>> ins;
  ins.reserve(inputs.size());
  for (const auto& in : inputs) ins.push_back(in.impl());
  auto o = out.impl();
  o->requires_grad = true;
  o->is_leaf = false;
  o->tape = tape;
  o->node = tape->record([o, ins = std::move(ins), fn = std::move(backward_fn)]() {
    if (o->grad.empty()) return;
    std::vector<std::span<T>> grads(ins.size());
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (ins[i]->requires_grad) grads[i] = ins[i]->ensure_grad();
    }
    fn(std::span<const T>(o->grad), grads);
  });
  return out;
}

/// Reverse-mode pass from a scalar loss. Gradients accumulate into every
/// grad-enabled tensor reached; the loss's tape is consumed.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  auto& impl = *loss.impl();
  if (!impl.requires_grad || impl.is_leaf || impl.tape == nullptr) {
    throw GraphError("backward: loss is not connected to any recorded graph");
  }
  Tape& tape = *impl.tape;
  if (tape.consumed_) throw GraphError("backward: tape already consumed; call reset() first");
  tape.consumed_ = true;
  impl.ensure_grad()[0] += T(1);
  for (std::size_t i = impl.node + 1; i-- > 0;) tape.nodes_[i]();
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace scanfill::ad
