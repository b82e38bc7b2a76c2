// Copyright 2026 The vdet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense tensors with reverse-mode differentiation over a recorded tape.
//
// A Tensor is a reference-counted handle: copies share storage, clone()
// makes a deep copy. Operations record themselves on the thread's active
// Tape whenever one of their inputs requires a gradient; backward() then
// replays the recorded rules in reverse order.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "vdet/errors.hpp"

namespace vdet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

enum class DType { f32, f64 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "float or double only");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "float32" : "float64"; }

template <class T>
class Tensor {
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + vdet::to_string(shape));
    impl_->data.assign(static_cast<std::size_t>(vdet::numel(shape)), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (values.size() != impl_->data.size())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       vdet::to_string(impl_->shape));
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  Index dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("axis out of range for shape " + vdet::to_string(shape()));
    return impl_->shape[static_cast<std::size_t>(i)];
  }
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T& operator[](Index i) { return impl_->data[static_cast<std::size_t>(i)]; }
  T operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  // NCHW element access.
  T& at(Index n, Index c, Index h, Index w) {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  T at(Index n, Index c, Index h, Index w) const {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + vdet::to_string(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& requires_grad_(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }

  // Gradient buffer, allocated as zeros on first access. The buffer is
  // accumulation state owned by the handle, so const handles may write it.
  std::span<T> grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  // Copy of the gradient; zeros when none was accumulated.
  Tensor grad_tensor() const {
    Tensor g(shape());
    if (has_grad()) std::copy(impl_->grad.begin(), impl_->grad.end(), g.ptr());
    return g;
  }

  void zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void drop_grad() const { std::vector<T>().swap(impl_->grad); }

  Tensor clone() const {
    Tensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = impl_->shape;
    out.impl_->data = impl_->data;
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape());
    std::transform(impl_->data.begin(), impl_->data.end(), out.ptr(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Ordered record of differentiable operations. Recording happens in execution
// order, so every node's inputs were produced by earlier nodes or are leaves.
template <class T>
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <class T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

// Makes `tape` the recording target for the current thread while alive.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording, e.g. for evaluation inside a training step.
template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(active_tape<T>()) { active_tape<T>() = nullptr; }
  ~NoGradScope() { active_tape<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

template <class T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// Records `out` as produced from `inputs` when a tape is active and any input
// is differentiable. The backward rule reads out.grad() and accumulates into
// the inputs that want a gradient.
template <class T, class Fn>
void record(const char* op, std::vector<Tensor<T>> inputs, Tensor<T>& out, Fn&& rule) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return wants_grad(t); });
  if (!any) return;
  out.requires_grad_(true);
  tape->record({op, std::move(inputs), out, std::function<void()>(std::forward<Fn>(rule))});
}

}  // namespace detail

// Reverse pass. Gradients of every tensor touched by the tape are reset first,
// so repeated calls over the same graph give identical results.
template <class T>
void backward(Tape<T>& tape, Tensor<T> loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ParameterError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  for (auto& node : tape.nodes()) {
    for (auto input : node.inputs)
      if (detail::wants_grad(input)) {
        input.grad();
        input.zero_grad();
      }
    auto out = node.output;
    out.grad();
    out.zero_grad();
  }
  loss.grad()[0] = T(1);
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) it->backward();
}

// Multiply-accumulate counter fed by the heavy kernels; used to cross-check
// closed-form cost accounting.
inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

}  // namespace vdet
