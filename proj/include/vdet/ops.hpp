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

// Elementwise, shape and reduction operators with their backward rules.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "vdet/tensor.hpp"

namespace vdet {

enum class Act { silu, sigmoid, relu };
enum class PoolKind { max, avg };

namespace detail {

template <class T>
T sigmoid_scalar(T x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// sigmoid_scalar pinned inside the open interval (0, 1); rounding alone
// reaches 1 from about x = 37 in double precision.
template <class T>
T sigmoid_open(T x) {
  return std::clamp(sigmoid_scalar(x), std::numeric_limits<T>::min(), T(1) - std::numeric_limits<T>::epsilon() / 2);
}

inline std::array<Index, 4> as4(const Shape& s) {
  if (s.size() > 4) throw ShapeError("broadcasting supports rank <= 4, got " + to_string(s));
  std::array<Index, 4> out{1, 1, 1, 1};
  std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>(4 - s.size()));
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  Tensor<T> y(x.shape());
  const T* xs = x.ptr();
  T* ys = y.ptr();
  const Index n = x.numel();
  switch (kind) {
    case Act::silu:
      for (Index i = 0; i < n; ++i) ys[i] = xs[i] * detail::sigmoid_scalar(xs[i]);
      break;
    case Act::sigmoid:
      for (Index i = 0; i < n; ++i) ys[i] = detail::sigmoid_open(xs[i]);
      break;
    case Act::relu:
      for (Index i = 0; i < n; ++i) ys[i] = xs[i] > T(0) ? xs[i] : T(0);
      break;
  }
  detail::record<T>("activation", {x}, y, [x, y, kind, n]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    const T* xs = x.ptr();
    const T* ys = y.ptr();
    for (Index i = 0; i < n; ++i) {
      T d = 0;
      switch (kind) {
        case Act::silu: {
          const T s = detail::sigmoid_scalar(xs[i]);
          d = s * (T(1) + xs[i] * (T(1) - s));
          break;
        }
        case Act::sigmoid:
          d = ys[i] * (T(1) - ys[i]);
          break;
        case Act::relu:
          d = xs[i] > T(0) ? T(1) : T(0);
          break;
      }
      gx[i] += gy[i] * d;
    }
  });
  return y;
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return activation(x, Act::silu);
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Act::sigmoid);
}
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Act::relu);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> y(a.shape());
  for (Index i = 0; i < y.numel(); ++i) y[i] = a[i] + b[i];
  detail::record<T>("add", {a, b}, y, [a, b, y]() mutable {
    const auto gy = y.grad();
    if (detail::wants_grad(a)) {
      auto g = a.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
    if (detail::wants_grad(b)) {
      auto g = b.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
  return y;
}

// Elementwise product with broadcasting over size-1 dimensions (rank <= 4).
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto sa = detail::as4(a.shape());
  const auto sb = detail::as4(b.shape());
  std::array<Index, 4> so{};
  for (int d = 0; d < 4; ++d) {
    if (sa[d] != sb[d] && sa[d] != 1 && sb[d] != 1)
      throw ShapeError("mul: cannot broadcast " + to_string(a.shape()) + " with " + to_string(b.shape()));
    so[d] = std::max(sa[d], sb[d]);
  }
  auto strides = [](const std::array<Index, 4>& s) {
    std::array<Index, 4> st{};
    Index acc = 1;
    for (int d = 3; d >= 0; --d) {
      st[d] = s[d] == 1 ? 0 : acc;
      acc *= s[d];
    }
    return st;
  };
  const auto ta = strides(sa), tb = strides(sb);
  Shape out_shape = a.rank() >= b.rank() ? a.shape() : b.shape();
  for (std::size_t d = 0; d < out_shape.size(); ++d) out_shape[d] = so[4 - out_shape.size() + d];
  Tensor<T> y(out_shape);

  auto each = [so, ta, tb](auto&& fn) {
    Index o = 0;
    for (Index i0 = 0; i0 < so[0]; ++i0)
      for (Index i1 = 0; i1 < so[1]; ++i1)
        for (Index i2 = 0; i2 < so[2]; ++i2) {
          Index ia = i0 * ta[0] + i1 * ta[1] + i2 * ta[2];
          Index ib = i0 * tb[0] + i1 * tb[1] + i2 * tb[2];
          for (Index i3 = 0; i3 < so[3]; ++i3, ++o, ia += ta[3], ib += tb[3]) fn(o, ia, ib);
        }
  };
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
  each([&](Index o, Index ia, Index ib) { py[o] = pa[ia] * pb[ib]; });

  detail::record<T>("mul", {a, b}, y, [a, b, y, each]() mutable {
    const auto gy = y.grad();
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    if (detail::wants_grad(a)) {
      auto ga = a.grad();
      each([&](Index o, Index ia, Index ib) { ga[ia] += gy[o] * pb[ib]; });
    }
    if (detail::wants_grad(b)) {
      auto gb = b.grad();
      each([&](Index o, Index ia, Index ib) { gb[ib] += gy[o] * pa[ia]; });
    }
  });
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> y(x.shape());
  for (Index i = 0; i < y.numel(); ++i) y[i] = x[i] * s;
  detail::record<T>("scale", {x}, y, [x, y, s]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
  });
  return y;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc);
  detail::record<T>("sum", {x}, y, [x, y]() mutable {
    const T g = y.grad()[0];
    for (auto& v : x.grad()) v += g;
  });
  return y;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum of x * w for a constant weight tensor w of the same shape.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.shape() != w.shape()) throw ShapeError("weighted_sum: shape mismatch");
  T acc = 0;
  for (Index i = 0; i < x.numel(); ++i) acc += x[i] * w[i];
  Tensor<T> y = Tensor<T>::scalar(acc);
  detail::record<T>("weighted_sum", {x}, y, [x, w, y]() mutable {
    const T g = y.grad()[0];
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[static_cast<Index>(i)];
  });
  return y;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  Tensor<T> y(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), y.ptr());
  detail::record<T>("reshape", {x}, y, [x, y]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

// Concatenation of NCHW tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Index b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  Index c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != b || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat: " + to_string(p.shape()) + " incompatible with " + to_string(parts[0].shape()));
    c += p.dim(1);
  }
  Tensor<T> y({b, c, h, w});
  const Index plane = h * w;
  for (Index n = 0; n < b; ++n) {
    Index off = 0;
    for (const auto& p : parts) {
      const Index len = p.dim(1) * plane;
      std::copy_n(p.ptr() + n * len, len, y.ptr() + (n * c) * plane + off);
      off += len;
    }
  }
  detail::record<T>("concat", parts, y, [parts, y, b, c, plane]() mutable {
    const auto gy = y.grad();
    Index off = 0;
    for (auto& p : parts) {
      const Index len = p.dim(1) * plane;
      if (detail::wants_grad(p)) {
        auto gp = p.grad();
        for (Index n = 0; n < b; ++n)
          for (Index i = 0; i < len; ++i) gp[n * len + i] += gy[(n * c) * plane + off + i];
      }
      off += len;
    }
  });
  return y;
}

// Channels [start, start + count) of an NCHW tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, Index start, Index count) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (start < 0 || count <= 0 || start + count > c)
    throw ShapeError("slice_channels: [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside " + std::to_string(c) + " channels");
  const Index plane = h * w;
  Tensor<T> y({b, count, h, w});
  for (Index n = 0; n < b; ++n)
    std::copy_n(x.ptr() + (n * c + start) * plane, count * plane, y.ptr() + n * count * plane);
  detail::record<T>("slice", {x}, y, [x, y, b, c, start, count, plane]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (Index n = 0; n < b; ++n)
      for (Index i = 0; i < count * plane; ++i) gx[(n * c + start) * plane + i] += gy[n * count * plane + i];
  });
  return y;
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({b, c, 2 * h, 2 * w});
  for (Index p = 0; p < b * c; ++p)
    for (Index i = 0; i < 2 * h; ++i)
      for (Index j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
  detail::record<T>("upsample", {x}, y, [x, y, b, c, h, w]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (Index p = 0; p < b * c; ++p)
      for (Index i = 0; i < 2 * h; ++i)
        for (Index j = 0; j < 2 * w; ++j) gx[(p * h + i / 2) * w + j / 2] += gy[(p * 2 * h + i) * 2 * w + j];
  });
  return y;
}

// Per-channel spatial reduction: [B,C,H,W] -> [B,C,1,1].
template <class T>
Tensor<T> global_pool(const Tensor<T>& x, PoolKind kind) {
  const Index b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({b, c, 1, 1});
  std::vector<Index> arg(static_cast<std::size_t>(b * c), 0);
  for (Index p = 0; p < b * c; ++p) {
    const T* src = x.ptr() + p * plane;
    if (kind == PoolKind::avg) {
      T acc = 0;
      for (Index i = 0; i < plane; ++i) acc += src[i];
      y[p] = acc / static_cast<T>(plane);
    } else {
      Index best = 0;
      for (Index i = 1; i < plane; ++i)
        if (src[i] > src[best]) best = i;
      arg[static_cast<std::size_t>(p)] = best;
      y[p] = src[best];
    }
  }
  detail::record<T>("global_pool", {x}, y, [x, y, kind, arg = std::move(arg), b, c, plane]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (Index p = 0; p < b * c; ++p) {
      if (kind == PoolKind::avg) {
        const T g = gy[p] / static_cast<T>(plane);
        for (Index i = 0; i < plane; ++i) gx[p * plane + i] += g;
      } else {
        gx[p * plane + arg[static_cast<std::size_t>(p)]] += gy[p];
      }
    }
  });
  return y;
}

// Reduction across channels: [B,C,H,W] -> [B,1,H,W].
template <class T>
Tensor<T> channel_pool(const Tensor<T>& x, PoolKind kind) {
  const Index b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({b, 1, x.dim(2), x.dim(3)});
  std::vector<Index> arg(static_cast<std::size_t>(b * plane), 0);
  for (Index n = 0; n < b; ++n)
    for (Index i = 0; i < plane; ++i) {
      const T* src = x.ptr() + n * c * plane + i;
      if (kind == PoolKind::avg) {
        T acc = 0;
        for (Index ch = 0; ch < c; ++ch) acc += src[ch * plane];
        y[n * plane + i] = acc / static_cast<T>(c);
      } else {
        Index best = 0;
        for (Index ch = 1; ch < c; ++ch)
          if (src[ch * plane] > src[best * plane]) best = ch;
        arg[static_cast<std::size_t>(n * plane + i)] = best;
        y[n * plane + i] = src[best * plane];
      }
    }
  detail::record<T>("channel_pool", {x}, y, [x, y, kind, arg = std::move(arg), b, c, plane]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (Index n = 0; n < b; ++n)
      for (Index i = 0; i < plane; ++i) {
        const T g = gy[n * plane + i];
        if (kind == PoolKind::avg) {
          for (Index ch = 0; ch < c; ++ch) gx[(n * c + ch) * plane + i] += g / static_cast<T>(c);
        } else {
          gx[(n * c + arg[static_cast<std::size_t>(n * plane + i)]) * plane + i] += g;
        }
      }
  });
  return y;
}

// Interleaves per-anchor head outputs: box [B,A*5,H,W] and cls [B,A*C,H,W]
// -> [B,A,H,W,5+C] with (tx, ty, tw, th, objectness, class logits...).
template <class T>
Tensor<T> prediction_layout(const Tensor<T>& box, const Tensor<T>& cls, Index anchors) {
  const Index b = box.dim(0), h = box.dim(2), w = box.dim(3);
  if (box.dim(1) != 5 * anchors || cls.dim(1) % anchors != 0 || cls.dim(0) != b || cls.dim(2) != h || cls.dim(3) != w)
    throw ShapeError("prediction_layout: box " + to_string(box.shape()) + " / cls " + to_string(cls.shape()) +
                     " inconsistent with " + std::to_string(anchors) + " anchors");
  const Index nc = cls.dim(1) / anchors, depth = 5 + nc, plane = h * w;
  Tensor<T> y({b, anchors, h, w, depth});
  auto source = [=](Index n, Index a, Index j, Index p) -> std::pair<bool, Index> {
    if (j < 5) return {true, ((n * 5 * anchors) + a * 5 + j) * plane + p};
    return {false, ((n * nc * anchors) + a * nc + (j - 5)) * plane + p};
  };
  for (Index n = 0; n < b; ++n)
    for (Index a = 0; a < anchors; ++a)
      for (Index p = 0; p < plane; ++p)
        for (Index j = 0; j < depth; ++j) {
          const auto [from_box, idx] = source(n, a, j, p);
          y[((n * anchors + a) * plane + p) * depth + j] = from_box ? box[idx] : cls[idx];
        }
  detail::record<T>("prediction_layout", {box, cls}, y, [box, cls, y, source, b, anchors, plane, depth]() mutable {
    const auto gy = y.grad();
    const bool want_box = detail::wants_grad(box), want_cls = detail::wants_grad(cls);
    for (Index n = 0; n < b; ++n)
      for (Index a = 0; a < anchors; ++a)
        for (Index p = 0; p < plane; ++p)
          for (Index j = 0; j < depth; ++j) {
            const auto [from_box, idx] = source(n, a, j, p);
            const T g = gy[((n * anchors + a) * plane + p) * depth + j];
            if (from_box && want_box) box.grad()[idx] += g;
            if (!from_box && want_cls) cls.grad()[idx] += g;
          }
  });
  return y;
}

}  // namespace vdet
