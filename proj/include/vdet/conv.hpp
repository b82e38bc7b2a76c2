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

#pragma once

#include <string>
#include <vector>

#include "vdet/gemm.hpp"
#include "vdet/ops.hpp"

namespace vdet {

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 1;
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
  bool bias = false;

  void validate() const {
    if (stride <= 0) throw ParameterError("conv: stride must be positive, got " + std::to_string(stride));
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || groups <= 0)
      throw ParameterError("conv: channel counts, kernel and groups must be positive");
    if (padding < 0) throw ParameterError("conv: negative padding");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw ParameterError("conv: channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                           " not divisible by groups " + std::to_string(groups));
  }
  Index out_size(Index in) const { return (in + 2 * padding - kernel) / stride + 1; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }
  Index weight_count() const { return out_channels * (in_channels / groups) * kernel * kernel; }
  Index param_count() const { return weight_count() + (bias ? out_channels : 0); }
};

namespace detail {

// Unfolds channels [c0, c0 + cg) of every image into col[cg*k*k, B*Ho*Wo].
template <class T>
void im2col(const Tensor<T>& x, Index c0, Index cg, const ConvSpec& s, Index ho, Index wo, T* col) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index k = s.kernel, cols = b * ho * wo;
  for (Index ci = 0; ci < cg; ++ci)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (Index n = 0; n < b; ++n) {
          const T* plane = x.ptr() + (n * c + c0 + ci) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * s.stride - s.padding + ki;
            T* dst = row + (n * ho + oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wo, T(0));
              continue;
            }
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * s.stride - s.padding + kj;
              dst[ox] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : T(0);
            }
          }
        }
      }
}

template <class T>
void col2im(const T* col, Index c0, Index cg, const ConvSpec& s, Index ho, Index wo, const Tensor<T>& x, std::span<T> gx) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index k = s.kernel, cols = b * ho * wo;
  for (Index ci = 0; ci < cg; ++ci)
    for (Index ki = 0; ki < k; ++ki)
      for (Index kj = 0; kj < k; ++kj) {
        const T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (Index n = 0; n < b; ++n) {
          T* plane = gx.data() + (n * c + c0 + ci) * h * w;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * s.stride - s.padding + ki;
            if (iy < 0 || iy >= h) continue;
            const T* src = row + (n * ho + oy) * wo;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * s.stride - s.padding + kj;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += src[ox];
            }
          }
        }
      }
}

}  // namespace detail

// Zero-padded cross-correlation. input [B,C,H,W], weights [N,C/g,k,k],
// optional bias [N] -> [B,N,H',W'].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& s) {
  s.validate();
  if (x.rank() != 4 || x.dim(1) != s.in_channels)
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " expects " + std::to_string(s.in_channels) +
                     " channels");
  if (weight.shape() != s.weight_shape())
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " expected " + to_string(s.weight_shape()));
  if (s.bias != bias.defined() || (bias.defined() && bias.shape() != Shape{s.out_channels}))
    throw ShapeError("conv2d: bias does not match spec");
  const Index b = x.dim(0), ho = s.out_size(x.dim(2)), wo = s.out_size(x.dim(3));
  if (ho <= 0 || wo <= 0)
    throw ShapeError("conv2d: kernel " + std::to_string(s.kernel) + " larger than padded input " +
                     to_string(x.shape()));
  const Index cg = s.in_channels / s.groups, ng = s.out_channels / s.groups;
  const Index rows = cg * s.kernel * s.kernel, cols = b * ho * wo, plane = ho * wo;

  Tensor<T> y({b, s.out_channels, ho, wo});
  std::vector<T> col(static_cast<std::size_t>(rows * cols));
  std::vector<T> out(static_cast<std::size_t>(ng * cols));
  for (Index g = 0; g < s.groups; ++g) {
    detail::im2col(x, g * cg, cg, s, ho, wo, col.data());
    detail::gemm<T>(false, false, ng, cols, rows, weight.ptr() + g * ng * rows, col.data(), out.data(), false);
    for (Index o = 0; o < ng; ++o) {
      const T bv = bias.defined() ? bias[g * ng + o] : T(0);
      for (Index n = 0; n < b; ++n) {
        const T* src = out.data() + o * cols + n * plane;
        T* dst = y.ptr() + (n * s.out_channels + g * ng + o) * plane;
        for (Index p = 0; p < plane; ++p) dst[p] = src[p] + bv;
      }
    }
  }
  mac_counter() += static_cast<std::uint64_t>(s.weight_count() * plane * b);

  detail::record<T>("conv2d", {x, weight, bias}, y, [x, weight, bias, y, s, b, ho, wo]() mutable {
    const Index cg = s.in_channels / s.groups, ng = s.out_channels / s.groups;
    const Index rows = cg * s.kernel * s.kernel, cols = b * ho * wo, plane = ho * wo;
    const auto gy = y.grad();
    std::vector<T> col(static_cast<std::size_t>(rows * cols));
    std::vector<T> gout(static_cast<std::size_t>(ng * cols));
    const bool want_x = detail::wants_grad(x), want_w = detail::wants_grad(weight);
    for (Index g = 0; g < s.groups; ++g) {
      for (Index o = 0; o < ng; ++o)
        for (Index n = 0; n < b; ++n)
          std::copy_n(gy.data() + (n * s.out_channels + g * ng + o) * plane, plane,
                      gout.data() + o * cols + n * plane);
      if (detail::wants_grad(bias)) {
        auto gb = bias.grad();
        for (Index o = 0; o < ng; ++o) {
          T acc = 0;
          for (Index i = 0; i < cols; ++i) acc += gout[static_cast<std::size_t>(o * cols + i)];
          gb[g * ng + o] += acc;
        }
      }
      if (want_w) {
        detail::im2col(x, g * cg, cg, s, ho, wo, col.data());
        detail::gemm<T>(false, true, ng, rows, cols, gout.data(), col.data(), weight.grad().data() + g * ng * rows,
                        true);
      }
      if (want_x) {
        detail::gemm<T>(true, false, rows, cols, ng, weight.ptr() + g * ng * rows, gout.data(), col.data(), false);
        detail::col2im(col.data(), g * cg, cg, s, ho, wo, x, x.grad());
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const ConvSpec& s) {
  return conv2d(x, weight, Tensor<T>(), s);
}

// Windowed max or average. Padding cells are skipped (never the max, never
// counted in the average's denominator).
template <class T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, Index k, Index stride, Index pad) {
  if (k < 1 || stride < 1 || pad < 0) throw ParameterError("pool2d: need k >= 1, stride >= 1, pad >= 0");
  if (x.rank() != 4) throw ShapeError("pool2d: expects NCHW input, got " + to_string(x.shape()));
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h + 2 * pad || k > w + 2 * pad)
    throw ParameterError("pool2d: kernel " + std::to_string(k) + " larger than padded input " + to_string(x.shape()));
  if (pad >= k)
    throw ParameterError("pool2d: padding must be smaller than the kernel");
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  Tensor<T> y({b, c, ho, wo});
  std::vector<Index> arg(kind == PoolKind::max ? static_cast<std::size_t>(y.numel()) : 0);
  std::vector<T> counts(kind == PoolKind::avg ? static_cast<std::size_t>(ho * wo) : 0);
  for (Index p = 0; p < b * c; ++p) {
    const T* src = x.ptr() + p * h * w;
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        const Index y0 = std::max<Index>(oy * stride - pad, 0), y1 = std::min(oy * stride - pad + k, h);
        const Index x0 = std::max<Index>(ox * stride - pad, 0), x1 = std::min(ox * stride - pad + k, w);
        const Index o = (p * ho + oy) * wo + ox;
        if (kind == PoolKind::max) {
          Index best = y0 * w + x0;
          for (Index iy = y0; iy < y1; ++iy)
            for (Index ix = x0; ix < x1; ++ix)
              if (src[iy * w + ix] > src[best]) best = iy * w + ix;
          arg[static_cast<std::size_t>(o)] = best;
          y[o] = src[best];
        } else {
          T acc = 0;
          for (Index iy = y0; iy < y1; ++iy)
            for (Index ix = x0; ix < x1; ++ix) acc += src[iy * w + ix];
          const T cnt = static_cast<T>((y1 - y0) * (x1 - x0));
          if (p == 0) counts[static_cast<std::size_t>(oy * wo + ox)] = cnt;
          y[o] = acc / cnt;
        }
      }
  }
  detail::record<T>("pool2d", {x}, y,
                    [x, y, kind, k, stride, pad, b, c, h, w, ho, wo, arg = std::move(arg),
                     counts = std::move(counts)]() mutable {
                      const auto gy = y.grad();
                      auto gx = x.grad();
                      for (Index p = 0; p < b * c; ++p)
                        for (Index oy = 0; oy < ho; ++oy)
                          for (Index ox = 0; ox < wo; ++ox) {
                            const Index o = (p * ho + oy) * wo + ox;
                            if (kind == PoolKind::max) {
                              gx[p * h * w + arg[static_cast<std::size_t>(o)]] += gy[o];
                              continue;
                            }
                            const Index y0 = std::max<Index>(oy * stride - pad, 0),
                                        y1 = std::min(oy * stride - pad + k, h);
                            const Index x0 = std::max<Index>(ox * stride - pad, 0),
                                        x1 = std::min(ox * stride - pad + k, w);
                            const T g = gy[o] / counts[static_cast<std::size_t>(oy * wo + ox)];
                            for (Index iy = y0; iy < y1; ++iy)
                              for (Index ix = x0; ix < x1; ++ix) gx[p * h * w + iy * w + ix] += g;
                          }
                    });
  return y;
}

}  // namespace vdet
