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

// Bilinear sampling and modulated deformable convolution.
//
// Sampling follows the zero-padding convention: each of the four lattice
// neighbours outside the map contributes zero, which keeps the sampler
// continuous everywhere.

#pragma once

#include <cmath>
#include <vector>

#include "vdet/conv.hpp"

namespace vdet {

namespace detail {

template <class T>
struct BilinearTaps {
  Index y0 = 0, x0 = 0;
  T ly = 0, lx = 0;
  bool empty = true;  // no neighbour inside the map
};

template <class T>
BilinearTaps<T> bilinear_taps(Index h, Index w, T y, T x) {
  BilinearTaps<T> t;
  if (!(y > T(-1) && y < static_cast<T>(h) && x > T(-1) && x < static_cast<T>(w))) return t;
  const T fy = std::floor(y), fx = std::floor(x);
  t.y0 = static_cast<Index>(fy);
  t.x0 = static_cast<Index>(fx);
  t.ly = y - fy;
  t.lx = x - fx;
  t.empty = false;
  return t;
}

template <class T>
T plane_at(const T* plane, Index h, Index w, Index y, Index x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : T(0);
}

// Interpolated value; optionally its derivatives along y and x.
template <class T>
T bilinear_value(const T* plane, Index h, Index w, const BilinearTaps<T>& t, T* dy = nullptr, T* dx = nullptr) {
  if (t.empty) {
    if (dy) *dy = 0;
    if (dx) *dx = 0;
    return 0;
  }
  const T v00 = plane_at(plane, h, w, t.y0, t.x0), v01 = plane_at(plane, h, w, t.y0, t.x0 + 1);
  const T v10 = plane_at(plane, h, w, t.y0 + 1, t.x0), v11 = plane_at(plane, h, w, t.y0 + 1, t.x0 + 1);
  if (dy) *dy = (T(1) - t.lx) * (v10 - v00) + t.lx * (v11 - v01);
  if (dx) *dx = (T(1) - t.ly) * (v01 - v00) + t.ly * (v11 - v10);
  return (T(1) - t.ly) * ((T(1) - t.lx) * v00 + t.lx * v01) + t.ly * ((T(1) - t.lx) * v10 + t.lx * v11);
}

// Adds g distributed by the interpolation weights into a gradient plane.
template <class T>
void bilinear_scatter(T* plane, Index h, Index w, const BilinearTaps<T>& t, T g) {
  if (t.empty) return;
  auto put = [&](Index y, Index x, T v) {
    if (y >= 0 && y < h && x >= 0 && x < w) plane[y * w + x] += v;
  };
  put(t.y0, t.x0, g * (T(1) - t.ly) * (T(1) - t.lx));
  put(t.y0, t.x0 + 1, g * (T(1) - t.ly) * t.lx);
  put(t.y0 + 1, t.x0, g * t.ly * (T(1) - t.lx));
  put(t.y0 + 1, t.x0 + 1, g * t.ly * t.lx);
}

}  // namespace detail

// Samples every channel of feature [C,H,W] at column x, row y, where
// coords = (x, y). Differentiable w.r.t. both the feature and the coordinates.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& coords) {
  if (feature.rank() != 3) throw ShapeError("bilinear_sample: feature must be [C,H,W]");
  if (coords.numel() != 2) throw ShapeError("bilinear_sample: coords must hold (x, y)");
  const Index c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const auto taps = detail::bilinear_taps(h, w, coords[1], coords[0]);
  Tensor<T> out({c});
  for (Index ch = 0; ch < c; ++ch) out[ch] = detail::bilinear_value(feature.ptr() + ch * h * w, h, w, taps);
  detail::record<T>("bilinear_sample", {feature, coords}, out, [feature, coords, out, taps, c, h, w]() mutable {
    const auto g = out.grad();
    if (detail::wants_grad(feature)) {
      auto gf = feature.grad();
      for (Index ch = 0; ch < c; ++ch) detail::bilinear_scatter(gf.data() + ch * h * w, h, w, taps, g[ch]);
    }
    if (detail::wants_grad(coords)) {
      auto gc = coords.grad();
      for (Index ch = 0; ch < c; ++ch) {
        T dy = 0, dx = 0;
        detail::bilinear_value(feature.ptr() + ch * h * w, h, w, taps, &dy, &dx);
        gc[0] += g[ch] * dx;
        gc[1] += g[ch] * dy;
      }
    }
  });
  return out;
}

struct DeformSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;

  Index points() const { return kernel * kernel; }
  Index out_size(Index in) const { return (in + 2 * padding - kernel) / stride + 1; }
  ConvSpec as_conv() const { return {in_channels, out_channels, kernel, stride, padding, 1, false}; }
};

namespace detail {

// Sampling position of kernel point kk for output (oy, ox); offsets hold
// (dy, dx) pairs per kernel point.
template <class T>
void deform_position(const DeformSpec& s, const T* offset, Index plane, Index kk, Index oy, Index ox, Index p,
                     T& y, T& x) {
  const Index ki = kk / s.kernel, kj = kk % s.kernel;
  y = static_cast<T>(oy * s.stride - s.padding + ki) + offset[(2 * kk) * plane + p];
  x = static_cast<T>(ox * s.stride - s.padding + kj) + offset[(2 * kk + 1) * plane + p];
}

template <class T>
void deform_im2col(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& mask, const DeformSpec& s,
                   Index ho, Index wo, T* col) {
  const Index b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index kpts = s.points(), plane = ho * wo, cols = b * plane;
  for (Index n = 0; n < b; ++n) {
    const T* off = offset.ptr() + n * 2 * kpts * plane;
    const T* msk = mask.ptr() + n * kpts * plane;
    for (Index kk = 0; kk < kpts; ++kk)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          const Index p = oy * wo + ox;
          T py, px;
          deform_position(s, off, plane, kk, oy, ox, p, py, px);
          const auto taps = bilinear_taps(h, w, py, px);
          const T m = msk[kk * plane + p];
          for (Index ch = 0; ch < c; ++ch)
            col[(ch * kpts + kk) * cols + n * plane + p] =
                m * bilinear_value(x.ptr() + (n * c + ch) * h * w, h, w, taps);
        }
  }
}

}  // namespace detail

// y(p0) = sum_k w_k * x(p0 + p_k + dp_k) * m_k.
// x [B,C,H,W]; offset [B,2K,H',W'] as (dy, dx) per kernel point; mask
// [B,K,H',W'] (already squashed); weight [N,C,k,k]; optional bias [N].
template <class T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& mask, const Tensor<T>& weight,
                        const Tensor<T>& bias, const DeformSpec& s) {
  s.as_conv().validate();
  if (x.rank() != 4 || x.dim(1) != s.in_channels)
    throw ShapeError("deform_conv2d: input " + to_string(x.shape()) + " expects " + std::to_string(s.in_channels) +
                     " channels");
  const Index b = x.dim(0), ho = s.out_size(x.dim(2)), wo = s.out_size(x.dim(3)), kpts = s.points();
  if (ho <= 0 || wo <= 0) throw ShapeError("deform_conv2d: kernel larger than padded input");
  if (offset.shape() != Shape{b, 2 * kpts, ho, wo})
    throw ShapeError("deform_conv2d: offset " + to_string(offset.shape()) + " expected " +
                     to_string({b, 2 * kpts, ho, wo}));
  if (mask.shape() != Shape{b, kpts, ho, wo})
    throw ShapeError("deform_conv2d: mask " + to_string(mask.shape()) + " expected " + to_string({b, kpts, ho, wo}));
  if (weight.shape() != s.as_conv().weight_shape()) throw ShapeError("deform_conv2d: weight shape mismatch");
  if (bias.defined() && bias.shape() != Shape{s.out_channels}) throw ShapeError("deform_conv2d: bias shape mismatch");

  const Index rows = s.in_channels * kpts, plane = ho * wo, cols = b * plane, n_out = s.out_channels;
  std::vector<T> col(static_cast<std::size_t>(rows * cols));
  detail::deform_im2col(x, offset, mask, s, ho, wo, col.data());
  std::vector<T> out(static_cast<std::size_t>(n_out * cols));
  detail::gemm<T>(false, false, n_out, cols, rows, weight.ptr(), col.data(), out.data(), false);
  Tensor<T> y({b, n_out, ho, wo});
  for (Index o = 0; o < n_out; ++o) {
    const T bv = bias.defined() ? bias[o] : T(0);
    for (Index n = 0; n < b; ++n)
      for (Index p = 0; p < plane; ++p) y[(n * n_out + o) * plane + p] = out[static_cast<std::size_t>(o * cols + n * plane + p)] + bv;
  }
  mac_counter() += static_cast<std::uint64_t>((n_out + 4) * rows * cols);

  detail::record<T>("deform_conv2d", {x, offset, mask, weight, bias}, y,
                    [x, offset, mask, weight, bias, y, s, b, ho, wo]() mutable {
                      const Index c = x.dim(1), h = x.dim(2), w = x.dim(3), kpts = s.points();
                      const Index rows = c * kpts, plane = ho * wo, cols = b * plane, n_out = s.out_channels;
                      const auto gy = y.grad();
                      std::vector<T> gout(static_cast<std::size_t>(n_out * cols));
                      for (Index o = 0; o < n_out; ++o)
                        for (Index n = 0; n < b; ++n)
                          std::copy_n(gy.data() + (n * n_out + o) * plane, plane,
                                      gout.data() + o * cols + n * plane);
                      if (detail::wants_grad(bias)) {
                        auto gb = bias.grad();
                        for (Index o = 0; o < n_out; ++o) {
                          T acc = 0;
                          for (Index i = 0; i < cols; ++i) acc += gout[static_cast<std::size_t>(o * cols + i)];
                          gb[o] += acc;
                        }
                      }
                      std::vector<T> col(static_cast<std::size_t>(rows * cols));
                      if (detail::wants_grad(weight)) {
                        detail::deform_im2col(x, offset, mask, s, ho, wo, col.data());
                        detail::gemm<T>(false, true, n_out, rows, cols, gout.data(), col.data(),
                                        weight.grad().data(), true);
                      }
                      const bool want_x = detail::wants_grad(x), want_off = detail::wants_grad(offset),
                                 want_mask = detail::wants_grad(mask);
                      if (!want_x && !want_off && !want_mask) return;
                      detail::gemm<T>(true, false, rows, cols, n_out, weight.ptr(), gout.data(), col.data(), false);
                      std::span<T> gx = want_x ? x.grad() : std::span<T>();
                      std::span<T> goff = want_off ? offset.grad() : std::span<T>();
                      std::span<T> gmask = want_mask ? mask.grad() : std::span<T>();
                      for (Index n = 0; n < b; ++n) {
                        const T* off = offset.ptr() + n * 2 * kpts * plane;
                        const T* msk = mask.ptr() + n * kpts * plane;
                        for (Index kk = 0; kk < kpts; ++kk)
                          for (Index oy = 0; oy < ho; ++oy)
                            for (Index ox = 0; ox < wo; ++ox) {
                              const Index p = oy * wo + ox;
                              T py, px;
                              detail::deform_position(s, off, plane, kk, oy, ox, p, py, px);
                              const auto taps = detail::bilinear_taps(h, w, py, px);
                              const T m = msk[kk * plane + p];
                              T acc_m = 0, acc_y = 0, acc_x = 0;
                              for (Index ch = 0; ch < c; ++ch) {
                                const T g = col[static_cast<std::size_t>((ch * kpts + kk) * cols + n * plane + p)];
                                const T* xp = x.ptr() + (n * c + ch) * h * w;
                                T dy = 0, dx = 0;
                                const T v = detail::bilinear_value(xp, h, w, taps, &dy, &dx);
                                acc_m += g * v;
                                acc_y += g * dy;
                                acc_x += g * dx;
                                if (want_x) detail::bilinear_scatter(gx.data() + (n * c + ch) * h * w, h, w, taps, g * m);
                              }
                              if (want_mask) gmask[(n * kpts + kk) * plane + p] += acc_m;
                              if (want_off) {
                                goff[(n * 2 * kpts + 2 * kk) * plane + p] += m * acc_y;
                                goff[(n * 2 * kpts + 2 * kk + 1) * plane + p] += m * acc_x;
                              }
                            }
                      }
                    });
  return y;
}

}  // namespace vdet
