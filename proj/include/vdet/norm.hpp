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

#include <cmath>
#include <vector>

#include "vdet/tensor.hpp"

namespace vdet {

template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(Index channels = 1)
      : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::ones({channels})) {}
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization of [B,C,H,W]. Training mode uses the batch's
// biased statistics and folds them into the running estimates; inference
// mode reads the running estimates.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     const BatchNormOptions& opt) {
  if (x.rank() != 4) throw ShapeError("batch_norm: expects NCHW input, got " + to_string(x.shape()));
  const Index b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} || state.running_mean.shape() != Shape{c})
    throw ShapeError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
  const Index count = b * plane;
  if (opt.training && count < 2)
    throw ParameterError("batch_norm: training mode needs at least 2 values per channel");
  const T eps = static_cast<T>(opt.eps);

  std::vector<T> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    T mu, var;
    if (opt.training) {
      T acc = 0;
      for (Index n = 0; n < b; ++n) {
        const T* src = x.ptr() + (n * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) acc += src[i];
      }
      mu = acc / static_cast<T>(count);
      T sq = 0;
      for (Index n = 0; n < b; ++n) {
        const T* src = x.ptr() + (n * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      var = sq / static_cast<T>(count);
      const T m = static_cast<T>(opt.momentum);
      state.running_mean[ch] = (T(1) - m) * state.running_mean[ch] + m * mu;
      state.running_var[ch] = (T(1) - m) * state.running_var[ch] + m * var;
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    mean[static_cast<std::size_t>(ch)] = mu;
    inv_std[static_cast<std::size_t>(ch)] = T(1) / std::sqrt(var + eps);
  }

  Tensor<T> y(x.shape());
  for (Index n = 0; n < b; ++n)
    for (Index ch = 0; ch < c; ++ch) {
      const T a = gamma[ch] * inv_std[static_cast<std::size_t>(ch)];
      const T shift = beta[ch] - a * mean[static_cast<std::size_t>(ch)];
      const T* src = x.ptr() + (n * c + ch) * plane;
      T* dst = y.ptr() + (n * c + ch) * plane;
      for (Index i = 0; i < plane; ++i) dst[i] = a * src[i] + shift;
    }
  mac_counter() += static_cast<std::uint64_t>(x.numel());

  const bool training = opt.training;
  detail::record<T>("batch_norm", {x, gamma, beta}, y,
                    [x, gamma, beta, y, mean = std::move(mean), inv_std = std::move(inv_std), b, c, plane, count,
                     training]() mutable {
                      const auto gy = y.grad();
                      for (Index ch = 0; ch < c; ++ch) {
                        const T mu = mean[static_cast<std::size_t>(ch)], is = inv_std[static_cast<std::size_t>(ch)];
                        T sum_g = 0, sum_gx = 0;
                        for (Index n = 0; n < b; ++n)
                          for (Index i = 0; i < plane; ++i) {
                            const Index o = (n * c + ch) * plane + i;
                            sum_g += gy[o];
                            sum_gx += gy[o] * (x[o] - mu) * is;
                          }
                        if (detail::wants_grad(gamma)) gamma.grad()[ch] += sum_gx;
                        if (detail::wants_grad(beta)) beta.grad()[ch] += sum_g;
                        if (!detail::wants_grad(x)) continue;
                        auto gx = x.grad();
                        const T gm = gamma[ch];
                        for (Index n = 0; n < b; ++n)
                          for (Index i = 0; i < plane; ++i) {
                            const Index o = (n * c + ch) * plane + i;
                            if (training) {
                              const T xhat = (x[o] - mu) * is;
                              gx[o] += gm * is / static_cast<T>(count) *
                                       (static_cast<T>(count) * gy[o] - sum_g - xhat * sum_gx);
                            } else {
                              gx[o] += gm * is * gy[o];
                            }
                          }
                      }
                    });
  return y;
}

}  // namespace vdet
