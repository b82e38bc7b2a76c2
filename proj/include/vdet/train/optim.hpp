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
#include <numbers>
#include <vector>

#include "vdet/errors.hpp"
#include "vdet/nn/module.hpp"

namespace vdet::train {

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

// One Adam update with bias correction. Moments are kept in double so the
// float32 trajectory only rounds at the parameter write.
template <class T>
void adam_step(const std::vector<nn::NamedTensor<T>>& params, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto [name, p] = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != static_cast<std::size_t>(p.numel())) throw ShapeError("adam_step: state size mismatch for " + name);
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
      if (lr == 0) continue;
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

inline double cosine_lr(double epoch, double total_epochs, double lr0, double eta_min) {
  if (total_epochs <= 0) return lr0;
  return eta_min + 0.5 * (lr0 - eta_min) * (1 + std::cos(std::numbers::pi * epoch / total_epochs));
}

// True once the best validation mAP is at least `patience` epochs old, where
// an epoch only counts as better when it beats the previous best by > 1e-6.
inline bool early_stop_check(const std::vector<double>& map_history, std::int64_t patience = 10) {
  if (map_history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < map_history.size(); ++i)
    if (map_history[i] > map_history[best] + 1e-6) best = i;
  return static_cast<std::int64_t>(map_history.size() - 1 - best) >= patience;
}

}  // namespace vdet::train
