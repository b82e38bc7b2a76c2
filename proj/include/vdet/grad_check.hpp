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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vdet/ops.hpp"
#include "vdet/rng.hpp"

namespace vdet {

struct GradCheckOptions {
  double eps = 1e-6;
  // Elements probed per input tensor (all elements when the tensor is smaller).
  std::size_t probes_per_input = 8;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t probes = 0;
};

// Compares reverse-mode gradients of fn against central differences.
// fn may return any shape; it is reduced to a scalar with fixed random
// weights so every output element contributes. The relative error of a probe
// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& opt = {}) {
  Rng rng(opt.seed);
  Tensor<double> weights;
  auto reduce = [&](const Tensor<double>& y) {
    if (!weights.defined()) {
      weights = Tensor<double>(y.shape());
      for (auto& v : weights.data()) v = rng.uniform(-1.0, 1.0);
    }
    return weighted_sum(y, weights);
  };

  for (auto& t : inputs) t.requires_grad_(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, reduce(fn()));
  }
  std::vector<Tensor<double>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad_tensor());
  tape.clear();

  auto eval = [&]() {
    NoGradScope<double> off;
    return reduce(fn()).item();
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = inputs[i];
    std::vector<Index> picks;
    if (static_cast<std::size_t>(t.numel()) <= opt.probes_per_input) {
      for (Index j = 0; j < t.numel(); ++j) picks.push_back(j);
    } else {
      for (std::size_t j = 0; j < opt.probes_per_input; ++j) picks.push_back(rng.randint(0, t.numel() - 1));
    }
    for (Index j : picks) {
      const double saved = t[j];
      t[j] = saved + opt.eps;
      const double up = eval();
      t[j] = saved - opt.eps;
      const double down = eval();
      t[j] = saved;
      const double numeric = (up - down) / (2 * opt.eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.probes;
    }
  }
  for (auto& t : inputs) t.drop_grad();
  return result;
}

}  // namespace vdet
