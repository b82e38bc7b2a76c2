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

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "vdet/eval/metrics.hpp"
#include "vdet/model.hpp"

namespace vdet::eval {

struct LayerComplexity {
  std::string name;
  std::int64_t params = 0;           // walked from the parameter registry
  std::int64_t closed_params = 0;    // closed-form layer formula
  std::int64_t macs = 0;             // closed-form layer formula
};

// FLOPs are reported as 2 x MACs; memory is parameter storage at float32.
struct ComplexityReport {
  std::string variant;
  Index input_size = 640;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::vector<LayerComplexity> layers;

  double flops() const { return 2.0 * static_cast<double>(macs); }
  std::int64_t memory_bytes() const { return params * 4; }
};

template <class T>
ComplexityReport count_params_flops(const Model<T>& model, Index input_size = 640) {
  ComplexityReport rep;
  rep.variant = model.config().variant_name();
  rep.input_size = input_size;
  const auto params = model.parameters();
  for (const auto& row : model.layer_costs(input_size)) {
    LayerComplexity l{row.name, 0, row.cost.params, static_cast<std::int64_t>(row.cost.macs)};
    const std::string prefix = row.name + ".";
    for (const auto& [name, t] : params)
      if (name.compare(0, prefix.size(), prefix) == 0) l.params += t.numel();
    rep.macs += l.macs;
    rep.layers.push_back(std::move(l));
  }
  for (const auto& [name, t] : params) rep.params += t.numel();
  return rep;
}

// Runs one inference pass at batch 1 and returns the MACs the kernels
// actually executed.
template <class T>
std::uint64_t measured_macs(Model<T>& model, Index input_size) {
  NoGradScope<T> no_grad;
  const bool was_training = model.training();
  model.train(false);
  const std::uint64_t before = mac_counter();
  model.forward(Tensor<T>::zeros({1, 3, input_size, input_size}));
  model.train(was_training);
  return mac_counter() - before;
}

namespace detail {
inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f%%", 100.0 * v);
  return buf;
}
inline std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace detail

inline void write_complexity(std::ostream& os, const ComplexityReport& r) {
  os << "variant\t" << r.variant << "\ninput\t" << r.input_size << 'x' << r.input_size << "\nparams\t" << r.params
     << "\nmacs\t" << r.macs << "\nflops(2xMACs)\t" << r.flops() << "\nmemory_bytes(float32)\t" << r.memory_bytes()
     << '\n';
}

// Side-by-side base vs proposed with absolute values and relative deltas.
inline void write_complexity_comparison(std::ostream& os, const ComplexityReport& base,
                                        const ComplexityReport& proposed) {
  os << "# model complexity at " << base.input_size << 'x' << base.input_size
     << " (FLOPs = 2 x MACs; memory = parameters at float32)\n";
  os << "metric\t" << base.variant << '\t' << proposed.variant << "\tdelta\n";
  auto row = [&](const char* name, double b, double p, int digits) {
    os << name << '\t' << detail::fixed(b, digits) << '\t' << detail::fixed(p, digits) << '\t'
       << detail::pct(relative_change(b, p)) << '\n';
  };
  row("params(M)", base.params / 1e6, proposed.params / 1e6, 4);
  row("GFLOPs", base.flops() / 1e9, proposed.flops() / 1e9, 4);
  row("memory(MB)", base.memory_bytes() / 1048576.0, proposed.memory_bytes() / 1048576.0, 4);
}

}  // namespace vdet::eval
