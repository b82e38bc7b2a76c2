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

// Finite-difference checks over every differentiable operator and block,
// all in float64 on small random shapes.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vdet/conv.hpp"
#include "vdet/deform.hpp"
#include "vdet/grad_check.hpp"
#include "vdet/nn/blocks.hpp"
#include "vdet/norm.hpp"
#include "vdet/train/loss.hpp"

namespace vdet {

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

template <class M>
std::vector<Tensor<double>> block_inputs(const M& block, const Tensor<double>& x) {
  std::vector<Tensor<double>> in{x};
  for (const auto& [name, p] : block.parameters()) in.push_back(p);
  return in;
}

// Random batch-norm affine terms so the checks do not sit at gamma = 1, beta = 0.
template <class M>
void perturb_parameters(const M& block, Rng& rng, double scale) {
  for (auto [name, p] : block.parameters())
    for (auto& v : p.data()) v += scale * rng.normal();
}

}  // namespace detail

inline std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed = 1, std::size_t probes_per_input = 24) {
  using detail::random_tensor;
  Rng rng(seed);
  GradCheckOptions opt;
  opt.probes_per_input = probes_per_input;
  opt.seed = seed;
  std::vector<GradCheckEntry> out;
  auto check = [&](std::string name, const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> in) {
    out.push_back({std::move(name), grad_check(fn, std::move(in), opt)});
  };

  {
    auto x = random_tensor({2, 3, 7, 7}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    const ConvSpec spec{3, 4, 3, 2, 1, 1, true};
    check("conv2d", [=] { return conv2d(x, w, b, spec); }, {x, w, b});
    auto xd = random_tensor({2, 4, 5, 5}, rng), wd = random_tensor({4, 1, 3, 3}, rng);
    const ConvSpec dw{4, 4, 3, 1, 1, 4, false};
    check("conv2d_depthwise", [=] { return conv2d(xd, wd, dw); }, {xd, wd});
  }
  {
    auto f = random_tensor({3, 5, 6}, rng);
    auto xy = Tensor<double>({2}, std::vector<double>{2.37, 1.61});
    check("bilinear_sample", [=] { return bilinear_sample(f, xy); }, {f, xy});
  }
  {
    auto x = random_tensor({2, 3, 6, 6}, rng);
    check("pool2d_max", [=] { return pool2d(x, PoolKind::max, 3, 2, 1); }, {x});
    check("pool2d_avg", [=] { return pool2d(x, PoolKind::avg, 3, 2, 1); }, {x});
    check("global_pool_max", [=] { return global_pool(x, PoolKind::max); }, {x});
    check("global_pool_avg", [=] { return global_pool(x, PoolKind::avg); }, {x});
    check("channel_pool_max", [=] { return channel_pool(x, PoolKind::max); }, {x});
    check("channel_pool_avg", [=] { return channel_pool(x, PoolKind::avg); }, {x});
    check("silu", [=] { return silu(x); }, {x});
    check("sigmoid", [=] { return sigmoid(x); }, {x});
    check("relu", [=] { return relu(x); }, {x});
    check("upsample_nearest2x", [=] { return upsample_nearest2x(x); }, {x});
    auto y = random_tensor({2, 2, 6, 6}, rng);
    check("concat_slice", [=] { return slice_channels(concat_channels<double>({x, y}), 1, 3); }, {x, y});
    auto g = random_tensor({2, 3, 1, 1}, rng);
    check("mul_broadcast", [=] { return mul(g, x); }, {g, x});
  }
  {
    auto x = random_tensor({3, 4, 3, 3}, rng, 2.0);
    auto gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
    auto state = std::make_shared<BatchNormState<double>>(4);
    check("batch_norm", [=] { return batch_norm(x, gamma, beta, *state, {}); }, {x, gamma, beta});
  }
  {
    nn::Cbs<double> cbs(4, 6, 3, 2, rng);
    detail::perturb_parameters(cbs, rng, 0.1);
    auto x = random_tensor({2, 4, 6, 6}, rng);
    check("cbs", [&cbs, x] { return cbs.forward(x); }, detail::block_inputs(cbs, x));
  }
  // Blocks are kept alive on the heap until the suite returns.
  std::vector<std::shared_ptr<void>> keep;
  auto block = [&](std::string name, auto block_ptr, Tensor<double> x) {
    auto* b = block_ptr.get();
    keep.push_back(block_ptr);
    detail::perturb_parameters(*b, rng, 0.1);
    check(std::move(name), [b, x] { return b->forward(x); }, detail::block_inputs(*b, x));
  };
  block("ghost_conv", std::make_shared<nn::GhostConv<double>>(nn::GhostSpec{4, 6, 2, 1, 3, 1}, rng),
        random_tensor({2, 4, 5, 5}, rng));
  block("channel_attention", std::make_shared<nn::ChannelAttention<double>>(nn::CbamSpec{8, 2, 7}, rng),
        random_tensor({2, 8, 4, 4}, rng));
  block("spatial_attention", std::make_shared<nn::SpatialAttention<double>>(nn::CbamSpec{8, 2, 7}, rng),
        random_tensor({2, 8, 5, 5}, rng));
  block("cbam", std::make_shared<nn::Cbam<double>>(nn::CbamSpec{8, 2, 7}, rng), random_tensor({2, 8, 5, 5}, rng));
  {
    // Offsets away from the integer lattice keep the bilinear kernel smooth.
    auto x = random_tensor({1, 3, 5, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng);
    auto off = random_tensor({1, 18, 5, 5}, rng, 0.7), mask = random_tensor({1, 9, 5, 5}, rng);
    for (auto& v : mask.data()) v = 0.2 + 0.6 * vdet::detail::sigmoid_scalar(v);
    const DeformSpec spec{3, 4, 3, 1, 1};
    check("deform_conv2d", [=] { return deform_conv2d(x, off, mask, w, Tensor<double>(), spec); }, {x, off, mask, w});
  }
  block("dcnv2_block", std::make_shared<nn::DeformConv<double>>(DeformSpec{3, 4, 3, 1, 1}, rng),
        random_tensor({2, 3, 5, 5}, rng));
  block("sppf", std::make_shared<nn::Sppf<double>>(4, 6, 2, rng), random_tensor({2, 4, 6, 6}, rng));
  block("c2f", std::make_shared<nn::C2f<double>>(4, 6, 1, true, rng), random_tensor({2, 4, 5, 5}, rng));
  block("c3ghost", std::make_shared<nn::C3<double>>(4, 6, 1, true, nn::ConvKind::ghost, rng),
        random_tensor({2, 4, 5, 5}, rng));
  {
    // Two images on an 8/16/32 pyramid over a 32x32 canvas, two classes.
    std::vector<Tensor<double>> raw{random_tensor({2, 1, 4, 4, 7}, rng, 0.5), random_tensor({2, 1, 2, 2, 7}, rng, 0.5),
                                    random_tensor({2, 1, 1, 1, 7}, rng, 0.5)};
    const std::vector<std::vector<GroundTruth>> gts{
        {{0, Box{2.5, 3.0, 17.5, 16.0}, false}, {1, Box{18.0, 17.0, 30.5, 31.0}, false}},
        {{1, Box{9.0, 1.5, 22.0, 13.0}, false}}};
    const auto targets = train::assign_targets(gts, {{{4, 4}, {2, 2}, {1, 1}}}, {8, 16, 32}, 1);
    check("detection_loss", [=] { return train::detection_loss(raw, targets).total; }, raw);
  }
  return out;
}

inline bool gradcheck_passed(const std::vector<GradCheckEntry>& entries, double tolerance = 1e-4) {
  for (const auto& e : entries)
    if (!(e.result.max_rel_error < tolerance) || e.result.probes < 20) return false;
  return true;
}

}  // namespace vdet
