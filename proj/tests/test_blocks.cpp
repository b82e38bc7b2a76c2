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

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "vdet/nn/blocks.hpp"

namespace vdet {
namespace {

using namespace vdet::nn;
using testing::max_abs_diff;
using testing::randn;

template <class T>
void zero_where(const Module<T>& m, const std::string& needle) {
  for (auto [name, t] : m.parameters())
    if (name.find(needle) != std::string::npos)
      for (auto& v : t.data()) v = T(0);
}

template <class T>
Index count_where(const Module<T>& m, const std::string& prefix) {
  Index n = 0;
  for (const auto& [name, t] : m.parameters())
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  return n;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(Cbs, OrderIsConvNormActivation) {
  Rng rng(1);
  Cbs<double> block(3, 4, 3, 1, rng);
  const auto x = randn<double>({2, 3, 6, 6}, rng);
  const auto y = block.forward(x);
  const auto conv = block.conv().forward(x);
  BatchNormState<double> st(4);
  const auto bn = batch_norm(conv, block.bn().gamma(), block.bn().beta(), st, {});
  EXPECT_LT(max_abs_diff(y, silu(bn)), 1e-12);
  BatchNormState<double> st2(4);
  const auto swapped = batch_norm(silu(conv), block.bn().gamma(), block.bn().beta(), st2, {});
  EXPECT_GT(max_abs_diff(y, swapped), 1e-3);
}

TEST(Cbs, StrideTwoHalvesSpatialDims) {
  Rng rng(1);
  Cbs<float> block(3, 16, 3, 2, rng);
  block.train(false);
  EXPECT_EQ(block.forward(Tensor<float>({1, 3, 640, 640})).shape(), (Shape{1, 16, 320, 320}));
}

TEST(Ghost, ParameterCountAgainstStandardConv) {
  Rng rng(1);
  GhostConv<double> g({64, 64, 2, 1, 3, 1}, rng);
  const Index conv_params = count_where(g, "primary.") + count_where(g, "cheap.");
  EXPECT_EQ(count_where(g, "primary."), 2048);
  EXPECT_EQ(count_where(g, "cheap."), 288);
  EXPECT_EQ(conv_params, 2336);
  EXPECT_EQ(g.spec().param_count(), g.parameter_count());
  EXPECT_NEAR(static_cast<double>(conv_params) / 4096.0, 0.57, 0.005);
}

// With s = 2, d = 3 the conv-weight ratio is 1/2 + 9 / (2 C k^2) for even n,
// so it falls below 0.6 exactly when C k^2 > 45.
TEST(Ghost, RatioFollowsClosedForm) {
  for (Index c = 8; c <= 512; c += 8)
    for (Index n : {16, 64, 256})
      for (Index k : {1, 3}) {
        const GhostSpec s{c, n, 2, k, 3, 1};
        const double ratio = static_cast<double>(s.param_count() - 2 * n) / static_cast<double>(c * n * k * k);
        EXPECT_NEAR(ratio, 0.5 + 9.0 / (2.0 * static_cast<double>(c * k * k)), 1e-12) << c << " " << n << " " << k;
        EXPECT_EQ(ratio < 0.6, c * k * k > 45) << c << " " << n << " " << k;
      }
}

TEST(Ghost, OutputChannelsAreTruncatedToN) {
  Rng rng(2);
  for (auto [n, s] : {std::pair<Index, Index>{64, 2}, {96, 3}, {17, 2}}) {
    GhostConv<float> g({8, n, s, 1, 3, 1}, rng);
    EXPECT_EQ(g.forward(Tensor<float>({2, 8, 5, 5})).dim(1), n);
  }
}

TEST(Ghost, ZeroInputGivesZeroPreNorm) {
  Rng rng(3);
  GhostConv<double> g({4, 6, 2, 1, 3, 1}, rng);
  for (const auto y = g.forward_pre_norm(Tensor<double>({1, 4, 5, 5})); double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ghost, RejectsOutputsBelowRatio) {
  Rng rng(3);
  EXPECT_THROW(GhostConv<float>({4, 2, 3, 1, 3, 1}, rng), ParameterError);
}

TEST(ChannelAttention, ZeroMlpGivesHalf) {
  Rng rng(4);
  ChannelAttention<double> cam({32, 16, 7}, rng);
  zero_where(cam, "");
  const auto m = cam.forward(randn<double>({2, 32, 5, 3}, rng));
  EXPECT_EQ(m.shape(), (Shape{2, 32, 1, 1}));
  for (double v : m.data()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttention, MatchesLoopOracle) {
  Rng rng(5);
  const CbamSpec spec{16, 4, 7};
  ChannelAttention<double> cam(spec, rng);
  const auto f = randn<double>({2, 16, 4, 5}, rng);
  const auto m = cam.forward(f);
  const auto& w1 = cam.fc1().weight();
  const auto& b1 = cam.fc1().bias();
  const auto& w2 = cam.fc2().weight();
  const auto& b2 = cam.fc2().bias();
  const Index c = 16, hid = spec.hidden();
  for (Index n = 0; n < 2; ++n) {
    std::vector<double> avg(c, 0.0), mx(c, -1e300);
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 5; ++j) {
          avg[ch] += f.at(n, ch, i, j) / 20.0;
          mx[ch] = std::max(mx[ch], f.at(n, ch, i, j));
        }
    auto mlp = [&](const std::vector<double>& v, Index out) {
      double acc = b2[out];
      for (Index h = 0; h < hid; ++h) {
        double z = b1[h];
        for (Index ch = 0; ch < c; ++ch) z += w1[h * c + ch] * v[ch];
        acc += w2[out * hid + h] * std::max(z, 0.0);
      }
      return acc;
    };
    for (Index ch = 0; ch < c; ++ch) EXPECT_NEAR(m.at(n, ch, 0, 0), sig(mlp(avg, ch) + mlp(mx, ch)), 1e-12);
  }
}

TEST(SpatialAttention, ZeroConvGivesHalf) {
  Rng rng(6);
  SpatialAttention<double> sam({8, 16, 7}, rng);
  zero_where(sam, "");
  const auto m = sam.forward(randn<double>({1, 8, 9, 11}, rng));
  EXPECT_EQ(m.shape(), (Shape{1, 1, 9, 11}));
  for (double v : m.data()) EXPECT_EQ(v, 0.5);
}

TEST(SpatialAttention, MatchesLoopOracle) {
  Rng rng(7);
  SpatialAttention<double> sam({5, 16, 7}, rng);
  const auto f = randn<double>({2, 5, 6, 8}, rng);
  const auto m = sam.forward(f);
  const auto& w = sam.conv().weight();
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 6; ++y)
      for (Index x = 0; x < 8; ++x) {
        double acc = 0;
        for (Index ki = 0; ki < 7; ++ki)
          for (Index kj = 0; kj < 7; ++kj) {
            const Index iy = y - 3 + ki, ix = x - 3 + kj;
            if (iy < 0 || iy >= 6 || ix < 0 || ix >= 8) continue;
            double mean = 0, mx = -1e300;
            for (Index c = 0; c < 5; ++c) {
              mean += f.at(n, c, iy, ix) / 5.0;
              mx = std::max(mx, f.at(n, c, iy, ix));
            }
            acc += w.at(0, 0, ki, kj) * mean + w.at(0, 1, ki, kj) * mx;
          }
        EXPECT_NEAR(m.at(n, 0, y, x), sig(acc), 1e-12);
      }
}

TEST(Cbam, ZeroParametersQuarterTheInput) {
  Rng rng(8);
  Cbam<double> cbam({16, 16, 7}, rng);
  zero_where(cbam, "");
  const auto f = randn<double>({2, 16, 5, 5}, rng);
  const auto y = cbam.forward(f);
  for (Index i = 0; i < f.numel(); ++i) EXPECT_EQ(y[i], 0.25 * f[i]);
  for (const auto z = cbam.forward(Tensor<double>({1, 16, 3, 3})); double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Cbam, NeverAmplifies) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Cbam<double> cbam({8, 2, 7}, rng);
    const auto f = randn<double>({2, 8, 6, 6}, rng, 5.0);
    const auto y = cbam.forward(f);
    EXPECT_EQ(y.shape(), f.shape());
    for (Index i = 0; i < f.numel(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(f[i]));
  }
}

TEST(Cbam, RejectsWrongChannelCount) {
  Rng rng(9);
  Cbam<float> cbam({8, 2, 7}, rng);
  EXPECT_THROW(cbam.forward(Tensor<float>({1, 4, 3, 3})), ShapeError);
}

TEST(DeformConv, StartsAsHalfScaledConvolution) {
  Rng rng(10);
  DeformConv<double> dcn({3, 4, 3, 2, 1}, rng);
  const auto x = randn<double>({2, 3, 8, 8}, rng);
  const auto ref = conv2d(x, dcn.weight(), ConvSpec{3, 4, 3, 2, 1});
  const auto y = dcn.forward_pre_norm(x);
  for (Index i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], 0.5 * ref[i], 1e-12);
}

TEST(Sppf, ShapesAndConstantInput) {
  Rng rng(11);
  Sppf<double> sppf(8, 6, 4, rng);
  sppf.train(false);
  const auto x = Tensor<double>({2, 8, 7, 9}, 1.5);
  const auto p = sppf.pyramid(x);
  EXPECT_EQ(p.shape(), (Shape{2, 16, 7, 9}));
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 16; ++c)
      for (Index i = 0; i < 63; ++i) EXPECT_NEAR(p[(n * 16 + c) * 63 + i], p[(n * 16 + c % 4) * 63], 1e-12);
  EXPECT_EQ(sppf.forward(x).shape(), (Shape{2, 6, 7, 9}));
}

// Zeroing every convolution inside a residual bottleneck makes each conv
// output silu(bn(0)) = silu(0) = 0 with default affine parameters, so the
// block returns its input.
TEST(C2f, ZeroBottleneckIsIdentityOnTheBranch) {
  Rng rng(12);
  Bottleneck<double> b(4, 3, 3, true, ConvKind::standard, rng);
  zero_where(b, "conv.weight");
  const auto x = randn<double>({2, 4, 5, 5}, rng);
  EXPECT_LT(max_abs_diff(b.forward(x), x), 1e-15);

  C2f<double> c2f(6, 8, 1, true, rng);
  zero_where(c2f, "m0.");
  EXPECT_EQ(c2f.forward(randn<double>({1, 6, 5, 7}, rng)).shape(), (Shape{1, 8, 5, 7}));
}

TEST(C3Ghost, FewerParametersThanStandardC3) {
  for (auto [c1, c2] : {std::pair<Index, Index>{32, 32}, {64, 128}, {128, 64}, {256, 256}}) {
    Rng rng(13);
    C3<float> ghost(c1, c2, 1, false, ConvKind::ghost, rng), standard(c1, c2, 1, false, ConvKind::standard, rng);
    EXPECT_LT(ghost.parameter_count(), standard.parameter_count());
    EXPECT_EQ(ghost.forward(Tensor<float>({2, c1, 4, 4})).shape(), (Shape{2, c2, 4, 4}));
  }
}

TEST(Blocks, ShapeContractsOnRandomConfigurations) {
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const Index b = rng.randint(1, 3), c1 = rng.randint(2, 12), c2 = 2 * rng.randint(2, 8);
    const Index h = rng.randint(3, 9), w = rng.randint(3, 9), stride = rng.randint(1, 2);
    const auto x = randn<float>({b, c1, h, w}, rng);
    const Index ho = (h + 2 - 3) / stride + 1, wo = (w + 2 - 3) / stride + 1;
    std::vector<std::pair<std::string, std::unique_ptr<Unary<float>>>> blocks;
    blocks.emplace_back("cbs", std::make_unique<Cbs<float>>(c1, c2, 3, stride, rng));
    blocks.emplace_back("ghost", std::make_unique<GhostConv<float>>(GhostSpec{c1, c2, 2, 3, 3, stride}, rng));
    blocks.emplace_back("dcn", std::make_unique<DeformConv<float>>(DeformSpec{c1, c2, 3, stride, 1}, rng));
    for (auto& [name, m] : blocks) EXPECT_EQ(m->forward(x).shape(), (Shape{b, c2, ho, wo})) << name << " " << trial;
    std::vector<std::pair<std::string, std::unique_ptr<Unary<float>>>> same;
    same.emplace_back("c2f", std::make_unique<C2f<float>>(c1, c2, rng.randint(1, 2), rng.bernoulli(0.5), rng));
    same.emplace_back("c3ghost", std::make_unique<C3<float>>(c1, c2, 1, true, ConvKind::ghost, rng));
    same.emplace_back("sppf", std::make_unique<Sppf<float>>(c1, c2, std::max<Index>(1, c1 / 2), rng));
    for (auto& [name, m] : same) EXPECT_EQ(m->forward(x).shape(), (Shape{b, c2, h, w})) << name << " " << trial;
    Cbam<float> cbam({c1, 2, 7}, rng);
    EXPECT_EQ(cbam.forward(x).shape(), x.shape());
  }
}

}  // namespace
}  // namespace vdet
