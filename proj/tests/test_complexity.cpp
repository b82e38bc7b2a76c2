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

#include <sstream>

#include "test_util.hpp"
#include "vdet/eval/complexity.hpp"

namespace vdet {
namespace {

using namespace vdet::eval;

TEST(Complexity, SingleConvClosedForm) {
  Rng rng(1);
  nn::Conv2d<float> conv(ConvSpec{3, 16, 3, 2, 1, 1, false}, rng);
  const auto c = conv.cost({3, 640, 640});
  EXPECT_EQ(c.params, 432);
  EXPECT_EQ(c.macs, 432u * 320u * 320u);
  EXPECT_EQ(c.out, (nn::FeatureShape{16, 320, 320}));
  nn::Conv2d<float> biased(ConvSpec{3, 16, 3, 2, 1, 1, true}, rng);
  EXPECT_EQ(biased.cost({3, 640, 640}).params, 448);
  EXPECT_EQ(biased.cost({3, 640, 640}).macs, 432u * 320u * 320u);

  const auto before = mac_counter();
  conv.forward(Tensor<float>({1, 3, 640, 640}));
  EXPECT_EQ(mac_counter() - before, 432u * 320u * 320u);
}

TEST(Complexity, GhostBlockRatio) {
  Rng rng(1);
  nn::GhostConv<float> ghost({64, 64, 2, 1, 3, 1}, rng);
  nn::Cbs<float> standard(64, 64, 1, 1, rng);
  const double ratio = double(ghost.cost({64, 8, 8}).params - 128) / double(standard.cost({64, 8, 8}).params - 128);
  EXPECT_NEAR(ratio, 0.57, 0.005);
}

class VariantComplexity : public ::testing::TestWithParam<int> {};

TEST_P(VariantComplexity, RegistryAndKernelsAgreeWithClosedForms) {
  ModelConfig base;
  base.input_size = 128;
  const auto cfg = ablation_variants(base)[static_cast<std::size_t>(GetParam())];
  Model<float> m(cfg, 0);
  const auto rep = count_params_flops(m, 128);
  std::int64_t layer_params = 0, layer_macs = 0;
  for (const auto& l : rep.layers) {
    EXPECT_EQ(l.params, l.closed_params) << cfg.variant_name() << " " << l.name;
    layer_params += l.params;
    layer_macs += l.macs;
  }
  EXPECT_EQ(layer_params, rep.params);
  EXPECT_EQ(layer_macs, rep.macs);
  EXPECT_EQ(rep.params, m.parameter_count());
  EXPECT_EQ(static_cast<std::int64_t>(measured_macs(m, 128)), rep.macs) << cfg.variant_name();
  EXPECT_EQ(rep.flops(), 2.0 * static_cast<double>(rep.macs));
  EXPECT_EQ(rep.memory_bytes(), 4 * rep.params);
  // Convolution costs scale with the plane area; the CBAM MLP runs on pooled
  // vectors and does not.
  const auto macs256 = count_params_flops(m, 256).macs;
  if (cfg.use_cbam)
    EXPECT_LT(macs256, 4 * rep.macs);
  else
    EXPECT_EQ(macs256, 4 * rep.macs);
}

INSTANTIATE_TEST_SUITE_P(Ablation, VariantComplexity, ::testing::Range(0, 8));

TEST(Complexity, FullConfigReducesAllThreeAt640) {
  ModelConfig base;
  ModelConfig full = base;
  full.use_ghost = full.use_cbam = full.use_dcn = true;
  Model<float> b(base, 0), f(full, 0);
  const auto rb = count_params_flops(b), rf = count_params_flops(f);
  EXPECT_LT(rf.params, rb.params);
  EXPECT_LT(rf.flops(), rb.flops());
  EXPECT_LT(rf.memory_bytes(), rb.memory_bytes());
  const double reduction = -relative_change(double(rb.params), double(rf.params));
  EXPECT_GE(reduction, 0.04);
  EXPECT_LE(reduction, 0.12);
  EXPECT_EQ(static_cast<std::int64_t>(measured_macs(f, 640)), rf.macs);

  std::ostringstream os;
  write_complexity_comparison(os, rb, rf);
  EXPECT_NE(os.str().find("params(M)"), std::string::npos);
  EXPECT_NE(os.str().find("FLOPs = 2 x MACs"), std::string::npos);
}

}  // namespace
}  // namespace vdet
