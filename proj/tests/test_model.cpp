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
#include <set>

#include "test_util.hpp"
#include "vdet/model.hpp"

namespace vdet {
namespace {

using testing::randn;

ModelConfig variant(bool ghost, bool cbam, bool dcn, Index size = 640) {
  ModelConfig c;
  c.use_ghost = ghost;
  c.use_cbam = cbam;
  c.use_dcn = dcn;
  c.input_size = size;
  return c;
}

Index cbam_params(Index c) {
  const Index h = std::max<Index>(c / 16, 4);
  return (c * h + h) + (h * c + c) + 2 * 49;
}

// A deformable 3x3 head stem replaces a 3x3 CBS of the same width and adds
// the offset (2K) and modulation (K) branches with biases.
Index dcn_extra_params(Index c) { return 27 * (9 * c + 1); }

TEST(Model, BaselineSizeInNanoBand) {
  Model<float> m(variant(false, false, false), 0);
  EXPECT_GE(m.parameter_count(), 2'800'000);
  EXPECT_LE(m.parameter_count(), 4'200'000);
}

TEST(Model, FullConfigIsSmallerThanBaseline) {
  EXPECT_LT(Model<float>(variant(true, true, true), 0).parameter_count(),
            Model<float>(variant(false, false, false), 0).parameter_count());
}

TEST(Model, ParameterNamesAreUnique) {
  Model<float> m(variant(true, true, true), 0);
  std::set<std::string> names;
  for (const auto& [name, t] : m.state()) EXPECT_TRUE(names.insert(name).second) << name;
}

TEST(Model, SameSeedBuildsAreBitwiseIdentical) {
  Model<float> a(variant(true, true, true), 42), b(variant(true, true, true), 42), c(variant(true, true, true), 43);
  const auto sa = a.state(), sb = b.state(), sc = c.state();
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].first, sb[i].first);
    EXPECT_TRUE(bitwise_equal(sa[i].second, sb[i].second)) << sa[i].first;
    any_diff = any_diff || !bitwise_equal(sa[i].second, sc[i].second);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, GridsFollowStrides) {
  for (Index size : {640, 320}) {
    Model<float> m(variant(false, false, false, size), 0);
    m.train(false);
    const auto out = m.forward(Tensor<float>({1, 3, size, size}));
    ASSERT_EQ(out.size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) {
      const Index g = size / m.config().strides[s];
      EXPECT_EQ(out[s].shape(), (Shape{1, 1, g, g, 9})) << size;
    }
  }
}

TEST(Model, AnchorsShapeThePredictionTensor) {
  ModelConfig c = variant(false, false, false, 64);
  c.anchors = 3;
  Model<float> m(c, 0);
  m.train(false);
  EXPECT_EQ(m.forward(Tensor<float>({2, 3, 64, 64}))[0].shape(), (Shape{2, 3, 8, 8, 9}));
}

TEST(Model, RejectsBadInputs) {
  Model<float> m(variant(false, false, false, 64), 0);
  EXPECT_THROW(m.forward(Tensor<float>({1, 4, 64, 64})), ShapeError);
  EXPECT_THROW(m.forward(Tensor<float>({1, 3, 48, 64})), ShapeError);
  ModelConfig bad;
  bad.input_size = 100;
  EXPECT_THROW(Model<float>(bad, 0), BuildError);
  bad = ModelConfig{};
  bad.class_names.clear();
  EXPECT_THROW(Model<float>(bad, 0), BuildError);
}

TEST(Model, InferenceIsDeterministic) {
  Model<float> m(variant(true, true, true, 64), 3);
  m.train(false);
  Rng rng(1);
  const auto x = randn<float>({2, 3, 64, 64}, rng);
  const auto a = m.forward(x), b = m.forward(x);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_TRUE(bitwise_equal(a[s], b[s]));
}

TEST(Model, AllAblationVariantsBuildAndRun) {
  const auto variants = ablation_variants(variant(false, false, false, 64));
  ASSERT_EQ(variants.size(), 8u);
  std::set<std::string> names;
  Rng rng(2);
  const auto x = randn<float>({2, 3, 64, 64}, rng);
  for (const auto& v : variants) {
    names.insert(v.variant_name());
    Model<float> m(v, 0);
    const auto out = m.forward(x);
    ASSERT_EQ(out.size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) {
      const Index g = 64 / v.strides[s];
      EXPECT_EQ(out[s].shape(), (Shape{2, 1, g, g, 9}));
      for (float f : out[s].data()) ASSERT_TRUE(std::isfinite(f));
    }
  }
  EXPECT_EQ(names.size(), 8u);
}

TEST(Model, AblationSizeDeltasMatchClosedForm) {
  const std::array<Index, 4> neck_out{128, 64, 128, 256};
  const std::array<Index, 3> head{64, 128, 256};
  Index cbam_total = 0, dcn_total = 0;
  for (Index c : neck_out) cbam_total += cbam_params(c);
  for (Index c : head) dcn_total += dcn_extra_params(c);
  for (bool ghost : {false, true}) {
    for (bool cbam : {false, true})
      for (bool dcn : {false, true}) {
        const Index base = Model<float>(variant(ghost, false, false), 0).parameter_count();
        const Index with = Model<float>(variant(ghost, cbam, dcn), 0).parameter_count();
        EXPECT_EQ(with - base, (cbam ? cbam_total : 0) + (dcn ? dcn_total : 0));
        EXPECT_LE(Model<float>(variant(true, cbam, dcn), 0).parameter_count(),
                  Model<float>(variant(false, cbam, dcn), 0).parameter_count());
      }
  }
}

RawPrediction<double> constant_raw(Index size, double txy, double twh, double obj, double cls) {
  RawPrediction<double> raw;
  for (Index stride : {8, 16, 32}) {
    const Index g = size / stride;
    Tensor<double> t({1, 1, g, g, 6});
    for (Index k = 0; k < g * g; ++k) {
      double* v = t.ptr() + k * 6;
      v[0] = v[1] = txy;
      v[2] = v[3] = twh;
      v[4] = obj;
      v[5] = cls;
    }
    raw.push_back(t);
  }
  return raw;
}

TEST(Decode, ZeroLogitsGiveCellCentresAndStrideSizes) {
  const auto dets = decode_predictions(constant_raw(64, 0.0, 0.0, 10.0, 10.0), 0.5, {8, 16, 32}, 64, 64);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].size(), 64u + 16u + 4u);
  const auto& first = dets[0].front();
  EXPECT_DOUBLE_EQ(first.box.center_x(), 4.0);
  EXPECT_DOUBLE_EQ(first.box.center_y(), 4.0);
  EXPECT_DOUBLE_EQ(first.box.width(), 8.0);
  const auto& last = dets[0].back();
  EXPECT_DOUBLE_EQ(last.box.center_x(), 48.0);
  EXPECT_DOUBLE_EQ(last.box.width(), 32.0);
}

TEST(Decode, ThresholdOfOneIsEmpty) {
  const auto dets = decode_predictions(constant_raw(64, 0.0, 0.0, 50.0, 50.0), 1.0, {8, 16, 32}, 64, 64);
  EXPECT_TRUE(dets[0].empty());
  EXPECT_THROW(decode_predictions(constant_raw(64, 0, 0, 0, 0), 1.5, {8, 16, 32}, 64, 64), ParameterError);
}

TEST(Decode, BoxesStayInsideTheImage) {
  Model<float> m(variant(true, true, true, 64), 5);
  m.train(false);
  Rng rng(4);
  const auto raw = m.forward(randn<float>({2, 3, 64, 64}, rng, 3.0));
  RawPrediction<float> wild;
  for (const auto& t : raw) {
    auto c = t.clone();
    for (auto& v : c.data()) v = static_cast<float>(rng.normal() * 6.0);
    wild.push_back(c);
  }
  for (const auto* r : std::array<const std::vector<Tensor<float>>*, 2>{&raw, &wild})
    for (const auto& img : decode_predictions(*r, 0.0, {8, 16, 32}, 64, 64))
      for (const auto& d : img) {
        EXPECT_GE(d.box.left, 0);
        EXPECT_GE(d.box.top, 0);
        EXPECT_LE(d.box.right, 64);
        EXPECT_LE(d.box.bottom, 64);
        EXPECT_GE(d.confidence, 0);
        EXPECT_LE(d.confidence, 1);
      }
}

}  // namespace
}  // namespace vdet
