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
#include <sstream>

#include "test_util.hpp"
#include "vdet/grad_check.hpp"
#include "vdet/train/trainer.hpp"

namespace vdet {
namespace {

using namespace vdet::train;

const std::vector<std::string> kClasses{"Car", "Van", "Truck", "Tram"};
const std::array<Index, 3> kStrides{8, 16, 32};
const std::array<std::array<Index, 2>, 3> kGrids640{{{80, 80}, {40, 40}, {20, 20}}};

ModelConfig small_model(bool full = true) {
  ModelConfig c;
  c.use_ghost = c.use_cbam = c.use_dcn = full;
  c.input_size = 64;
  return c;
}

TEST(Targets, CentreCellAndScaleBands) {
  const auto tm = assign_targets({{{1, Box{84, 84, 116, 116}, false}, {2, Box{300, 300, 500, 500}, false}}}, kGrids640,
                                 kStrides);
  EXPECT_EQ(tm.assigned, 2);
  EXPECT_EQ(tm.collisions, 0);
  const auto& s0 = tm.scales[0];
  EXPECT_TRUE(s0.positive[s0.slot(0, 0, 12, 12)]);
  EXPECT_EQ(s0.cls[s0.slot(0, 0, 12, 12)], 1);
  const auto& s2 = tm.scales[2];
  EXPECT_TRUE(s2.positive[s2.slot(0, 0, 12, 12)]);
  EXPECT_EQ(scale_for(Box{0, 0, 63, 63}), 0u);
  EXPECT_EQ(scale_for(Box{0, 0, 64, 64}), 1u);
  EXPECT_EQ(scale_for(Box{0, 0, 159, 159}), 1u);
  EXPECT_EQ(scale_for(Box{0, 0, 200, 200}), 2u);
}

TEST(Targets, CollisionKeepsLargerBox) {
  const Box small{90, 90, 110, 110}, large{84, 84, 116, 116};
  auto tm = assign_targets({{{0, small, false}, {3, large, false}}}, kGrids640, kStrides);
  EXPECT_EQ(tm.assigned, 1);
  EXPECT_EQ(tm.collisions, 1);
  EXPECT_EQ(tm.scales[0].cls[tm.scales[0].slot(0, 0, 12, 12)], 3);
  tm = assign_targets({{{0, small, false}, {0, small, false}}}, kGrids640, kStrides);
  EXPECT_EQ(tm.collisions, 1);
  tm = assign_targets({{{0, small, false}, {0, small, false}}}, kGrids640, kStrides, 3);
  EXPECT_EQ(tm.collisions, 0);
  EXPECT_EQ(tm.positives(), 2);
}

TEST(Targets, IgnoredAndUnknownBoxesAreNotTargets) {
  const auto tm = assign_targets({{{0, Box{0, 0, 20, 20}, true}, {-1, Box{40, 40, 60, 60}, false}}}, kGrids640, kStrides);
  EXPECT_EQ(tm.positives(), 0);
}

std::vector<Tensor<double>> zero_raw(Index batch, Index size, Index classes) {
  std::vector<Tensor<double>> raw;
  for (Index s : kStrides) raw.push_back(Tensor<double>({batch, 1, size / s, size / s, 5 + classes}));
  return raw;
}

std::array<std::array<Index, 2>, 3> grids(Index size) {
  return {{{size / 8, size / 8}, {size / 16, size / 16}, {size / 32, size / 32}}};
}

TEST(Loss, ZeroLogitsWithoutPositives) {
  const auto raw = zero_raw(2, 64, 4);
  const auto tm = assign_targets({{}, {}}, grids(64), kStrides);
  const auto l = detection_loss(raw, tm);
  EXPECT_NEAR(l.obj, std::log(2.0), 1e-12);
  EXPECT_EQ(l.cls, 0.0);
  EXPECT_EQ(l.box, 0.0);
  EXPECT_NEAR(l.total.item(), std::log(2.0), 1e-12);
}

// The class term sums the per-class BCE of each positive and averages over
// positives: C ln 2 at zero logits, whatever the number of positives.
TEST(Loss, ClassTermSumsOverClasses) {
  const auto raw = zero_raw(1, 64, 4);
  const auto tm = assign_targets({{{1, Box{10, 12, 30, 40}, false}, {3, Box{36, 30, 60, 58}, false}}}, grids(64),
                                 kStrides);
  ASSERT_EQ(tm.positives(), 2);
  EXPECT_NEAR(detection_loss(raw, tm).cls, 4 * std::log(2.0), 1e-12);
}

// Positives at cell centres with stride-sized boxes decode exactly at
// txy = twh = 0; every other logit is saturated toward its target.
TEST(Loss, SaturatedExactPredictionsNearZero) {
  auto raw = zero_raw(1, 64, 4);
  const Box target{24, 32, 32, 40};  // centre (28, 36): middle of cell (4, 3), 8x8
  const auto tm = assign_targets({{{2, target, false}}}, grids(64), kStrides);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& st = tm.scales[s];
    for (std::size_t k = 0; k < st.cells(); ++k) {
      double* v = raw[s].ptr() + static_cast<Index>(k) * 9;
      v[4] = st.positive[k] ? 12 : -12;
      for (Index c = 0; c < 4; ++c) v[5 + c] = st.cls[k] == c ? 12 : -12;
    }
  }
  ASSERT_EQ(tm.positives(), 1);
  const auto l = detection_loss(raw, tm);
  EXPECT_NEAR(l.box, 0.0, 1e-12);
  EXPECT_LT(l.total.item(), 1e-3);
  EXPECT_GE(l.total.item(), 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  std::vector<Tensor<double>> raw;
  for (Index s : kStrides) raw.push_back(testing::randn<double>({2, 1, 64 / s, 64 / s, 9}, rng));
  const auto tm = assign_targets({{{1, Box{10, 12, 30, 40}, false}, {3, Box{36, 30, 60, 58}, false}},
                                  {{0, Box{5, 5, 25, 22}, false}}},
                                 grids(64), kStrides);
  const auto r = grad_check([&] { return detection_loss(raw, tm).total; }, raw, {1e-6, 40, 2});
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GE(r.probes, 120u);
}

TEST(Loss, RejectsMisalignedTargets) {
  const auto tm = assign_targets({{}}, grids(64), kStrides);
  EXPECT_THROW(detection_loss(zero_raw(2, 64, 4), tm), ShapeError);
}

TEST(Adam, Examples) {
  Tensor<double> p({1}, 1.0);
  std::vector<nn::NamedTensor<double>> params{{"p", p}};
  AdamState<double> st;
  p.grad()[0] = 1.0;
  adam_step(params, st, 0.1);
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_EQ(st.step, 1);

  Tensor<double> q({3}, 2.0);
  std::vector<nn::NamedTensor<double>> qp{{"q", q}};
  AdamState<double> qs;
  q.grad();
  adam_step(qp, qs, 0.1);
  for (double v : q.data()) EXPECT_EQ(v, 2.0);

  q.grad()[1] = 5.0;
  adam_step(qp, qs, 0.0);
  for (double v : q.data()) EXPECT_EQ(v, 2.0);

  AdamState<double> wrong;
  wrong.m.resize(5);
  wrong.v.resize(5);
  EXPECT_THROW(adam_step(qp, wrong, 0.1), ShapeError);
}

TEST(Cosine, EndpointsAndMidpoint) {
  EXPECT_NEAR(cosine_lr(0, 150, 0.001, 1e-5), 0.001, 1e-12);
  EXPECT_NEAR(cosine_lr(150, 150, 0.001, 1e-5), 1e-5, 1e-12);
  EXPECT_NEAR(cosine_lr(75, 150, 0.001, 1e-5), (0.001 + 1e-5) / 2, 1e-12);
  for (int e = 1; e <= 150; ++e) EXPECT_LT(cosine_lr(e, 150, 0.001, 1e-5), cosine_lr(e - 1, 150, 0.001, 1e-5));
}

TEST(EarlyStop, Examples) {
  std::vector<double> rising;
  for (int i = 0; i < 20; ++i) rising.push_back(0.01 * i);
  EXPECT_FALSE(early_stop_check(rising, 10));
  EXPECT_TRUE(early_stop_check(std::vector<double>(11, 0.5), 10));
  EXPECT_FALSE(early_stop_check(std::vector<double>(10, 0.5), 10));
  std::vector<double> reset(10, 0.5);
  reset.push_back(0.6);
  EXPECT_FALSE(early_stop_check(reset, 10));
  std::vector<double> tiny(11, 0.5);
  tiny.back() += 1e-7;
  EXPECT_TRUE(early_stop_check(tiny, 10));
}

TEST(Train, SingleImageOverfit) {
  const auto ds = data::synth_dataset(1, kClasses, 11);
  Model<float> m(small_model(), 1);
  m.train(true);
  const auto params = m.parameters();
  for (auto [name, p] : params) p.requires_grad_(true);
  TrainConfig cfg;
  AdamState<float> adam;
  const std::vector<const data::Sample*> batch{&ds.samples[0]};
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    const auto r = train_step(m, batch, adam, cfg.lr0, cfg, params);
    ASSERT_TRUE(std::isfinite(r.total));
    if (step == 0) first = r.total;
    last = r.total;
  }
  EXPECT_LT(last, 0.1 * first) << "initial " << first << ", final " << last;
}

TrainConfig tiny_config(std::int64_t epochs) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = epochs;
  cfg.patience = std::min<std::int64_t>(10, epochs);
  return cfg;
}

std::string history_text(const History& h) {
  std::ostringstream os;
  for (const auto& e : h.epochs) os << e.epoch << ' ' << e.loss << ' ' << e.precision << ' ' << e.recall << ' ' << e.map50 << '\n';
  char buf[64];
  std::string out = os.str();
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%a %a|", e.loss, e.map50);
    out += buf;
  }
  return out;
}

TEST(Train, IdenticalSeedsGiveIdenticalHistoryAndWeights) {
  const auto all = data::synth_dataset(24, kClasses, 5);
  const auto [tr, val] = data::split_tail(all, 8);
  auto run = [&](std::uint64_t seed) {
    auto m = std::make_unique<Model<float>>(small_model(), 3);
    const auto h = train::train(*m, tr, val, tiny_config(2), seed);
    return std::make_pair(std::move(m), h);
  };
  auto [ma, ha] = run(9);
  auto [mb, hb] = run(9);
  EXPECT_EQ(history_text(ha), history_text(hb));
  const auto sa = ma->state();
  const auto sb = mb->state();
  for (std::size_t i = 0; i < sa.size(); ++i) ASSERT_TRUE(bitwise_equal(sa[i].second, sb[i].second)) << sa[i].first;
  auto [mc, hc] = run(10);
  EXPECT_NE(history_text(ha), history_text(hc));
}

TEST(Train, FrozenRunStopsAtPatience) {
  const auto all = data::synth_dataset(16, kClasses, 6);
  const auto [tr, val] = data::split_tail(all, 4);
  Model<float> m(small_model(false), 2);
  const auto before = m.state();
  std::vector<std::vector<float>> copy;
  for (const auto& [n, t] : before) copy.emplace_back(t.data().begin(), t.data().end());
  TrainConfig cfg = tiny_config(30);
  cfg.lr0 = 0;
  cfg.bn_momentum = 0;
  const auto h = train::train(m, tr, val, cfg, 1);
  EXPECT_TRUE(h.stopped_early);
  EXPECT_EQ(h.epochs.size(), 11u);
  for (const auto& e : h.epochs) EXPECT_EQ(e.map50, h.epochs[0].map50);
  const auto after = m.state();
  for (std::size_t i = 0; i < after.size(); ++i)
    EXPECT_TRUE(std::equal(copy[i].begin(), copy[i].end(), after[i].second.data().begin())) << after[i].first;
}

TEST(Train, NonFiniteLossAbortsNamingTheBatch) {
  auto all = data::synth_dataset(12, kClasses, 7);
  all.samples[3].image[100] = std::numeric_limits<float>::quiet_NaN();
  const auto [tr, val] = data::split_tail(all, 4);
  Model<float> m(small_model(false), 2);
  TrainConfig cfg = tiny_config(1);
  cfg.augment_enabled = false;
  try {
    train::train(m, tr, val, cfg, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at epoch 0, batch"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsBadConfigs) {
  const auto all = data::synth_dataset(8, kClasses, 7);
  const auto [tr, val] = data::split_tail(all, 2);
  Model<float> m(small_model(false), 2);
  TrainConfig cfg = tiny_config(3);
  cfg.patience = 5;
  EXPECT_THROW(train::train(m, tr, val, cfg, 1), ParameterError);
  cfg = tiny_config(3);
  cfg.lr0 = -1;
  EXPECT_THROW(train::train(m, tr, val, cfg, 1), ParameterError);
  EXPECT_THROW(train::train(m, data::Dataset{kClasses, {}}, val, tiny_config(3), 1), ParameterError);
}

// The synthetic task's mean epoch loss falls over the first five epochs.
TEST(Train, FirstFiveEpochsDecrease) {
  const auto all = data::synth_dataset(160, kClasses, 21);
  const auto [tr, val] = data::split_tail(all, 32);
  Model<float> m(small_model(), 7);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 5;
  cfg.patience = 5;
  cfg.augment.mosaic_p = 0;
  const auto h = train::train(m, tr, val, cfg, 7);
  ASSERT_EQ(h.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(h.epochs[e].loss, h.epochs[e - 1].loss) << "epoch " << e;
}

TEST(History, WritesTabSeparatedRows) {
  History h;
  h.epochs.push_back({0, 1.5, 0.25, 0.5, 0.75, 2.0});
  std::ostringstream os;
  write_history(os, h);
  EXPECT_EQ(os.str(), "epoch\tloss\tprecision\trecall\tmap50\tseconds\n0\t1.5\t0.25\t0.5\t0.75\t2.000\n");
}

}  // namespace
}  // namespace vdet
