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

#include <fstream>

#include "test_util.hpp"
#include "vdet/checkpoint.hpp"

namespace vdet {
namespace {

using testing::scratch_dir;
using testing::slurp;

ModelConfig small_config() {
  ModelConfig c;
  c.use_ghost = c.use_cbam = c.use_dcn = true;
  c.input_size = 64;
  c.class_names = {"a", "b", "c"};
  return c;
}

// A model whose batch-norm statistics have moved away from their defaults.
std::unique_ptr<Model<float>> trained_looking_model() {
  auto m = build_model<float>(small_config(), 9);
  Rng rng(1);
  m->forward(testing::randn<float>({2, 3, 64, 64}, rng));
  m->train(false);
  return m;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_resave");
  auto m = trained_looking_model();
  save_checkpoint(*m, (dir / "a.ckpt").string());
  auto loaded = load_checkpoint<float>((dir / "a.ckpt").string());
  save_checkpoint(*loaded, (dir / "b.ckpt").string());
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(slurp(dir / "a.ckpt").substr(0, 4), "VDET");
}

TEST(Checkpoint, RestoresStateConfigAndForwardBitwise) {
  const auto dir = scratch_dir("ckpt_forward");
  auto m = trained_looking_model();
  save_checkpoint(*m, (dir / "m.ckpt").string());
  auto loaded = load_checkpoint<float>((dir / "m.ckpt").string());
  const auto& c = loaded->config();
  EXPECT_EQ(c.class_names, small_config().class_names);
  EXPECT_TRUE(c.use_ghost && c.use_cbam && c.use_dcn);
  EXPECT_EQ(c.input_size, 64);
  const auto a = m->state(), b = loaded->state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i].second, b[i].second)) << a[i].first;

  loaded->train(false);
  Rng rng(3);
  const auto x = testing::randn<float>({1, 3, 64, 64}, rng);
  const auto ya = m->forward(x), yb = loaded->forward(x);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_TRUE(bitwise_equal(ya[s], yb[s]));
}

TEST(Checkpoint, DoublePrecisionPayloadLoadsIntoFloat) {
  const auto dir = scratch_dir("ckpt_f64");
  auto m = build_model<double>(small_config(), 4);
  save_checkpoint(*m, (dir / "d.ckpt").string());
  auto f = load_checkpoint<float>((dir / "d.ckpt").string());
  const auto a = m->state();
  const auto b = f->state();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Index k = 0; k < a[i].second.numel(); ++k) ASSERT_EQ(static_cast<float>(a[i].second[k]), b[i].second[k]);
}

TEST(Checkpoint, BadHeaderIsAFormatError) {
  const auto dir = scratch_dir("ckpt_header");
  auto m = trained_looking_model();
  save_checkpoint(*m, (dir / "m.ckpt").string());
  const std::string good = slurp(dir / "m.ckpt");

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(dir / "magic.ckpt", bad_magic);
  EXPECT_THROW(load_checkpoint<float>((dir / "magic.ckpt").string()), FormatError);

  std::string bad_version = good;
  bad_version[4] = 7;
  write_bytes(dir / "version.ckpt", bad_version);
  EXPECT_THROW(load_checkpoint<float>((dir / "version.ckpt").string()), FormatError);

  std::string renamed = good;
  const auto pos = renamed.find("config.use_dcn");
  renamed.replace(pos, 14, "config.use_xyz");
  write_bytes(dir / "key.ckpt", renamed);
  EXPECT_THROW(load_checkpoint<float>((dir / "key.ckpt").string()), FormatError);
}

TEST(Checkpoint, TruncationAndCorruptionAreIntegrityErrors) {
  const auto dir = scratch_dir("ckpt_truncated");
  auto m = trained_looking_model();
  save_checkpoint(*m, (dir / "m.ckpt").string());
  const std::string good = slurp(dir / "m.ckpt");

  for (std::size_t keep : {std::size_t{8}, std::size_t{200}, good.size() / 2, good.size() - 1}) {
    write_bytes(dir / "cut.ckpt", good.substr(0, keep));
    EXPECT_THROW(load_checkpoint<float>((dir / "cut.ckpt").string()), IntegrityError) << keep;
  }
  std::string flipped = good;
  flipped[good.size() - 10] ^= 0x40;
  write_bytes(dir / "flip.ckpt", flipped);
  EXPECT_THROW(load_checkpoint<float>((dir / "flip.ckpt").string()), IntegrityError);
}

TEST(Checkpoint, MissingFileIsAnError) {
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/dir/x.ckpt"), Error);
}

}  // namespace
}  // namespace vdet
