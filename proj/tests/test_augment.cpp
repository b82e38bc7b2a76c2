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

#include <map>

#include "test_util.hpp"
#include "vdet/data/augment.hpp"

namespace vdet {
namespace {

using namespace vdet::data;

// Sample `k` holds non-overlapping rectangles painted with a value unique to
// each rectangle; the value is also stored as the class name so it survives
// every transform.
Sample coded_sample(int k, Rng& rng, Index size = 48) {
  Sample s{Image::zeros({3, size, size}), {}, "s" + std::to_string(k), {}};
  int placed = 0;
  for (int attempt = 0; attempt < 100 && placed < 4; ++attempt) {
    const Index w = rng.randint(3, size / 2), h = rng.randint(3, size / 2);
    const Index x = rng.randint(0, size - w), y = rng.randint(0, size - h);
    const Box b{double(x), double(y), double(x + w), double(y + h)};
    bool clear = true;
    for (const auto& a : s.annotations)
      clear = clear && (b.right <= a.bbox.left || a.bbox.right <= b.left || b.bottom <= a.bbox.top ||
                        a.bbox.bottom <= b.top);
    if (!clear) continue;
    const float code = static_cast<float>(k * 8 + placed + 1) / 64.0f;
    Annotation a;
    a.class_name = std::to_string(code);
    a.class_index = 0;
    a.bbox = b;
    for (Index c = 0; c < 3; ++c)
      for (Index yy = y; yy < y + h; ++yy)
        for (Index xx = x; xx < x + w; ++xx) s.image[(c * size + yy) * size + xx] = code;
    s.annotations.push_back(a);
    ++placed;
  }
  return s;
}

// Every retained box is exactly covered by its rectangle's pixels, and no
// pixel of that rectangle lies outside the box.
void expect_box_pixel_correspondence(const Sample& s) {
  const Index h = image_height(s.image), w = image_width(s.image);
  for (const auto& a : s.annotations) {
    const float code = std::stof(a.class_name);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const bool inside = x >= a.bbox.left && x + 1 <= a.bbox.right && y >= a.bbox.top && y + 1 <= a.bbox.bottom;
        const bool painted = std::abs(s.image[y * w + x] - code) < 1e-6f;
        ASSERT_EQ(inside, painted) << s.id << " box " << a.class_name << " at " << x << "," << y;
      }
  }
}

TEST(Flip, DoubleFlipIsIdentity) {
  Rng rng(1);
  const auto s = coded_sample(0, rng);
  const auto twice = hflip(hflip(s));
  EXPECT_TRUE(bitwise_equal(twice.image, s.image));
  ASSERT_EQ(twice.annotations.size(), s.annotations.size());
  for (std::size_t i = 0; i < s.annotations.size(); ++i) EXPECT_EQ(twice.annotations[i].bbox, s.annotations[i].bbox);
  const auto once = hflip(s);
  EXPECT_EQ(once.annotations[0].bbox.left, 48 - s.annotations[0].bbox.right);
  expect_box_pixel_correspondence(once);
}

TEST(Jitter, UnitGainZeroBiasIsIdentity) {
  Rng rng(2);
  const auto s = coded_sample(1, rng);
  EXPECT_TRUE(bitwise_equal(color_jitter(s, {1, 1, 1}, {0, 0, 0}).image, s.image));
  const auto j = color_jitter(s, {1.4, 0.6, 1.0}, {0.1, -0.1, 0.0});
  for (float v : j.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Mosaic, BoxesInsideCanvasAndKeepTwentyPercent) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<Sample, 4> src;
    std::map<std::string, double> original_area;
    for (int k = 0; k < 4; ++k) {
      src[static_cast<std::size_t>(k)] = coded_sample(k, rng);
      for (const auto& a : src[static_cast<std::size_t>(k)].annotations) original_area[a.class_name] = a.bbox.area();
    }
    const Index cx = rng.randint(14, 34), cy = rng.randint(14, 34);
    const auto m = mosaic({&src[0], &src[1], &src[2], &src[3]}, cx, cy, 0.2);
    for (const auto& a : m.annotations) {
      EXPECT_GE(a.bbox.left, 0);
      EXPECT_GE(a.bbox.top, 0);
      EXPECT_LE(a.bbox.right, 48);
      EXPECT_LE(a.bbox.bottom, 48);
      EXPECT_GE(a.bbox.area(), 0.2 * original_area.at(a.class_name) - 1e-9);
    }
    expect_box_pixel_correspondence(m);
  }
}

TEST(Augment, PreservesBoxPixelCorrespondence) {
  Rng rng(4);
  AugmentConfig cfg;
  cfg.jitter_p = 0;
  cfg.mosaic_p = 0.5;
  for (int trial = 0; trial < 100; ++trial) {
    std::array<Sample, 4> src;
    for (int k = 0; k < 4; ++k) src[static_cast<std::size_t>(k)] = coded_sample(k, rng);
    Rng aug = rng.split(static_cast<std::uint64_t>(trial));
    expect_box_pixel_correspondence(augment(src[0], {&src[1], &src[2], &src[3]}, cfg, aug));
  }
}

TEST(Augment, FallsBackWithoutPartners) {
  Rng rng(5);
  const auto s = coded_sample(0, rng);
  AugmentConfig cfg;
  cfg.mosaic_p = 1.0;
  cfg.flip_p = 0;
  cfg.jitter_p = 0;
  const auto out = augment(s, {}, cfg, rng);
  EXPECT_TRUE(bitwise_equal(out.image, s.image));
  EXPECT_EQ(out.annotations.size(), s.annotations.size());
}

}  // namespace
}  // namespace vdet
