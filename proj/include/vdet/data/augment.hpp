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
#include <array>
#include <cmath>
#include <vector>

#include "vdet/data/dataset.hpp"
#include "vdet/rng.hpp"

namespace vdet::data {

struct AugmentConfig {
  double flip_p = 0.5;
  double jitter_p = 1.0;
  double gain_lo = 0.6, gain_hi = 1.4;
  double bias = 0.1;
  double mosaic_p = 0.5;
  double mosaic_center_lo = 0.3, mosaic_center_hi = 0.7;
  double mosaic_min_area = 0.2;
};

// Horizontal mirror: left' = W - right, right' = W - left.
inline Sample hflip(const Sample& s) {
  Sample out{s.image.clone(), s.annotations, s.id, s.letterbox};
  const Index c3 = s.image.dim(0), h = image_height(s.image), w = image_width(s.image);
  for (Index c = 0; c < c3; ++c)
    for (Index y = 0; y < h; ++y) {
      float* row = out.image.ptr() + (c * h + y) * w;
      std::reverse(row, row + w);
    }
  for (auto& a : out.annotations) {
    const double l = a.bbox.left;
    a.bbox.left = static_cast<double>(w) - a.bbox.right;
    a.bbox.right = static_cast<double>(w) - l;
    a.source_fields.clear();
  }
  return out;
}

// Per-channel x * gain + bias, clamped to [0, 1].
inline Sample color_jitter(const Sample& s, const std::array<double, 3>& gain, const std::array<double, 3>& bias) {
  Sample out{s.image.clone(), s.annotations, s.id, s.letterbox};
  const Index plane = image_height(s.image) * image_width(s.image);
  for (Index c = 0; c < 3; ++c) {
    if (gain[c] == 1.0 && bias[c] == 0.0) continue;
    float* p = out.image.ptr() + c * plane;
    for (Index i = 0; i < plane; ++i)
      p[i] = std::clamp(static_cast<float>(p[i] * gain[c] + bias[c]), 0.0f, 1.0f);
  }
  return out;
}

// Stitches four samples around (cx, cy) on a canvas the size of the first.
// Quadrants take the adjoining corner of each source (bottom-right of the
// first into the top-left, and so on), so no pixel is rescaled. Boxes are
// shifted, clipped to their quadrant, and dropped when less than
// `min_area` of their original area survives.
inline Sample mosaic(const std::array<const Sample*, 4>& src, Index cx, Index cy, double min_area = 0.2) {
  const Index h = image_height(src[0]->image), w = image_width(src[0]->image);
  Sample out{Image::zeros({3, h, w}), {}, src[0]->id + "+mosaic", {}};
  const std::array<std::array<Index, 4>, 4> regions = {{{0, 0, cx, cy}, {cx, 0, w, cy}, {0, cy, cx, h}, {cx, cy, w, h}}};
  for (std::size_t q = 0; q < 4; ++q) {
    const Sample& s = *src[q];
    const Index sh = image_height(s.image), sw = image_width(s.image);
    const auto [x0, y0, x1, y1] = regions[q];
    // Source-to-canvas shift for this quadrant.
    const Index dx = (q == 0 || q == 2) ? cx - sw : cx;
    const Index dy = (q == 0 || q == 1) ? cy - sh : cy;
    for (Index c = 0; c < 3; ++c)
      for (Index y = y0; y < y1; ++y) {
        const Index syy = y - dy;
        if (syy < 0 || syy >= sh) continue;
        for (Index x = x0; x < x1; ++x) {
          const Index sxx = x - dx;
          if (sxx < 0 || sxx >= sw) continue;
          out.image[(c * h + y) * w + x] = s.image[(c * sh + syy) * sw + sxx];
        }
      }
    for (const auto& a : s.annotations) {
      const Box moved{a.bbox.left + dx, a.bbox.top + dy, a.bbox.right + dx, a.bbox.bottom + dy};
      const Box clipped{std::max(moved.left, static_cast<double>(x0)), std::max(moved.top, static_cast<double>(y0)),
                        std::min(moved.right, static_cast<double>(x1)),
                        std::min(moved.bottom, static_cast<double>(y1))};
      if (!clipped.valid() || clipped.area() < min_area * a.bbox.area()) continue;
      Annotation b = a;
      b.bbox = clipped;
      b.source_fields.clear();
      out.annotations.push_back(std::move(b));
    }
  }
  return out;
}

// Mosaic (needs three partners), then flip, then colour jitter. `partners`
// may hold fewer than three samples, in which case mosaic is skipped.
inline Sample augment(const Sample& s, const std::vector<const Sample*>& partners, const AugmentConfig& cfg,
                      Rng& rng) {
  Sample out{s.image, s.annotations, s.id, s.letterbox};
  const bool do_mosaic = rng.bernoulli(cfg.mosaic_p);
  if (do_mosaic && partners.size() >= 3) {
    const Index h = image_height(s.image), w = image_width(s.image);
    const Index cx = std::lround(rng.uniform(cfg.mosaic_center_lo, cfg.mosaic_center_hi) * static_cast<double>(w));
    const Index cy = std::lround(rng.uniform(cfg.mosaic_center_lo, cfg.mosaic_center_hi) * static_cast<double>(h));
    out = mosaic({&s, partners[0], partners[1], partners[2]}, cx, cy, cfg.mosaic_min_area);
  }
  if (rng.bernoulli(cfg.flip_p)) out = hflip(out);
  if (rng.bernoulli(cfg.jitter_p)) {
    std::array<double, 3> gain{}, bias{};
    for (int c = 0; c < 3; ++c) {
      gain[c] = rng.uniform(cfg.gain_lo, cfg.gain_hi);
      bias[c] = rng.uniform(-cfg.bias, cfg.bias);
    }
    out = color_jitter(out, gain, bias);
  }
  return out;
}

}  // namespace vdet::data
