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
#include <numeric>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/tensor.hpp"

namespace vdet::train {

// Dense per-scale targets aligned with the [B, A, H, W, 5 + C] layout.
struct ScaleTargets {
  Index batch = 0, anchors = 1, h = 0, w = 0, stride = 8;
  std::vector<std::uint8_t> positive;  // B*A*H*W
  std::vector<Box> box;                // target box per slot
  std::vector<std::int64_t> cls;       // class per slot, -1 when empty

  std::size_t slot(Index n, Index a, Index i, Index j) const {
    return static_cast<std::size_t>(((n * anchors + a) * h + i) * w + j);
  }
  std::size_t cells() const { return positive.size(); }
};

struct TargetMap {
  std::vector<ScaleTargets> scales;
  std::int64_t assigned = 0;
  std::int64_t collisions = 0;  // boxes dropped because their cell was taken

  std::int64_t positives() const {
    std::int64_t p = 0;
    for (const auto& s : scales) p += std::count(s.positive.begin(), s.positive.end(), 1);
    return p;
  }
};

// Scale index by box size: sqrt(area) < 64 -> finest, < 160 -> middle, else coarsest.
inline std::size_t scale_for(const Box& b) {
  const double side = std::sqrt(b.area());
  return side < 64 ? 0 : side < 160 ? 1 : 2;
}

// Each trainable ground truth goes to one scale by size and to the cell
// containing its center. Boxes are visited largest first, so on a collision
// the larger box keeps the cell; with several anchors per cell a colliding
// box takes the next free slot before being dropped.
inline TargetMap assign_targets(const std::vector<std::vector<GroundTruth>>& per_image,
                                const std::array<std::array<Index, 2>, 3>& grids, const std::array<Index, 3>& strides,
                                Index anchors = 1) {
  TargetMap tm;
  const Index batch = static_cast<Index>(per_image.size());
  for (std::size_t s = 0; s < 3; ++s) {
    ScaleTargets st;
    st.batch = batch;
    st.anchors = anchors;
    st.h = grids[s][0];
    st.w = grids[s][1];
    st.stride = strides[s];
    const auto n = static_cast<std::size_t>(batch * anchors * st.h * st.w);
    st.positive.assign(n, 0);
    st.box.assign(n, Box{});
    st.cls.assign(n, -1);
    tm.scales.push_back(std::move(st));
  }
  for (Index img = 0; img < batch; ++img) {
    const auto& gts = per_image[static_cast<std::size_t>(img)];
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < gts.size(); ++k)
      if (!gts[k].ignore && gts[k].class_index >= 0 && gts[k].box.valid()) order.push_back(k);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return gts[a].box.area() > gts[b].box.area(); });
    for (std::size_t k : order) {
      const auto& g = gts[k];
      auto& st = tm.scales[scale_for(g.box)];
      const double sd = static_cast<double>(st.stride);
      const Index j = std::clamp<Index>(static_cast<Index>(std::floor(g.box.center_x() / sd)), 0, st.w - 1);
      const Index i = std::clamp<Index>(static_cast<Index>(std::floor(g.box.center_y() / sd)), 0, st.h - 1);
      bool placed = false;
      for (Index a = 0; a < anchors && !placed; ++a) {
        const std::size_t at = st.slot(img, a, i, j);
        if (st.positive[at]) continue;
        st.positive[at] = 1;
        st.box[at] = g.box;
        st.cls[at] = g.class_index;
        placed = true;
      }
      if (placed)
        ++tm.assigned;
      else
        ++tm.collisions;
    }
  }
  return tm;
}

}  // namespace vdet::train
