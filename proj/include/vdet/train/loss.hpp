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
#include <cmath>
#include <vector>

#include "vdet/ops.hpp"
#include "vdet/train/targets.hpp"

namespace vdet::train {

struct LossWeights {
  double box = 5.0, obj = 1.0, cls = 0.5;
};

template <class T>
struct LossResult {
  Tensor<T> total;  // scalar, differentiable w.r.t. the raw predictions
  double obj = 0, cls = 0, box = 0;
};

namespace detail {

// log(1 + exp(z)) - z * y, evaluated without overflow.
inline double bce_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

struct DecodedBox {
  double cx, cy, w, h;
  double dcx_dt, dcy_dt, dw_dt, dh_dt;  // derivatives w.r.t. tx, ty, tw, th
};

inline DecodedBox decode_cell(const double* v, Index i, Index j, double stride) {
  DecodedBox d{};
  const double sx = vdet::detail::sigmoid_scalar(v[0]), sy = vdet::detail::sigmoid_scalar(v[1]);
  d.cx = (static_cast<double>(j) + sx) * stride;
  d.cy = (static_cast<double>(i) + sy) * stride;
  d.w = stride * std::exp(std::min(v[2], 4.0));
  d.h = stride * std::exp(std::min(v[3], 4.0));
  d.dcx_dt = stride * sx * (1 - sx);
  d.dcy_dt = stride * sy * (1 - sy);
  d.dw_dt = v[2] < 4.0 ? d.w : 0.0;
  d.dh_dt = v[3] < 4.0 ? d.h : 0.0;
  return d;
}

// IoU of the decoded box with `t` and its gradient w.r.t. (cx, cy, w, h).
inline double iou_and_grad(const DecodedBox& d, const Box& t, std::array<double, 4>& g) {
  g = {0, 0, 0, 0};
  const double x1 = d.cx - d.w / 2, x2 = d.cx + d.w / 2, y1 = d.cy - d.h / 2, y2 = d.cy + d.h / 2;
  const double iw = std::min(x2, t.right) - std::max(x1, t.left);
  const double ih = std::min(y2, t.bottom) - std::max(y1, t.top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = d.w * d.h + t.area() - inter;
  const double iou = inter / uni;
  const double d_inter = (uni + inter) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  // Partial derivatives of the intersection w.r.t. each edge.
  const double di_x1 = x1 > t.left ? -ih : 0.0, di_x2 = x2 < t.right ? ih : 0.0;
  const double di_y1 = y1 > t.top ? -iw : 0.0, di_y2 = y2 < t.bottom ? iw : 0.0;
  g[0] = d_inter * (di_x1 + di_x2);
  g[1] = d_inter * (di_y1 + di_y2);
  g[2] = d_inter * 0.5 * (di_x2 - di_x1) + d_area * d.h;
  g[3] = d_inter * 0.5 * (di_y2 - di_y1) + d_area * d.w;
  return iou;
}

}  // namespace detail

// total = w_obj * mean over all slots of BCE(obj)
//       + w_cls * mean over positives of the BCE summed over classes
//       + w_box * mean over positives of (1 - IoU(decoded, target)).
// With no positives the class and box terms are zero.
template <class T>
LossResult<T> detection_loss(const std::vector<Tensor<T>>& raw, const TargetMap& targets,
                             const LossWeights& weights = {}) {
  if (raw.size() != targets.scales.size()) throw ShapeError("detection_loss: scale count mismatch");
  Index cells = 0, depth = 0;
  for (std::size_t s = 0; s < raw.size(); ++s) {
    const auto& t = raw[s];
    const auto& st = targets.scales[s];
    if (t.rank() != 5 || t.dim(0) != st.batch || t.dim(1) != st.anchors || t.dim(2) != st.h || t.dim(3) != st.w)
      throw ShapeError("detection_loss: prediction " + to_string(t.shape()) + " does not match targets at scale " +
                       std::to_string(s));
    if (depth && t.dim(4) != depth) throw ShapeError("detection_loss: inconsistent class depth across scales");
    depth = t.dim(4);
    cells += static_cast<Index>(st.cells());
  }
  const Index classes = depth - 5;
  const auto positives = targets.positives();
  const double inv_cells = 1.0 / static_cast<double>(cells);
  const double inv_pos = positives ? 1.0 / static_cast<double>(positives) : 0.0;

  LossResult<T> res;
  for (std::size_t s = 0; s < raw.size(); ++s) {
    const auto& st = targets.scales[s];
    const T* p = raw[s].ptr();
    for (std::size_t k = 0; k < st.cells(); ++k) {
      const T* v = p + static_cast<Index>(k) * depth;
      const bool pos = st.positive[k];
      res.obj += detail::bce_logits(v[4], pos ? 1.0 : 0.0);
      if (!pos) continue;
      for (Index c = 0; c < classes; ++c) res.cls += detail::bce_logits(v[5 + c], st.cls[k] == c ? 1.0 : 0.0);
      const Index j = static_cast<Index>(k) % st.w, i = (static_cast<Index>(k) / st.w) % st.h;
      const double vd[4] = {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2]),
                            static_cast<double>(v[3])};
      std::array<double, 4> g;
      res.box += 1.0 - detail::iou_and_grad(detail::decode_cell(vd, i, j, static_cast<double>(st.stride)), st.box[k], g);
    }
  }
  res.obj *= inv_cells;
  res.cls *= inv_pos;
  res.box *= inv_pos;
  res.total = Tensor<T>::scalar(static_cast<T>(weights.obj * res.obj + weights.cls * res.cls + weights.box * res.box));

  vdet::detail::record<T>("detection_loss", raw, res.total, [raw, targets, weights, depth, classes, inv_cells,
                                                              inv_pos, out = res.total]() mutable {
    const double up = static_cast<double>(out.grad()[0]);
    for (std::size_t s = 0; s < raw.size(); ++s) {
      if (!vdet::detail::wants_grad(raw[s])) continue;
      const auto& st = targets.scales[s];
      const T* p = raw[s].ptr();
      auto gx = raw[s].grad();
      for (std::size_t k = 0; k < st.cells(); ++k) {
        const T* v = p + static_cast<Index>(k) * depth;
        T* g = gx.data() + static_cast<Index>(k) * depth;
        const bool pos = st.positive[k];
        g[4] += static_cast<T>(up * weights.obj * inv_cells *
                               (vdet::detail::sigmoid_scalar(static_cast<double>(v[4])) - (pos ? 1.0 : 0.0)));
        if (!pos) continue;
        for (Index c = 0; c < classes; ++c)
          g[5 + c] += static_cast<T>(up * weights.cls * inv_pos *
                                     (vdet::detail::sigmoid_scalar(static_cast<double>(v[5 + c])) -
                                      (st.cls[k] == c ? 1.0 : 0.0)));
        const Index j = static_cast<Index>(k) % st.w, i = (static_cast<Index>(k) / st.w) % st.h;
        const double vd[4] = {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2]),
                              static_cast<double>(v[3])};
        const auto d = detail::decode_cell(vd, i, j, static_cast<double>(st.stride));
        std::array<double, 4> gi;
        detail::iou_and_grad(d, st.box[k], gi);
        const double f = -up * weights.box * inv_pos;
        g[0] += static_cast<T>(f * gi[0] * d.dcx_dt);
        g[1] += static_cast<T>(f * gi[1] * d.dcy_dt);
        g[2] += static_cast<T>(f * gi[2] * d.dw_dt);
        g[3] += static_cast<T>(f * gi[3] * d.dh_dt);
      }
    }
  });
  return res;
}

}  // namespace vdet::train
