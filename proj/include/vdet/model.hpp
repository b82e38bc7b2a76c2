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

// Backbone / neck / head assembly with ablation switches.
//
// Channel plan at width 1.0 (nano scale): stem 16, stages 32/64/128/256.
//
//   backbone  CBS/2 -> CBS/2 -> C2f -> CBS/2 -> C2f (P3) -> CBS/2 -> C2f (P4)
//             -> CBS/2 -> C2f -> SPPF (P5)
//   neck      top-down:  up(P5)+P4 -> CSP [CBAM];  up(.)+P3 -> CSP [CBAM] = out/8
//             bottom-up: CBS/2(out/8)+. -> CSP [CBAM] = out/16
//                        CBS/2(out/16)+P5 -> CSP [CBAM] = out/32
//   head      per scale: DCNv2 3x3 | CBS 3x3 -> CBS 3x3 -> {1x1 box+obj, 1x1 cls}
//
// CSP is C3Ghost with use_ghost, C2f otherwise.

#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/nn/blocks.hpp"

namespace vdet {

struct ModelConfig {
  std::vector<std::string> class_names{"Car", "Van", "Truck", "Tram"};
  double width_multiple = 1.0;
  double depth_multiple = 1.0;
  bool use_ghost = false;
  bool use_cbam = false;
  bool use_dcn = false;
  Index anchors = 1;
  Index input_size = 640;
  std::array<Index, 3> strides{8, 16, 32};

  Index num_classes() const { return static_cast<Index>(class_names.size()); }

  void validate() const {
    if (class_names.empty()) throw BuildError("model config: empty class list");
    if (input_size <= 0 || input_size % 32 != 0)
      throw BuildError("model config: input size " + std::to_string(input_size) + " not divisible by 32");
    if (anchors < 1) throw BuildError("model config: anchors per cell must be >= 1");
    if (!(width_multiple > 0) || !(depth_multiple > 0)) throw BuildError("model config: multipliers must be positive");
    if (strides != std::array<Index, 3>{8, 16, 32}) throw BuildError("model config: strides must be (8, 16, 32)");
  }

  // Channels for a nano-plan width, rounded up to a multiple of 8.
  Index channels(Index base) const {
    const auto c = static_cast<Index>(std::ceil(static_cast<double>(base) * width_multiple / 8.0)) * 8;
    return std::max<Index>(c, 8);
  }
  Index depth() const { return std::max<Index>(1, std::llround(depth_multiple)); }

  std::string variant_name() const {
    if (!use_ghost && !use_cbam && !use_dcn) return "baseline";
    std::string s;
    if (use_cbam) s += "+cbam";
    if (use_ghost) s += "+ghost";
    if (use_dcn) s += "+dcn";
    return s;
  }
};

// The eight ablation variants in reporting order: baseline, singles, pairs, all.
inline std::vector<ModelConfig> ablation_variants(const ModelConfig& base) {
  const std::array<std::array<bool, 3>, 8> flags{{{false, false, false},
                                                  {true, false, false},
                                                  {false, true, false},
                                                  {false, false, true},
                                                  {true, true, false},
                                                  {true, false, true},
                                                  {false, true, true},
                                                  {true, true, true}}};
  std::vector<ModelConfig> out;
  for (const auto& [cbam, ghost, dcn] : flags) {
    ModelConfig c = base;
    c.use_cbam = cbam;
    c.use_ghost = ghost;
    c.use_dcn = dcn;
    out.push_back(c);
  }
  return out;
}

// One tensor [B, A, H, W, 5 + C] per stride.
template <class T>
using RawPrediction = std::vector<Tensor<T>>;

template <class T>
class Model : public nn::Module<T> {
 public:
  Model(const ModelConfig& config, std::uint64_t seed) : config_((config.validate(), config)) {
    Rng rng(seed);
    const auto& c = config_;
    const Index c16 = c.channels(16), c32 = c.channels(32), c64 = c.channels(64), c128 = c.channels(128),
                c256 = c.channels(256), n = c.depth();
    backbone_.push_back(add_module<nn::Cbs<T>>("backbone.0", 3, c16, 3, 2, rng));
    backbone_.push_back(add_module<nn::Cbs<T>>("backbone.1", c16, c32, 3, 2, rng));
    backbone_.push_back(add_module<nn::C2f<T>>("backbone.2", c32, c32, n, true, rng));
    backbone_.push_back(add_module<nn::Cbs<T>>("backbone.3", c32, c64, 3, 2, rng));
    backbone_.push_back(add_module<nn::C2f<T>>("backbone.4", c64, c64, n, true, rng));
    backbone_.push_back(add_module<nn::Cbs<T>>("backbone.5", c64, c128, 3, 2, rng));
    backbone_.push_back(add_module<nn::C2f<T>>("backbone.6", c128, c128, n, true, rng));
    backbone_.push_back(add_module<nn::Cbs<T>>("backbone.7", c128, c256, 3, 2, rng));
    backbone_.push_back(add_module<nn::C2f<T>>("backbone.8", c256, c256, n, true, rng));
    backbone_.push_back(add_module<nn::Sppf<T>>("backbone.9", c256, c256, c256 / 2, rng));

    const std::array<std::pair<Index, Index>, 4> csp_plan{
        {{c256 + c128, c128}, {c128 + c64, c64}, {c64 + c128, c128}, {c128 + c256, c256}}};
    for (std::size_t i = 0; i < csp_plan.size(); ++i) {
      const auto [cin, cout] = csp_plan[i];
      const std::string name = "neck.csp" + std::to_string(i);
      if (c.use_ghost)
        neck_csp_.push_back(add_module<nn::C3<T>>(name, cin, cout, n, false, nn::ConvKind::ghost, rng));
      else
        neck_csp_.push_back(add_module<nn::C2f<T>>(name, cin, cout, n, false, rng));
      neck_cbam_.push_back(c.use_cbam ? add_module<nn::Cbam<T>>("neck.cbam" + std::to_string(i), nn::CbamSpec{cout, 16, 7}, rng)
                                      : nullptr);
    }
    neck_down_.push_back(add_module<nn::Cbs<T>>("neck.down0", c64, c64, 3, 2, rng));
    neck_down_.push_back(add_module<nn::Cbs<T>>("neck.down1", c128, c128, 3, 2, rng));

    const std::array<Index, 3> head_channels{c64, c128, c256};
    const Index nc = c.num_classes(), a = c.anchors;
    for (std::size_t s = 0; s < 3; ++s) {
      const Index ch = head_channels[s];
      const std::string prefix = "head." + std::to_string(s) + ".";
      Head h;
      if (c.use_dcn)
        h.stem = add_module<nn::DeformConv<T>>(prefix + "stem", DeformSpec{ch, ch, 3, 1, 1}, rng);
      else
        h.stem = add_module<nn::Cbs<T>>(prefix + "stem", ch, ch, 3, 1, rng);
      h.refine = add_module<nn::Cbs<T>>(prefix + "refine", ch, ch, 3, 1, rng);
      h.box = add_module<nn::Conv2d<T>>(prefix + "box", ConvSpec{ch, 5 * a, 1, 1, 0, 1, true}, rng);
      h.cls = add_module<nn::Conv2d<T>>(prefix + "cls", ConvSpec{ch, nc * a, 1, 1, 0, 1, true}, rng);
      // Objectness starts at a 1% prior.
      for (Index k = 0; k < a; ++k) h.box->bias()[k * 5 + 4] = static_cast<T>(std::log(0.01 / 0.99));
      heads_.push_back(h);
    }
  }

  const ModelConfig& config() const { return config_; }

  RawPrediction<T> forward(const Tensor<T>& images) {
    if (images.rank() != 4 || images.dim(1) != 3)
      throw ShapeError("model: expected [B,3,H,W] images, got " + to_string(images.shape()));
    if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
      throw ShapeError("model: spatial size " + to_string(images.shape()) + " not divisible by 32");
    Tensor<T> x = images;
    Tensor<T> p3, p4;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      x = backbone_[i]->forward(x);
      if (i == 4) p3 = x;
      if (i == 6) p4 = x;
    }
    const Tensor<T> p5 = x;
    auto stage = [&](std::size_t i, const Tensor<T>& in) {
      Tensor<T> y = neck_csp_[i]->forward(in);
      return neck_cbam_[i] ? neck_cbam_[i]->forward(y) : y;
    };
    const Tensor<T> n4 = stage(0, concat_channels<T>({upsample_nearest2x(p5), p4}));
    const Tensor<T> o3 = stage(1, concat_channels<T>({upsample_nearest2x(n4), p3}));
    const Tensor<T> o4 = stage(2, concat_channels<T>({neck_down_[0]->forward(o3), n4}));
    const Tensor<T> o5 = stage(3, concat_channels<T>({neck_down_[1]->forward(o4), p5}));

    RawPrediction<T> out;
    const std::array<Tensor<T>, 3> levels{o3, o4, o5};
    for (std::size_t s = 0; s < 3; ++s) {
      const Tensor<T> f = heads_[s].refine->forward(heads_[s].stem->forward(levels[s]));
      out.push_back(prediction_layout(heads_[s].box->forward(f), heads_[s].cls->forward(f), config_.anchors));
    }
    return out;
  }

  struct LayerCost {
    std::string name;
    nn::Cost cost;
  };

  // Closed-form per-layer costs for one square image of side `size`.
  std::vector<LayerCost> layer_costs(Index size) const {
    std::vector<LayerCost> rows;
    nn::FeatureShape cur{3, size, size};
    nn::FeatureShape p3, p4;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      const nn::Cost c = backbone_[i]->cost(cur);
      rows.push_back({"backbone." + std::to_string(i), c});
      cur = c.out;
      if (i == 4) p3 = cur;
      if (i == 6) p4 = cur;
    }
    const nn::FeatureShape p5 = cur;
    auto stage = [&](std::size_t i, nn::FeatureShape in) {
      nn::Cost c = neck_csp_[i]->cost(in);
      rows.push_back({"neck.csp" + std::to_string(i), c});
      if (neck_cbam_[i]) rows.push_back({"neck.cbam" + std::to_string(i), neck_cbam_[i]->cost(c.out)});
      return c.out;
    };
    auto cat = [](nn::FeatureShape a, nn::FeatureShape b) { return nn::FeatureShape{a.c + b.c, b.h, b.w}; };
    const nn::FeatureShape n4 = stage(0, cat({p5.c, p5.h * 2, p5.w * 2}, p4));
    const nn::FeatureShape o3 = stage(1, cat({n4.c, n4.h * 2, n4.w * 2}, p3));
    const nn::Cost d0 = neck_down_[0]->cost(o3);
    rows.push_back({"neck.down0", d0});
    const nn::FeatureShape o4 = stage(2, cat(d0.out, n4));
    const nn::Cost d1 = neck_down_[1]->cost(o4);
    rows.push_back({"neck.down1", d1});
    const nn::FeatureShape o5 = stage(3, cat(d1.out, p5));
    const std::array<nn::FeatureShape, 3> levels{o3, o4, o5};
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string prefix = "head." + std::to_string(s) + ".";
      const nn::Cost stem = heads_[s].stem->cost(levels[s]);
      const nn::Cost refine = heads_[s].refine->cost(stem.out);
      rows.push_back({prefix + "stem", stem});
      rows.push_back({prefix + "refine", refine});
      rows.push_back({prefix + "box", heads_[s].box->cost(refine.out)});
      rows.push_back({prefix + "cls", heads_[s].cls->cost(refine.out)});
    }
    return rows;
  }

  nn::Cost cost(const nn::FeatureShape& in) const override {
    nn::Cost total;
    for (const auto& row : layer_costs(in.h)) {
      total.params += row.cost.params;
      total.macs += row.cost.macs;
    }
    return total;
  }

  // Parameters followed by batch-norm buffers, in registration order.
  std::vector<nn::NamedTensor<T>> state() const {
    auto out = this->parameters();
    this->buffers(out);
    return out;
  }

 private:
  struct Head {
    nn::Unary<T>* stem = nullptr;
    nn::Cbs<T>* refine = nullptr;
    nn::Conv2d<T>* box = nullptr;
    nn::Conv2d<T>* cls = nullptr;
  };

  template <class M, class... Args>
  M* add_module(const std::string& name, Args&&... args) {
    return &this->register_module(name, std::make_unique<M>(std::forward<Args>(args)...));
  }

  ModelConfig config_;
  std::vector<nn::Unary<T>*> backbone_;
  std::vector<nn::Unary<T>*> neck_csp_;
  std::vector<nn::Cbam<T>*> neck_cbam_;
  std::vector<nn::Cbs<T>*> neck_down_;
  std::vector<Head> heads_;
};

template <class T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config, std::uint64_t seed) {
  return std::make_unique<Model<T>>(config, seed);
}

// Anchor-free decoding: center = (cell + sigmoid(txy)) * stride,
// size = stride * exp(min(twh, 4)), confidence = sigmoid(obj) * max sigmoid(cls).
// Boxes below conf_threshold are dropped; the rest are clipped to the image.
template <class T>
std::vector<std::vector<DetectionBox>> decode_predictions(const RawPrediction<T>& raw, double conf_threshold,
                                                          const std::array<Index, 3>& strides, double image_w,
                                                          double image_h) {
  if (conf_threshold < 0 || conf_threshold > 1) throw ParameterError("decode: confidence threshold outside [0,1]");
  const Index batch = raw.at(0).dim(0);
  std::vector<std::vector<DetectionBox>> out(static_cast<std::size_t>(batch));
  auto sig = [](double v) { return detail::sigmoid_open(v); };
  for (std::size_t s = 0; s < raw.size(); ++s) {
    const auto& t = raw[s];
    const Index anchors = t.dim(1), h = t.dim(2), w = t.dim(3), depth = t.dim(4);
    const double stride = static_cast<double>(strides[s]);
    for (Index n = 0; n < batch; ++n)
      for (Index a = 0; a < anchors; ++a)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) {
            const T* v = t.ptr() + (((n * anchors + a) * h + i) * w + j) * depth;
            Index best = 0;
            for (Index k = 1; k < depth - 5; ++k)
              if (v[5 + k] > v[5 + best]) best = k;
            const double conf = sig(v[4]) * sig(v[5 + best]);
            if (conf < conf_threshold || conf <= 0) continue;
            const double cx = (static_cast<double>(j) + sig(v[0])) * stride;
            const double cy = (static_cast<double>(i) + sig(v[1])) * stride;
            const double bw = stride * std::exp(std::min<double>(v[2], 4.0));
            const double bh = stride * std::exp(std::min<double>(v[3], 4.0));
            Box b{std::clamp(cx - bw / 2, 0.0, image_w), std::clamp(cy - bh / 2, 0.0, image_h),
                  std::clamp(cx + bw / 2, 0.0, image_w), std::clamp(cy + bh / 2, 0.0, image_h)};
            if (!b.valid()) continue;
            out[static_cast<std::size_t>(n)].push_back({best, conf, b});
          }
  }
  return out;
}

}  // namespace vdet
