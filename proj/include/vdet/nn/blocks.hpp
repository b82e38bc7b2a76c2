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

#include <memory>
#include <string>
#include <vector>

#include "vdet/deform.hpp"
#include "vdet/nn/module.hpp"

namespace vdet::nn {

// A block with one input and one output.
template <class T>
class Unary : public Module<T> {
 public:
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
};

// Convolution -> batch norm -> SiLU.
template <class T>
class Cbs : public Unary<T> {
 public:
  Cbs(Index c1, Index c2, Index k, Index stride, Rng& rng)
      : conv_(this->register_module("conv", std::make_unique<Conv2d<T>>(ConvSpec{c1, c2, k, stride, k / 2, 1, false}, rng))),
        bn_(this->register_module("bn", std::make_unique<BatchNorm2d<T>>(c2))) {}

  Tensor<T> forward(const Tensor<T>& x) override { return silu(bn_.forward(conv_.forward(x))); }

  Cost cost(const FeatureShape& in) const override {
    Cost c = conv_.cost(in);
    c += bn_.cost(c.out);
    return c;
  }

  Conv2d<T>& conv() { return conv_; }
  BatchNorm2d<T>& bn() { return bn_; }

 private:
  Conv2d<T>& conv_;
  BatchNorm2d<T>& bn_;
};

struct GhostSpec {
  Index in_channels = 1;
  Index out_channels = 1;  // n
  Index ratio = 2;         // s
  Index kernel = 1;        // primary kernel
  Index cheap_kernel = 3;  // depthwise kernel d
  Index stride = 1;

  Index intrinsic() const { return (out_channels + ratio - 1) / ratio; }
  Index cheap_channels() const { return intrinsic() * (ratio - 1); }
  void validate() const {
    if (ratio < 2) throw ParameterError("ghost: ratio must be >= 2");
    if (out_channels < ratio)
      throw ParameterError("ghost: output channels " + std::to_string(out_channels) + " smaller than ratio " +
                           std::to_string(ratio));
    if (cheap_kernel % 2 == 0) throw ParameterError("ghost: cheap kernel must be odd");
  }
  // Weights of the two convolutions plus the output batch norm.
  Index param_count() const {
    return intrinsic() * in_channels * kernel * kernel + cheap_channels() * cheap_kernel * cheap_kernel +
           2 * out_channels;
  }
};

// Ghost module: a primary convolution makes m = ceil(n/s) intrinsic maps, a
// depthwise convolution derives (s-1) cheap maps from each, and the first n
// maps of [intrinsic, cheap] pass through batch norm and SiLU.
template <class T>
class GhostConv : public Unary<T> {
 public:
  GhostConv(const GhostSpec& spec, Rng& rng) : spec_((spec.validate(), spec)) {
    const Index m = spec_.intrinsic();
    primary_ = &this->register_module(
        "primary", std::make_unique<Conv2d<T>>(
                       ConvSpec{spec_.in_channels, m, spec_.kernel, spec_.stride, spec_.kernel / 2, 1, false}, rng));
    cheap_ = &this->register_module(
        "cheap", std::make_unique<Conv2d<T>>(
                     ConvSpec{m, spec_.cheap_channels(), spec_.cheap_kernel, 1, spec_.cheap_kernel / 2, m, false}, rng));
    bn_ = &this->register_module("bn", std::make_unique<BatchNorm2d<T>>(spec_.out_channels));
  }

  Tensor<T> forward_pre_norm(const Tensor<T>& x) {
    const Tensor<T> intrinsic = primary_->forward(x);
    const Tensor<T> all = concat_channels<T>({intrinsic, cheap_->forward(intrinsic)});
    return all.dim(1) == spec_.out_channels ? all : slice_channels(all, 0, spec_.out_channels);
  }

  Tensor<T> forward(const Tensor<T>& x) override { return silu(bn_->forward(forward_pre_norm(x))); }

  Cost cost(const FeatureShape& in) const override {
    Cost c = primary_->cost(in);
    const Cost cheap = cheap_->cost(c.out);
    c.params += cheap.params;
    c.macs += cheap.macs;
    c.out.c = spec_.out_channels;
    c += bn_->cost(c.out);
    return c;
  }

  const GhostSpec& spec() const { return spec_; }

 private:
  GhostSpec spec_;
  Conv2d<T>* primary_;
  Conv2d<T>* cheap_;
  BatchNorm2d<T>* bn_;
};

enum class ConvKind { standard, ghost };

template <class T>
std::unique_ptr<Unary<T>> make_conv(ConvKind kind, Index c1, Index c2, Index k, Index stride, Rng& rng) {
  if (kind == ConvKind::ghost) return std::make_unique<GhostConv<T>>(GhostSpec{c1, c2, 2, k, 3, stride}, rng);
  return std::make_unique<Cbs<T>>(c1, c2, k, stride, rng);
}

template <class T>
class Bottleneck : public Unary<T> {
 public:
  Bottleneck(Index c, Index k1, Index k2, bool shortcut, ConvKind kind, Rng& rng)
      : cv1_(this->register_module("cv1", make_conv<T>(kind, c, c, k1, 1, rng))),
        cv2_(this->register_module("cv2", make_conv<T>(kind, c, c, k2, 1, rng))),
        shortcut_(shortcut) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = cv2_.forward(cv1_.forward(x));
    return shortcut_ ? add(x, y) : y;
  }

  Cost cost(const FeatureShape& in) const override {
    Cost c = cv1_.cost(in);
    c += cv2_.cost(c.out);
    return c;
  }

 private:
  Unary<T>& cv1_;
  Unary<T>& cv2_;
  bool shortcut_;
};

// Split after a 1x1 CBS, chain bottlenecks on one half, concatenate every
// intermediate, fuse with a 1x1 CBS.
template <class T>
class C2f : public Unary<T> {
 public:
  C2f(Index c1, Index c2, Index n, bool shortcut, Rng& rng) : hidden_(c2 / 2) {
    if (hidden_ < 1 || n < 1) throw BuildError("C2f: invalid channel plan " + std::to_string(c1) + "->" + std::to_string(c2));
    cv1_ = &this->register_module("cv1", std::make_unique<Cbs<T>>(c1, 2 * hidden_, 1, 1, rng));
    for (Index i = 0; i < n; ++i)
      blocks_.push_back(&this->register_module(
          "m" + std::to_string(i), std::make_unique<Bottleneck<T>>(hidden_, 3, 3, shortcut, ConvKind::standard, rng)));
    cv2_ = &this->register_module("cv2", std::make_unique<Cbs<T>>((2 + n) * hidden_, c2, 1, 1, rng));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    const Tensor<T> y = cv1_->forward(x);
    std::vector<Tensor<T>> parts{slice_channels(y, 0, hidden_), slice_channels(y, hidden_, hidden_)};
    for (auto* b : blocks_) parts.push_back(b->forward(parts.back()));
    return cv2_->forward(concat_channels(parts));
  }

  Cost cost(const FeatureShape& in) const override {
    Cost c = cv1_->cost(in);
    FeatureShape branch{hidden_, c.out.h, c.out.w};
    for (auto* b : blocks_) {
      const Cost bc = b->cost(branch);
      c.params += bc.params;
      c.macs += bc.macs;
    }
    const Cost fuse = cv2_->cost({(2 + static_cast<Index>(blocks_.size())) * hidden_, c.out.h, c.out.w});
    c += fuse;
    return c;
  }

  std::vector<Bottleneck<T>*>& blocks() { return blocks_; }

 private:
  Index hidden_;
  Cbs<T>* cv1_;
  std::vector<Bottleneck<T>*> blocks_;
  Cbs<T>* cv2_;
};

// CSP block with three convolutions; ConvKind::ghost turns every internal
// convolution into a GhostConv (C3Ghost).
template <class T>
class C3 : public Unary<T> {
 public:
  C3(Index c1, Index c2, Index n, bool shortcut, ConvKind kind, Rng& rng) : hidden_(c2 / 2) {
    if (hidden_ < 2 || n < 1) throw BuildError("C3: invalid channel plan " + std::to_string(c1) + "->" + std::to_string(c2));
    cv1_ = &this->register_module("cv1", make_conv<T>(kind, c1, hidden_, 1, 1, rng));
    cv2_ = &this->register_module("cv2", make_conv<T>(kind, c1, hidden_, 1, 1, rng));
    for (Index i = 0; i < n; ++i)
      blocks_.push_back(&this->register_module("m" + std::to_string(i),
                                               std::make_unique<Bottleneck<T>>(hidden_, 1, 3, shortcut, kind, rng)));
    cv3_ = &this->register_module("cv3", make_conv<T>(kind, 2 * hidden_, c2, 1, 1, rng));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> a = cv1_->forward(x);
    for (auto* b : blocks_) a = b->forward(a);
    return cv3_->forward(concat_channels<T>({a, cv2_->forward(x)}));
  }

  Cost cost(const FeatureShape& in) const override {
    Cost c = cv1_->cost(in);
    for (auto* b : blocks_) c += b->cost(c.out);
    const Cost side = cv2_->cost(in);
    c.params += side.params;
    c.macs += side.macs;
    c += cv3_->cost({2 * hidden_, c.out.h, c.out.w});
    return c;
  }

 private:
  Index hidden_;
  Unary<T>* cv1_;
  Unary<T>* cv2_;
  std::vector<Bottleneck<T>*> blocks_;
  Unary<T>* cv3_;
};

// 1x1 CBS to `hidden`, three cascaded 5x5 stride-1 max pools, concatenation
// of the four stages, 1x1 CBS out.
template <class T>
class Sppf : public Unary<T> {
 public:
  Sppf(Index c1, Index c2, Index hidden, Rng& rng)
      : hidden_(hidden),
        cv1_(this->register_module("cv1", std::make_unique<Cbs<T>>(c1, hidden, 1, 1, rng))),
        cv2_(this->register_module("cv2", std::make_unique<Cbs<T>>(4 * hidden, c2, 1, 1, rng))) {}

  // Concatenated pyramid before the output projection.
  Tensor<T> pyramid(const Tensor<T>& x) {
    std::vector<Tensor<T>> stages{cv1_.forward(x)};
    for (int i = 0; i < 3; ++i) stages.push_back(pool2d(stages.back(), PoolKind::max, 5, 1, 2));
    return concat_channels(stages);
  }

  Tensor<T> forward(const Tensor<T>& x) override { return cv2_.forward(pyramid(x)); }

  Cost cost(const FeatureShape& in) const override {
    Cost c = cv1_.cost(in);
    c += cv2_.cost({4 * hidden_, c.out.h, c.out.w});
    return c;
  }

 private:
  Index hidden_;
  Cbs<T>& cv1_;
  Cbs<T>& cv2_;
};

struct CbamSpec {
  Index channels = 1;
  Index reduction = 16;
  Index spatial_kernel = 7;

  Index hidden() const { return std::max<Index>(channels / reduction, 4); }
  void validate() const {
    if (channels < 1 || reduction < 1) throw ParameterError("cbam: channels and reduction must be positive");
    if (spatial_kernel % 2 == 0) throw ParameterError("cbam: spatial kernel must be odd");
  }
};

// M_c = sigmoid(MLP(avgpool F) + MLP(maxpool F)) with a shared two-layer MLP.
template <class T>
class ChannelAttention : public Module<T> {
 public:
  ChannelAttention(const CbamSpec& spec, Rng& rng)
      : fc1_(this->register_module("fc1", std::make_unique<Conv2d<T>>(ConvSpec{spec.channels, spec.hidden(), 1, 1, 0, 1, true}, rng))),
        fc2_(this->register_module("fc2", std::make_unique<Conv2d<T>>(ConvSpec{spec.hidden(), spec.channels, 1, 1, 0, 1, true}, rng))) {}

  Tensor<T> mlp(const Tensor<T>& v) const { return fc2_.forward(relu(fc1_.forward(v))); }

  Tensor<T> forward(const Tensor<T>& f) const {
    return sigmoid(add(mlp(global_pool(f, PoolKind::avg)), mlp(global_pool(f, PoolKind::max))));
  }

  Cost cost(const FeatureShape& in) const override {
    const Cost a = fc1_.cost({in.c, 1, 1});
    const Cost b = fc2_.cost(a.out);
    return {a.params + b.params, 2 * (a.macs + b.macs), FeatureShape{in.c, 1, 1}};
  }

  Conv2d<T>& fc1() { return fc1_; }
  Conv2d<T>& fc2() { return fc2_; }

 private:
  Conv2d<T>& fc1_;
  Conv2d<T>& fc2_;
};

// M_s = sigmoid(conv_kxk([mean_c F'; max_c F'])).
template <class T>
class SpatialAttention : public Module<T> {
 public:
  SpatialAttention(const CbamSpec& spec, Rng& rng)
      : conv_(this->register_module("conv", std::make_unique<Conv2d<T>>(
                                                ConvSpec{2, 1, spec.spatial_kernel, 1, spec.spatial_kernel / 2, 1, false}, rng))) {}

  Tensor<T> forward(const Tensor<T>& f) const {
    return sigmoid(conv_.forward(concat_channels<T>({channel_pool(f, PoolKind::avg), channel_pool(f, PoolKind::max)})));
  }

  Cost cost(const FeatureShape& in) const override {
    Cost c = conv_.cost({2, in.h, in.w});
    c.out = {1, in.h, in.w};
    return c;
  }

  Conv2d<T>& conv() { return conv_; }

 private:
  Conv2d<T>& conv_;
};

// F' = M_c(F) * F, F'' = M_s(F') * F'.
template <class T>
class Cbam : public Unary<T> {
 public:
  Cbam(const CbamSpec& spec, Rng& rng)
      : spec_((spec.validate(), spec)),
        channel_(this->register_module("channel", std::make_unique<ChannelAttention<T>>(spec, rng))),
        spatial_(this->register_module("spatial", std::make_unique<SpatialAttention<T>>(spec, rng))) {}

  Tensor<T> forward(const Tensor<T>& f) override {
    if (f.dim(1) != spec_.channels)
      throw ShapeError("cbam: expected " + std::to_string(spec_.channels) + " channels, got " + to_string(f.shape()));
    const Tensor<T> refined = mul(channel_.forward(f), f);
    return mul(spatial_.forward(refined), refined);
  }

  Cost cost(const FeatureShape& in) const override {
    const Cost a = channel_.cost(in);
    const Cost b = spatial_.cost(in);
    return {a.params + b.params, a.macs + b.macs, in};
  }

  ChannelAttention<T>& channel() { return channel_; }
  SpatialAttention<T>& spatial() { return spatial_; }
  const CbamSpec& spec() const { return spec_; }

 private:
  CbamSpec spec_;
  ChannelAttention<T>& channel_;
  SpatialAttention<T>& spatial_;
};

// Modulated deformable convolution followed by batch norm and SiLU. Sibling
// convolutions over the input predict 2K offsets and K modulation logits;
// both start at zero, i.e. a regular convolution scaled by 0.5.
template <class T>
class DeformConv : public Unary<T> {
 public:
  DeformConv(const DeformSpec& spec, Rng& rng) : spec_(spec) {
    const Index k = spec_.kernel, kpts = spec_.points();
    offset_ = &this->register_module(
        "offset", std::make_unique<Conv2d<T>>(ConvSpec{spec_.in_channels, 2 * kpts, k, spec_.stride, spec_.padding, 1, true}, rng));
    modulation_ = &this->register_module(
        "modulation", std::make_unique<Conv2d<T>>(ConvSpec{spec_.in_channels, kpts, k, spec_.stride, spec_.padding, 1, true}, rng));
    for (auto* c : {offset_, modulation_}) {
      for (auto& v : c->weight().data()) v = T(0);
      for (auto& v : c->bias().data()) v = T(0);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.in_channels * kpts));
    weight_ = this->register_parameter("weight", uniform_tensor<T>(spec_.as_conv().weight_shape(), bound, rng));
    bn_ = &this->register_module("bn", std::make_unique<BatchNorm2d<T>>(spec_.out_channels));
  }

  Tensor<T> forward_pre_norm(const Tensor<T>& x) {
    return deform_conv2d(x, offset_->forward(x), sigmoid(modulation_->forward(x)), weight_, Tensor<T>(), spec_);
  }

  Tensor<T> forward(const Tensor<T>& x) override { return silu(bn_->forward(forward_pre_norm(x))); }

  Cost cost(const FeatureShape& in) const override {
    Cost c = offset_->cost(in);
    const Cost m = modulation_->cost(in);
    const Index plane = c.out.h * c.out.w, rows = spec_.in_channels * spec_.points();
    c.params += m.params + spec_.out_channels * rows;
    c.macs += m.macs + static_cast<std::uint64_t>((spec_.out_channels + 4) * rows * plane);
    c.out.c = spec_.out_channels;
    c += bn_->cost(c.out);
    return c;
  }

  Conv2d<T>& offset_conv() { return *offset_; }
  Conv2d<T>& modulation_conv() { return *modulation_; }
  Tensor<T>& weight() { return weight_; }

 private:
  DeformSpec spec_;
  Conv2d<T>* offset_;
  Conv2d<T>* modulation_;
  Tensor<T> weight_;
  BatchNorm2d<T>* bn_;
};

}  // namespace vdet::nn
