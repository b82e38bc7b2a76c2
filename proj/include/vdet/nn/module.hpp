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

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vdet/conv.hpp"
#include "vdet/norm.hpp"
#include "vdet/rng.hpp"

namespace vdet::nn {

// Per-image feature map dimensions.
struct FeatureShape {
  Index c = 0, h = 0, w = 0;
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

// Closed-form cost of a layer for a single image.
struct Cost {
  Index params = 0;
  std::uint64_t macs = 0;
  FeatureShape out;

  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    out = o.out;
    return *this;
  }
};

template <class T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

template <class T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  virtual Cost cost(const FeatureShape& in) const = 0;

  void train(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->train(on);
  }
  bool training() const { return training_; }

  void set_bn_momentum(double m) {
    bn_momentum_ = m;
    for (auto& [name, child] : children_) child->set_bn_momentum(m);
  }

  void parameters(std::vector<NamedTensor<T>>& out, const std::string& prefix = "") const {
    for (const auto& [name, t] : params_) out.emplace_back(prefix + name, t);
    for (const auto& [name, child] : children_) child->parameters(out, prefix + name + ".");
  }
  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    parameters(out);
    return out;
  }

  // Non-trainable state (batch-norm running statistics).
  void buffers(std::vector<NamedTensor<T>>& out, const std::string& prefix = "") const {
    for (const auto& [name, t] : buffers_) out.emplace_back(prefix + name, t);
    for (const auto& [name, child] : children_) child->buffers(out, prefix + name + ".");
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

 protected:
  Tensor<T> register_parameter(std::string name, Tensor<T> t) {
    params_.emplace_back(std::move(name), t);
    return t;
  }
  void register_buffer(std::string name, Tensor<T> t) { buffers_.emplace_back(std::move(name), std::move(t)); }

  template <class M>
  M& register_module(std::string name, std::unique_ptr<M> m) {
    M& ref = *m;
    children_.emplace_back(std::move(name), std::move(m));
    return ref;
  }

  double bn_momentum() const { return bn_momentum_; }

 private:
  bool training_ = true;
  double bn_momentum_ = 0.1;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
class Conv2d : public Module<T> {
 public:
  // Weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Conv2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.in_channels / spec_.groups * spec_.kernel * spec_.kernel));
    weight_ = this->register_parameter("weight", uniform_tensor<T>(spec_.weight_shape(), bound, rng));
    if (spec_.bias) bias_ = this->register_parameter("bias", uniform_tensor<T>({spec_.out_channels}, bound, rng));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, spec_); }

  Cost cost(const FeatureShape& in) const override {
    const FeatureShape out{spec_.out_channels, spec_.out_size(in.h), spec_.out_size(in.w)};
    return {spec_.param_count(), static_cast<std::uint64_t>(spec_.weight_count() * out.h * out.w), out};
  }

  const ConvSpec& spec() const { return spec_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <class T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(Index channels) : state_(channels) {
    gamma_ = this->register_parameter("weight", Tensor<T>::ones({channels}));
    beta_ = this->register_parameter("bias", Tensor<T>::zeros({channels}));
    this->register_buffer("running_mean", state_.running_mean);
    this->register_buffer("running_var", state_.running_var);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    return batch_norm(x, gamma_, beta_, state_, {this->training(), this->bn_momentum(), 1e-5});
  }

  Cost cost(const FeatureShape& in) const override {
    return {2 * in.c, static_cast<std::uint64_t>(in.c * in.h * in.w), in};
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  BatchNormState<T>& state() { return state_; }

 private:
  BatchNormState<T> state_;
  Tensor<T> gamma_;
  Tensor<T> beta_;
};

}  // namespace vdet::nn
