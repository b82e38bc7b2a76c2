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
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vdet/checkpoint.hpp"
#include "vdet/data/augment.hpp"
#include "vdet/eval/metrics.hpp"
#include "vdet/model.hpp"
#include "vdet/train/loss.hpp"
#include "vdet/train/optim.hpp"
#include "vdet/train/targets.hpp"

namespace vdet::train {

struct TrainConfig {
  std::int64_t batch_size = 32;
  double lr0 = 0.001;
  double eta_min_ratio = 0.01;  // eta_min = lr0 * ratio
  std::int64_t patience = 10;
  std::int64_t epochs = 150;
  LossWeights loss;
  AdamConfig adam;
  data::AugmentConfig augment;
  bool augment_enabled = true;
  double bn_momentum = 0.1;
  std::array<double, 3> mean{0, 0, 0}, stdev{1, 1, 1};
  // Validation: AP uses every decoded box above eval_conf; precision, recall
  // and the confusion matrix use conf_threshold.
  double eval_conf = 0.001;
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
  std::int64_t max_detections = 100;
  std::string best_checkpoint;  // written whenever validation mAP improves, if set
  bool restore_best = true;

  void validate() const {
    if (batch_size < 1 || epochs < 1 || patience < 1) throw ParameterError("train: batch, epochs and patience must be positive");
    if (patience > epochs) throw ParameterError("train: patience exceeds epoch count");
    if (lr0 < 0 || eta_min_ratio < 0) throw ParameterError("train: negative learning rate");
    if (bn_momentum < 0 || bn_momentum > 1) throw ParameterError("train: batch-norm momentum outside [0,1]");
  }
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double loss = 0, precision = 0, recall = 0, map50 = 0, seconds = 0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::int64_t best_epoch = -1;
  bool stopped_early = false;

  std::vector<double> map_series() const {
    std::vector<double> m;
    for (const auto& e : epochs) m.push_back(e.map50);
    return m;
  }
};

inline void write_history(std::ostream& os, const History& h) {
  os << "epoch\tloss\tprecision\trecall\tmap50\tseconds\n";
  char buf[256];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.3f\n", static_cast<long long>(e.epoch), e.loss,
                  e.precision, e.recall, e.map50, e.seconds);
    os << buf;
  }
}

inline std::vector<GroundTruth> ground_truths(const data::Sample& s) {
  std::vector<GroundTruth> out;
  for (const auto& a : s.annotations) out.push_back({a.class_index, a.bbox, a.ignore_region()});
  return out;
}

template <class T>
Tensor<T> batch_images(const std::vector<const data::Sample*>& samples, const std::array<double, 3>& mean,
                       const std::array<double, 3>& stdev) {
  const Index h = data::image_height(samples.at(0)->image), w = data::image_width(samples[0]->image);
  Tensor<T> out({static_cast<Index>(samples.size()), 3, h, w});
  const Index plane = h * w;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& im = samples[n]->image;
    if (data::image_height(im) != h || data::image_width(im) != w)
      throw ShapeError("batch_images: samples differ in size; letterbox them first");
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < plane; ++i)
        out[(static_cast<Index>(n) * 3 + c) * plane + i] =
            static_cast<T>((static_cast<double>(im[c * plane + i]) - mean[c]) / stdev[c]);
  }
  return out;
}

// Inference: decode, per-class NMS, keep the highest-ranked max_det boxes.
template <class T>
std::vector<std::vector<DetectionBox>> detect(Model<T>& model, const std::vector<const data::Sample*>& samples,
                                              double conf, double nms_iou, std::int64_t max_det,
                                              const std::array<double, 3>& mean = {0, 0, 0},
                                              const std::array<double, 3>& stdev = {1, 1, 1}) {
  NoGradScope<T> no_grad;
  const bool was_training = model.training();
  model.train(false);
  const Tensor<T> images = batch_images<T>(samples, mean, stdev);
  const auto raw = model.forward(images);
  model.train(was_training);
  const auto& strides = model.config().strides;
  auto decoded = decode_predictions(raw, conf, strides, static_cast<double>(images.dim(3)),
                                    static_cast<double>(images.dim(2)));
  for (auto& d : decoded) {
    d = eval::nms(std::move(d), nms_iou);
    if (static_cast<std::int64_t>(d.size()) > max_det) d.resize(static_cast<std::size_t>(max_det));
  }
  return decoded;
}

template <class T>
eval::EvalReport evaluate_model(Model<T>& model, const data::Dataset& ds, const TrainConfig& cfg) {
  std::vector<std::vector<DetectionBox>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    std::vector<const data::Sample*> batch;
    for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
      batch.push_back(&ds.samples[i]);
    for (auto& d : detect(model, batch, cfg.eval_conf, cfg.nms_iou, cfg.max_detections, cfg.mean, cfg.stdev))
      dets.push_back(std::move(d));
    for (const auto* s : batch) gts.push_back(ground_truths(*s));
  }
  return eval::map_at(dets, gts, ds.class_names, 0.5, cfg.conf_threshold);
}

template <class T>
struct StepResult {
  double total = 0, obj = 0, cls = 0, box = 0;
  std::int64_t positives = 0, collisions = 0;
};

// Forward, target assignment, loss, backward and one Adam update on a batch
// of already-augmented samples.
template <class T>
StepResult<T> train_step(Model<T>& model, const std::vector<const data::Sample*>& batch, AdamState<T>& adam,
                         double lr, const TrainConfig& cfg, const std::vector<nn::NamedTensor<T>>& params) {
  const Tensor<T> images = batch_images<T>(batch, cfg.mean, cfg.stdev);
  std::vector<std::vector<GroundTruth>> gts;
  for (const auto* s : batch) gts.push_back(ground_truths(*s));
  Tape<T> tape;
  StepResult<T> r;
  {
    TapeScope<T> scope(tape);
    const auto raw = model.forward(images);
    std::array<std::array<Index, 2>, 3> grids{};
    for (std::size_t s = 0; s < 3; ++s) grids[s] = {raw[s].dim(2), raw[s].dim(3)};
    const auto targets = assign_targets(gts, grids, model.config().strides, model.config().anchors);
    const auto loss = detection_loss(raw, targets, cfg.loss);
    r = {static_cast<double>(loss.total.item()), loss.obj, loss.cls, loss.box, targets.positives(), targets.collisions};
    if (!std::isfinite(r.total)) return r;
    backward(tape, loss.total);
  }
  adam_step(params, adam, lr, cfg.adam);
  return r;
}

// Algorithm: per epoch, shuffle, augment, step through batches, validate,
// track the best mAP and stop once it stalls for `patience` epochs.
template <class T>
History train(Model<T>& model, const data::Dataset& train_set, const data::Dataset& val_set, const TrainConfig& cfg,
              std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ParameterError("train: empty dataset");
  model.train(true);
  model.set_bn_momentum(cfg.bn_momentum);
  const auto params = model.parameters();
  for (auto [name, p] : params) p.requires_grad_(true);
  AdamState<T> adam;
  History hist;
  std::vector<std::vector<T>> best_state;
  double best_map = -std::numeric_limits<double>::infinity();
  const double eta_min = cfg.lr0 * cfg.eta_min_ratio;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(cfg.epochs), cfg.lr0, eta_min);
    const auto order = train_set.order(seed, epoch);
    const Rng epoch_rng(splitmix64(seed) ^ splitmix64(0xa5a5a5a5ULL + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<data::Sample> augmented;
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = train_set.samples[order[k]];
        if (!cfg.augment_enabled) {
          augmented.push_back(s);
          continue;
        }
        // Each sample draws from its own stream, independent of batch layout.
        Rng rng = epoch_rng.split(static_cast<std::uint64_t>(k));
        std::vector<const data::Sample*> partners;
        if (train_set.size() >= 4)
          for (int p = 0; p < 3; ++p)
            partners.push_back(&train_set.samples[static_cast<std::size_t>(
                rng.randint(0, static_cast<std::int64_t>(train_set.size()) - 1))]);
        augmented.push_back(data::augment(s, partners, cfg.augment, rng));
      }
      std::vector<const data::Sample*> batch;
      for (const auto& s : augmented) batch.push_back(&s);
      const auto r = train_step(model, batch, adam, lr, cfg, params);
      if (!std::isfinite(r.total))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                    " (first sample " + augmented.front().id + ")");
      loss_sum += r.total;
      ++batches;
    }
    const auto report = evaluate_model(model, val_set, cfg);
    model.train(true);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::int64_t>(batches, 1)), report.precision,
                    report.recall, report.map50,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    hist.epochs.push_back(rec);
    if (rec.map50 > best_map + 1e-6 || hist.best_epoch < 0) {
      best_map = rec.map50;
      hist.best_epoch = epoch;
      best_state.clear();
      for (const auto& [name, t] : model.state()) best_state.emplace_back(t.data().begin(), t.data().end());
      if (!cfg.best_checkpoint.empty()) save_checkpoint(model, cfg.best_checkpoint);
    }
    if (on_epoch) on_epoch(rec);
    if (early_stop_check(hist.map_series(), cfg.patience)) {
      hist.stopped_early = epoch + 1 < cfg.epochs;
      break;
    }
  }
  if (cfg.restore_best && !best_state.empty()) {
    auto state = model.state();
    for (std::size_t k = 0; k < state.size(); ++k) std::copy(best_state[k].begin(), best_state[k].end(), state[k].second.ptr());
  }
  for (auto [name, p] : params) p.drop_grad();
  return hist;
}

}  // namespace vdet::train
