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
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/errors.hpp"

namespace vdet::eval {

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::min(1.0, inter / uni) : 0.0;
}

// Total order used for ranking detections: confidence descending, then left
// ascending; the remaining fields only break exact ties.
inline bool ranks_before(const DetectionBox& a, const DetectionBox& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.box.left != b.box.left) return a.box.left < b.box.left;
  if (a.box.top != b.box.top) return a.box.top < b.box.top;
  if (a.box.right != b.box.right) return a.box.right < b.box.right;
  if (a.box.bottom != b.box.bottom) return a.box.bottom < b.box.bottom;
  return a.class_index < b.class_index;
}

// Greedy per-class suppression. Survivors are returned in rank order.
inline std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold = 0.45) {
  std::stable_sort(boxes.begin(), boxes.end(), ranks_before);
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<DetectionBox> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(boxes[i]);
    for (std::size_t j = i + 1; j < boxes.size(); ++j)
      if (!suppressed[j] && boxes[j].class_index == boxes[i].class_index &&
          iou(boxes[i].box, boxes[j].box) >= iou_threshold)
        suppressed[j] = 1;
  }
  return kept;
}

struct MatchCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

enum class MatchLabel { true_positive, false_positive, ignored };

struct MatchResult {
  std::vector<DetectionBox> detections;  // rank order
  std::vector<MatchLabel> labels;        // parallel to detections
  std::vector<MatchCounts> per_class;
  std::vector<std::int64_t> gt_per_class;  // non-ignored ground truths
};

// Greedy matching of one image's detections. Each detection, in rank order,
// claims the highest-IoU unmatched ground truth of its class at IoU >= the
// threshold; otherwise it is ignored when it overlaps an ignore region at the
// threshold, and a false positive when it does not.
inline MatchResult match_detections(std::vector<DetectionBox> dets, const std::vector<GroundTruth>& gts,
                                    std::int64_t num_classes, double iou_threshold = 0.5) {
  std::stable_sort(dets.begin(), dets.end(), ranks_before);
  MatchResult r;
  r.per_class.resize(static_cast<std::size_t>(num_classes));
  r.gt_per_class.assign(static_cast<std::size_t>(num_classes), 0);
  for (const auto& g : gts)
    if (!g.ignore && g.class_index >= 0 && g.class_index < num_classes) ++r.gt_per_class[g.class_index];
  std::vector<char> taken(gts.size(), 0);
  for (const auto& d : dets) {
    if (d.class_index < 0 || d.class_index >= num_classes)
      throw ParameterError("detection class index out of range: " + std::to_string(d.class_index));
    double best = -1;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].ignore || gts[j].class_index != d.class_index) continue;
      const double v = iou(d.box, gts[j].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_j = j;
      }
    }
    MatchLabel label = MatchLabel::false_positive;
    if (best_j < gts.size()) {
      taken[best_j] = 1;
      label = MatchLabel::true_positive;
    } else {
      for (const auto& g : gts)
        if (g.ignore && iou(d.box, g.box) >= iou_threshold) {
          label = MatchLabel::ignored;
          break;
        }
    }
    auto& c = r.per_class[static_cast<std::size_t>(d.class_index)];
    if (label == MatchLabel::true_positive) ++c.tp;
    if (label == MatchLabel::false_positive) ++c.fp;
    r.detections.push_back(d);
    r.labels.push_back(label);
  }
  for (std::size_t k = 0; k < r.per_class.size(); ++k) r.per_class[k].fn = r.gt_per_class[k] - r.per_class[k].tp;
  return r;
}

struct PrecisionRecall {
  double precision = 0, recall = 0;
};

inline PrecisionRecall precision_recall(const MatchCounts& c) {
  PrecisionRecall pr;
  if (c.tp + c.fp > 0) pr.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) pr.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

inline double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// True when a reported F1 disagrees with the harmonic mean of its own P and R.
inline bool f1_mismatch(double p, double r, double reported_f1, double tolerance = 0.01) {
  return std::abs(f1(p, r) - reported_f1) > tolerance;
}

inline double relative_change(double base, double proposed) {
  return base != 0 ? (proposed - base) / base : 0.0;
}

struct ScoredDetection {
  double confidence = 0;
  bool true_positive = false;
};

// Area under the monotone precision envelope over recall, with one PR point
// per distinct confidence (tied detections enter together). nullopt when the
// class has no ground truth.
inline std::optional<double> average_precision(std::vector<ScoredDetection> dets, std::int64_t n_gt) {
  if (n_gt <= 0) return std::nullopt;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredDetection& a, const ScoredDetection& b) { return a.confidence > b.confidence; });
  std::vector<double> rec, prec;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < dets.size();) {
    std::size_t j = i;
    for (; j < dets.size() && dets[j].confidence == dets[i].confidence; ++j) (dets[j].true_positive ? tp : fp)++;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> ap;  // per class at the matching IoU
  std::vector<std::int64_t> gt_count;
  double map50 = 0;
  double precision = 0, recall = 0, f1 = 0;
  MatchCounts counts;  // at the confidence threshold, summed over classes
  double iou_threshold = 0.5, conf_threshold = 0.25;
  // confusion[true][pred]; index C is background (missed ground truth in the
  // background column, unmatched detections in the background row).
  std::vector<std::vector<std::int64_t>> confusion;
};

// Confusion pairing for one image at a fixed confidence: each detection, in
// rank order, pairs with the unclaimed non-ignored ground truth of highest
// IoU (any class) at the threshold.
inline void accumulate_confusion(const std::vector<DetectionBox>& dets, const std::vector<GroundTruth>& gts,
                                 std::int64_t num_classes, double iou_threshold,
                                 std::vector<std::vector<std::int64_t>>& m) {
  std::vector<char> taken(gts.size(), 0);
  const std::size_t bg = static_cast<std::size_t>(num_classes);
  for (const auto& d : dets) {
    double best = -1;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].ignore || gts[j].class_index < 0) continue;
      const double v = iou(d.box, gts[j].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j < gts.size()) {
      taken[best_j] = 1;
      ++m[static_cast<std::size_t>(gts[best_j].class_index)][static_cast<std::size_t>(d.class_index)];
      continue;
    }
    bool in_ignore = false;
    for (const auto& g : gts) in_ignore = in_ignore || (g.ignore && iou(d.box, g.box) >= iou_threshold);
    if (!in_ignore) ++m[bg][static_cast<std::size_t>(d.class_index)];
  }
  for (std::size_t j = 0; j < gts.size(); ++j)
    if (!taken[j] && !gts[j].ignore && gts[j].class_index >= 0) ++m[static_cast<std::size_t>(gts[j].class_index)][bg];
}

// Dataset-level evaluation. AP uses every detection; precision, recall, F1
// and the confusion matrix use detections at or above conf_threshold.
inline EvalReport map_at(const std::vector<std::vector<DetectionBox>>& dets,
                         const std::vector<std::vector<GroundTruth>>& gts, const std::vector<std::string>& class_names,
                         double iou_threshold = 0.5, double conf_threshold = 0.25) {
  if (dets.size() != gts.size()) throw ShapeError("map_at: detection and ground-truth image counts differ");
  const auto nc = static_cast<std::int64_t>(class_names.size());
  EvalReport rep;
  rep.class_names = class_names;
  rep.iou_threshold = iou_threshold;
  rep.conf_threshold = conf_threshold;
  rep.gt_count.assign(static_cast<std::size_t>(nc), 0);
  rep.confusion.assign(static_cast<std::size_t>(nc + 1), std::vector<std::int64_t>(static_cast<std::size_t>(nc + 1), 0));
  std::vector<std::vector<ScoredDetection>> scored(static_cast<std::size_t>(nc));
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto m = match_detections(dets[i], gts[i], nc, iou_threshold);
    std::vector<DetectionBox> confident;
    for (std::size_t k = 0; k < m.detections.size(); ++k) {
      const auto& d = m.detections[k];
      const auto label = m.labels[k];
      if (label != MatchLabel::ignored)
        scored[static_cast<std::size_t>(d.class_index)].push_back({d.confidence, label == MatchLabel::true_positive});
      if (d.confidence >= conf_threshold) {
        confident.push_back(d);
        if (label == MatchLabel::true_positive) ++rep.counts.tp;
        if (label == MatchLabel::false_positive) ++rep.counts.fp;
      }
    }
    for (std::size_t k = 0; k < m.gt_per_class.size(); ++k) rep.gt_count[k] += m.gt_per_class[k];
    accumulate_confusion(confident, gts[i], nc, iou_threshold, rep.confusion);
  }
  std::int64_t total_gt = 0;
  for (auto g : rep.gt_count) total_gt += g;
  rep.counts.fn = total_gt - rep.counts.tp;
  double sum = 0;
  int defined = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    rep.ap.push_back(average_precision(scored[k], rep.gt_count[k]));
    if (rep.ap.back()) {
      sum += *rep.ap.back();
      ++defined;
    }
  }
  rep.map50 = defined ? sum / defined : 0.0;
  const auto pr = precision_recall(rep.counts);
  rep.precision = pr.precision;
  rep.recall = pr.recall;
  rep.f1 = f1(pr.precision, pr.recall);
  return rep;
}

namespace detail {
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string f4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
}  // namespace detail

// Human-readable tables followed by a machine-readable key=value block.
inline void write_report(std::ostream& os, const EvalReport& r) {
  os << "# detection evaluation\n";
  os << "# iou_threshold " << detail::f4(r.iou_threshold) << ", conf_threshold " << detail::f4(r.conf_threshold)
     << "\n\n";
  os << "class\tgt\tap50\n";
  for (std::size_t k = 0; k < r.class_names.size(); ++k)
    os << r.class_names[k] << '\t' << r.gt_count[k] << '\t' << (r.ap[k] ? detail::f4(*r.ap[k]) : "n/a") << '\n';
  os << "\nprecision\trecall\tf1\tmap50\n"
     << detail::f4(r.precision) << '\t' << detail::f4(r.recall) << '\t' << detail::f4(r.f1) << '\t'
     << detail::f4(r.map50) << "\n\n";
  os << "# confusion matrix: rows = true class, columns = predicted class\ntrue\\pred";
  for (const auto& n : r.class_names) os << '\t' << n;
  os << "\tbackground\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << (i < r.class_names.size() ? r.class_names[i] : "background");
    for (auto v : r.confusion[i]) os << '\t' << v;
    os << '\n';
  }
  os << "\n[metrics]\n";
  os << "precision=" << detail::g17(r.precision) << '\n'
     << "recall=" << detail::g17(r.recall) << '\n'
     << "f1=" << detail::g17(r.f1) << '\n'
     << "f1_consistent=" << (f1_mismatch(r.precision, r.recall, r.f1) ? "false" : "true") << '\n'
     << "map50=" << detail::g17(r.map50) << '\n'
     << "tp=" << r.counts.tp << "\nfp=" << r.counts.fp << "\nfn=" << r.counts.fn << '\n';
  for (std::size_t k = 0; k < r.class_names.size(); ++k)
    os << "ap50." << r.class_names[k] << '=' << (r.ap[k] ? detail::g17(*r.ap[k]) : "nan") << '\n';
}

inline std::string report_string(const EvalReport& r) {
  std::ostringstream os;
  write_report(os, r);
  return os.str();
}

// Parses the key=value block of a written report.
inline std::vector<std::pair<std::string, std::string>> parse_report_metrics(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  bool in_block = false;
  while (std::getline(is, line)) {
    if (line == "[metrics]") {
      in_block = true;
      continue;
    }
    if (!in_block) continue;
    const auto eq = line.find('=');
    if (eq != std::string::npos) out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

}  // namespace vdet::eval
