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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/data/image.hpp"
#include "vdet/data/kitti.hpp"
#include "vdet/rng.hpp"

namespace vdet::data {

struct Sample {
  Image image;
  std::vector<Annotation> annotations;
  std::string id;
  // Maps source-frame pixels to this sample's canvas (identity for synthetic data).
  LetterboxTransform letterbox;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  // Iteration order for one epoch: a Fisher-Yates shuffle keyed by
  // (seed, epoch), so any epoch can be replayed independently.
  std::vector<std::size_t> order(std::uint64_t seed, std::int64_t epoch) const {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 0x5eed)));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(i) - 1))]);
    return idx;
  }
};

// Splits off the last `count` samples as a held-out set.
inline std::pair<Dataset, Dataset> split_tail(const Dataset& all, std::size_t count) {
  count = std::min(count, all.size());
  Dataset head{all.class_names, {}}, tail{all.class_names, {}};
  const std::size_t cut = all.size() - count;
  head.samples.assign(all.samples.begin(), all.samples.begin() + static_cast<std::ptrdiff_t>(cut));
  tail.samples.assign(all.samples.begin() + static_cast<std::ptrdiff_t>(cut), all.samples.end());
  return {head, tail};
}

// ---------------------------------------------------------------------------
// Synthetic rectangles

struct SynthConfig {
  Index image_size = 64;
  Index min_objects = 1, max_objects = 5;
  Index min_side = 16;
  Index max_side = 0;  // 0: half the image side, at least 32
  double max_pair_iou = 0.3;
  // Largest share of either box that another box may overlap. Without it a
  // small rectangle can sit inside a large one and be painted over.
  double max_pair_cover = 0.3;
  Index placement_attempts = 200;
  // Centers of two objects never share a cell of this size, which keeps
  // every object assignable on the finest detection grid.
  Index distinct_cell = 8;
};

// Every channel is fully on or off. After colour jitter (gain 0.6-1.4, bias
// +-0.1) an on channel stays >= 0.38 and an off channel <= 0.1, so the class
// colour survives augmentation.
inline const std::array<std::array<float, 3>, 7>& synth_palette() {
  static const std::array<std::array<float, 3>, 7> p = {{{1.0f, 0.0f, 0.0f},
                                                         {0.0f, 1.0f, 0.0f},
                                                         {0.0f, 0.0f, 1.0f},
                                                         {1.0f, 1.0f, 0.0f},
                                                         {1.0f, 0.0f, 1.0f},
                                                         {0.0f, 1.0f, 1.0f},
                                                         {1.0f, 1.0f, 1.0f}}};
  return p;
}

inline double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.right, b.right) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

inline Sample synth_sample(Rng& rng, const std::vector<std::string>& class_names, const SynthConfig& cfg,
                           std::string id) {
  const Index n_classes = static_cast<Index>(class_names.size());
  const Index size = cfg.image_size;
  Sample s;
  s.id = std::move(id);
  s.image = Image({3, size, size});
  const float bg = static_cast<float>(rng.uniform(0.0, 0.35));
  for (Index c = 0; c < 3; ++c) {
    const float tint = bg + static_cast<float>(rng.uniform(-0.03, 0.03));
    std::fill_n(s.image.ptr() + c * size * size, size * size, std::clamp(tint, 0.0f, 1.0f));
  }
  const Index want = rng.randint(cfg.min_objects, cfg.max_objects);
  const Index max_side =
      std::min(cfg.max_side > 0 ? cfg.max_side : std::max<Index>(32, size / 2), size);
  for (Index attempt = 0; attempt < cfg.placement_attempts && static_cast<Index>(s.annotations.size()) < want;
       ++attempt) {
    const Index w = rng.randint(cfg.min_side, max_side), h = rng.randint(cfg.min_side, max_side);
    const Index x = rng.randint(0, size - w), y = rng.randint(0, size - h);
    const Box b{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + w), static_cast<double>(y + h)};
    bool ok = true;
    for (const auto& o : s.annotations) {
      const bool same_cell = static_cast<Index>(o.bbox.center_x()) / cfg.distinct_cell ==
                                 static_cast<Index>(b.center_x()) / cfg.distinct_cell &&
                             static_cast<Index>(o.bbox.center_y()) / cfg.distinct_cell ==
                                 static_cast<Index>(b.center_y()) / cfg.distinct_cell;
      const double iw = std::max(0.0, std::min(o.bbox.right, b.right) - std::max(o.bbox.left, b.left));
      const double ih = std::max(0.0, std::min(o.bbox.bottom, b.bottom) - std::max(o.bbox.top, b.top));
      const double cover = iw * ih / std::min(o.bbox.area(), b.area());
      if (box_iou(o.bbox, b) > cfg.max_pair_iou || cover > cfg.max_pair_cover || same_cell) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    Annotation a;
    a.class_index = rng.randint(0, n_classes - 1);
    a.class_name = class_names[static_cast<std::size_t>(a.class_index)];
    a.bbox = b;
    const auto& color = synth_palette()[static_cast<std::size_t>(a.class_index)];
    const float shade = static_cast<float>(rng.uniform(0.8, 1.0));
    for (Index c = 0; c < 3; ++c)
      for (Index yy = y; yy < y + h; ++yy)
        std::fill_n(s.image.ptr() + (c * size + yy) * size + x, w, color[static_cast<std::size_t>(c)] * shade);
    s.annotations.push_back(std::move(a));
  }
  return s;
}

// Solid backgrounds with 1-5 class-coloured rectangles; the class is the
// colour bucket and boxes are exact. Same seed, same bits.
inline Dataset synth_dataset(std::int64_t n_images, const std::vector<std::string>& class_names, std::uint64_t seed,
                             const SynthConfig& cfg = {}) {
  if (n_images < 1) throw ParameterError("synth_dataset: need at least one image");
  if (class_names.empty() || class_names.size() > synth_palette().size())
    throw ParameterError("synth_dataset: between 1 and 7 classes supported");
  if (cfg.min_side < 1 || cfg.min_side > cfg.image_size) throw ParameterError("synth_dataset: bad rectangle sides");
  Dataset ds{class_names, {}};
  ds.samples.reserve(static_cast<std::size_t>(n_images));
  for (std::int64_t i = 0; i < n_images; ++i) {
    Rng rng(splitmix64(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1)));
    char id[32];
    std::snprintf(id, sizeof id, "%06lld", static_cast<long long>(i));
    ds.samples.push_back(synth_sample(rng, class_names, cfg, id));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk datasets

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes images/<id>.ppm, labels/<id>.txt and manifest.txt under `dir`.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "labels");
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw Error("cannot write manifest in " + dir.string());
  for (const auto& s : ds.samples) {
    const std::string img = "images/" + s.id + ".ppm", lab = "labels/" + s.id + ".txt";
    write_ppm(s.image, (dir / img).string());
    std::ofstream label(dir / lab, std::ios::trunc);
    for (const auto& a : s.annotations) label << to_kitti_line(a) << '\n';
    manifest << img << '\t' << lab << '\n';
  }
}

// Reads a manifest of "image<TAB>label" lines (paths relative to the manifest)
// and letterboxes every frame to `target`.
inline Dataset load_manifest(const std::filesystem::path& manifest, const std::vector<std::string>& class_names,
                             Index target) {
  if (!std::filesystem::exists(manifest)) throw Error("manifest not found: " + manifest.string());
  const auto base = manifest.parent_path();
  std::istringstream lines(read_text_file(manifest));
  Dataset ds{class_names, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "manifest line lacks a tab separator");
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    Sample s;
    const auto img_path = resolve(line.substr(0, tab));
    s.id = img_path.stem().string();
    const Image raw = read_ppm(img_path.string());
    LetterboxTransform t;
    s.image = letterbox_image(raw, target, &t);
    s.letterbox = t;
    s.annotations = parse_kitti_labels(read_text_file(resolve(line.substr(tab + 1))), class_names);
    for (auto& a : s.annotations) {
      a.bbox = t.apply(a.bbox);
      a.bbox.left = std::clamp(a.bbox.left, 0.0, static_cast<double>(target));
      a.bbox.right = std::clamp(a.bbox.right, 0.0, static_cast<double>(target));
      a.bbox.top = std::clamp(a.bbox.top, 0.0, static_cast<double>(target));
      a.bbox.bottom = std::clamp(a.bbox.bottom, 0.0, static_cast<double>(target));
      a.source_fields.clear();
    }
    std::erase_if(s.annotations, [](const Annotation& a) { return !a.bbox.valid(); });
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace vdet::data
