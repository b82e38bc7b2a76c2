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
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/errors.hpp"
#include "vdet/tensor.hpp"

namespace vdet::data {

// Images are planar float tensors [3, H, W] with values in [0, 1].
using Image = Tensor<float>;

inline Index image_height(const Image& im) { return im.dim(1); }
inline Index image_width(const Image& im) { return im.dim(2); }

// Binary PPM (P6), 8-bit only.
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image: " + path);
  auto token = [&]() {
    std::string tok;
    while (tok.empty()) {
      int ch = in.get();
      if (ch == EOF) throw FormatError("truncated PPM header in " + path);
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(ch)) {
        tok += static_cast<char>(ch);
        while (in.peek() != EOF && !std::isspace(in.peek())) tok += static_cast<char>(in.get());
      }
    }
    return tok;
  };
  if (token() != "P6") throw FormatError("not a binary PPM (P6): " + path);
  const Index w = std::stoll(token()), h = std::stoll(token()), maxval = std::stoll(token());
  if (w < 1 || h < 1 || maxval != 255) throw FormatError("unsupported PPM geometry or depth in " + path);
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated PPM pixel data in " + path);
  Image im({3, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) im[(c * h + y) * w + x] = raw[static_cast<std::size_t>((y * w + x) * 3 + c)] / 255.0f;
  return im;
}

inline void write_ppm(const Image& im, const std::string& path) {
  const Index h = image_height(im), w = image_width(im);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write image: " + path);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * 3));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(im[(c * h + y) * w + x], 0.0f, 1.0f);
        raw[static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// Maps original pixel coordinates into the padded square canvas.
struct LetterboxTransform {
  double scale = 1;
  Index pad_x = 0, pad_y = 0;

  Box apply(const Box& b) const {
    return {b.left * scale + pad_x, b.top * scale + pad_y, b.right * scale + pad_x, b.bottom * scale + pad_y};
  }
  Box invert(const Box& b) const {
    return {(b.left - pad_x) / scale, (b.top - pad_y) / scale, (b.right - pad_x) / scale, (b.bottom - pad_y) / scale};
  }
};

inline LetterboxTransform letterbox_transform(Index h, Index w, Index target) {
  LetterboxTransform t;
  t.scale = static_cast<double>(target) / static_cast<double>(std::max(h, w));
  const Index nw = std::lround(static_cast<double>(w) * t.scale), nh = std::lround(static_cast<double>(h) * t.scale);
  t.pad_x = (target - nw) / 2;
  t.pad_y = (target - nh) / 2;
  return t;
}

// Bilinear resize with half-pixel centers, edge clamped.
inline Image resize_bilinear(const Image& im, Index out_h, Index out_w) {
  const Index h = image_height(im), w = image_width(im);
  Image out({3, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (Index y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - static_cast<double>(y0);
    for (Index x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - static_cast<double>(x0);
      for (Index c = 0; c < 3; ++c) {
        const float* p = im.ptr() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - ax) + p[y0 * w + x1] * ax;
        const double bot = p[y1 * w + x0] * (1 - ax) + p[y1 * w + x1] * ax;
        out[(c * out_h + y) * out_w + x] = static_cast<float>(top * (1 - ay) + bot * ay);
      }
    }
  }
  return out;
}

// Aspect-preserving resize so the longer side equals `target`, then zero
// padding to a square canvas.
inline Image letterbox_image(const Image& im, Index target, LetterboxTransform* transform = nullptr) {
  const Index h = image_height(im), w = image_width(im);
  const auto t = letterbox_transform(h, w, target);
  if (transform) *transform = t;
  const Index nw = std::lround(static_cast<double>(w) * t.scale), nh = std::lround(static_cast<double>(h) * t.scale);
  const Image resized = (nw == w && nh == h) ? im.clone() : resize_bilinear(im, nh, nw);
  Image out = Image::zeros({3, target, target});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < nh; ++y)
      std::copy_n(resized.ptr() + (c * nh + y) * nw, nw, out.ptr() + (c * target + y + t.pad_y) * target + t.pad_x);
  return out;
}

inline Image normalize(const Image& im, const std::array<double, 3>& mean, const std::array<double, 3>& stdev) {
  for (double s : stdev)
    if (!(s > 0)) throw ParameterError("normalize: standard deviation must be positive");
  Image out = im.clone();
  const Index plane = image_height(im) * image_width(im);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < plane; ++i)
      out[c * plane + i] = static_cast<float>((im[c * plane + i] - mean[c]) / stdev[c]);
  return out;
}

inline Image denormalize(const Image& im, const std::array<double, 3>& mean, const std::array<double, 3>& stdev) {
  Image out = im.clone();
  const Index plane = image_height(im) * image_width(im);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < plane; ++i) out[c * plane + i] = static_cast<float>(im[c * plane + i] * stdev[c] + mean[c]);
  return out;
}

}  // namespace vdet::data
