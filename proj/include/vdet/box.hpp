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
#include <cstdint>
#include <string>

namespace vdet {

// Axis-aligned box in pixels, (left, top) inclusive corner to (right, bottom).
struct Box {
  double left = 0, top = 0, right = 0, bottom = 0;

  double width() const { return right - left; }
  double height() const { return bottom - top; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (left + right); }
  double center_y() const { return 0.5 * (top + bottom); }
  bool valid() const { return left < right && top < bottom; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct DetectionBox {
  std::int64_t class_index = 0;
  double confidence = 0;
  Box box;
};

// Ground truth as seen by matching: `ignore` marks DontCare and heavily
// occluded or truncated regions that neither reward nor penalize.
struct GroundTruth {
  std::int64_t class_index = 0;
  Box box;
  bool ignore = false;
};

}  // namespace vdet
