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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/data/kitti.hpp"
#include "vdet/errors.hpp"

namespace vdet::eval {

// One "class conf left top right bottom" line per detection.
inline std::string format_detections(const std::vector<DetectionBox>& dets,
                                     const std::vector<std::string>& class_names) {
  std::string out;
  char buf[256];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof buf, "%s %.6f %.3f %.3f %.3f %.3f\n",
                  class_names.at(static_cast<std::size_t>(d.class_index)).c_str(), d.confidence, d.box.left,
                  d.box.top, d.box.right, d.box.bottom);
    out += buf;
  }
  return out;
}

inline std::vector<DetectionBox> parse_detections(const std::string& text,
                                                  const std::vector<std::string>& class_names) {
  std::vector<DetectionBox> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    DetectionBox d;
    if (!(ls >> d.confidence >> d.box.left >> d.box.top >> d.box.right >> d.box.bottom))
      throw ParseError(lineno, "expected 'class conf left top right bottom'");
    d.class_index = data::class_index_of(name, class_names);
    if (d.class_index < 0) throw ParseError(lineno, "unknown class '" + name + "'");
    out.push_back(d);
  }
  return out;
}

inline void write_detection_dump(const std::filesystem::path& dir, const std::string& id,
                                 const std::vector<DetectionBox>& dets, const std::vector<std::string>& class_names) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / (id + ".txt"), std::ios::trunc);
  if (!out) throw Error("cannot write detections for " + id);
  out << format_detections(dets, class_names);
}

}  // namespace vdet::eval
