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

#include <array>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/errors.hpp"

namespace vdet::data {

struct Annotation {
  std::string class_name;
  std::int64_t class_index = -1;  // -1 for DontCare and classes outside the model's list
  double truncated = 0;
  int occluded = 0;
  Box bbox;
  bool dont_care = false;
  // Verbatim tokens of the consumed fields (type, truncated, occluded,
  // left, top, right, bottom); empty when the annotation was not parsed.
  std::vector<std::string> source_fields;

  // Heavily truncated or fully occluded objects and DontCare regions are not
  // training targets; evaluation treats them as ignore regions.
  bool ignore_region() const { return dont_care || truncated > 0.8 || occluded == 3; }
  bool trainable() const { return !ignore_region() && class_index >= 0; }
};

inline std::int64_t class_index_of(const std::string& name, const std::vector<std::string>& class_names) {
  for (std::size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return static_cast<std::int64_t>(i);
  return -1;
}

namespace detail {

inline double parse_real(std::string_view tok, std::size_t line, const char* field) {
  double v = 0;
  const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || end != tok.data() + tok.size())
    throw ParseError(line, std::string("field '") + field + "' is not a number: " + std::string(tok));
  return v;
}

}  // namespace detail

// One object per nonempty line, at least 15 whitespace-separated fields.
inline std::vector<Annotation> parse_kitti_labels(const std::string& text,
                                                  const std::vector<std::string>& class_names = {}) {
  std::vector<Annotation> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 15)
      throw ParseError(lineno, "expected at least 15 fields, found " + std::to_string(tok.size()));
    Annotation a;
    a.class_name = tok[0];
    a.truncated = detail::parse_real(tok[1], lineno, "truncated");
    const double occ = detail::parse_real(tok[2], lineno, "occluded");
    if (occ != 0 && occ != 1 && occ != 2 && occ != 3 && !(occ == -1 && a.class_name == "DontCare"))
      throw ParseError(lineno, "occluded must be one of 0,1,2,3: " + tok[2]);
    a.occluded = static_cast<int>(occ);
    a.bbox = {detail::parse_real(tok[4], lineno, "left"), detail::parse_real(tok[5], lineno, "top"),
              detail::parse_real(tok[6], lineno, "right"), detail::parse_real(tok[7], lineno, "bottom")};
    if (!a.bbox.valid()) throw ParseError(lineno, "degenerate box (need left < right and top < bottom)");
    a.dont_care = a.class_name == "DontCare";
    a.class_index = a.dont_care ? -1 : class_index_of(a.class_name, class_names);
    a.source_fields = {tok[0], tok[1], tok[2], tok[4], tok[5], tok[6], tok[7]};
    out.push_back(std::move(a));
  }
  return out;
}

// The consumed fields, space separated. Parsed annotations echo their source
// tokens verbatim; constructed ones are formatted from their values.
inline std::string consumed_fields(const Annotation& a) {
  if (!a.source_fields.empty()) {
    std::string s;
    for (std::size_t i = 0; i < a.source_fields.size(); ++i) s += (i ? " " : "") + a.source_fields[i];
    return s;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %.2f %d %.2f %.2f %.2f %.2f", a.class_name.c_str(), a.truncated, a.occluded,
                a.bbox.left, a.bbox.top, a.bbox.right, a.bbox.bottom);
  return buf;
}

// A full 15-field KITTI line; 3D fields are written as the devkit's
// placeholders since this engine only consumes the 2D box.
inline std::string to_kitti_line(const Annotation& a) {
  std::istringstream fs(consumed_fields(a));
  std::array<std::string, 7> f;
  for (auto& s : f) fs >> s;
  return f[0] + ' ' + f[1] + ' ' + f[2] + " -10 " + f[3] + ' ' + f[4] + ' ' + f[5] + ' ' + f[6] +
         " -1 -1 -1 -1000 -1000 -1000 -10";
}

}  // namespace vdet::data
