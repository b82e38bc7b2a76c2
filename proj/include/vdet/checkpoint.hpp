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

// Checkpoint file layout (little-endian):
//
//   "VDET" | u16 version (1) | u64 metadata length | metadata text | payload
//
// The metadata text is line-oriented: `dtype`, `config.*` entries describing
// the ModelConfig, a payload checksum, then one `tensor` line per entry with
// name, dtype, shape, byte offset and byte size. The payload holds the raw
// parameter and batch-norm buffer data in registry order.

#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vdet/model.hpp"

namespace vdet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'V', 'D', 'E', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(1, sep) : std::string()) + parts[i];
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string serialize_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "config.class_names " << join(c.class_names, ',') << '\n'
     << "config.width_multiple " << format_double(c.width_multiple) << '\n'
     << "config.depth_multiple " << format_double(c.depth_multiple) << '\n'
     << "config.use_ghost " << c.use_ghost << '\n'
     << "config.use_cbam " << c.use_cbam << '\n'
     << "config.use_dcn " << c.use_dcn << '\n'
     << "config.anchors " << c.anchors << '\n'
     << "config.input_size " << c.input_size << '\n';
  return os.str();
}

}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  const auto entries = model.state();
  std::string payload;
  std::ostringstream tensors;
  for (const auto& [name, t] : entries) {
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(T);
    tensors << "tensor " << name << ' ' << dtype_name(dtype_of<T>()) << ' ';
    for (int d = 0; d < t.rank(); ++d) tensors << (d ? "," : "") << t.dim(d);
    tensors << ' ' << payload.size() << ' ' << bytes << '\n';
    payload.append(reinterpret_cast<const char*>(t.ptr()), bytes);
  }
  std::ostringstream meta;
  meta << "dtype " << dtype_name(dtype_of<T>()) << '\n'
       << detail::serialize_config(model.config()) << "checksum " << std::hex
       << fnv1a64(payload.data(), payload.size()) << std::dec << '\n'
       << tensors.str();
  const std::string text = meta.str();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  const std::uint16_t version = kCheckpointVersion;
  const std::uint64_t meta_len = text.size();
  out.write(kCheckpointMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed writing checkpoint: " + path);
}

// Reads a checkpoint into a freshly built model. Nothing is returned unless
// every entry is present, well-formed and matches the checksum.
template <class T>
std::unique_ptr<Model<T>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = 4 + sizeof(std::uint16_t) + sizeof(std::uint64_t);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint (bad magic): " + path);
  if (bytes.size() < header) throw IntegrityError("truncated checkpoint header: " + path);
  std::uint16_t version;
  std::uint64_t meta_len;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&meta_len, bytes.data() + 6, sizeof meta_len);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  if (meta_len > bytes.size() - header) throw IntegrityError("truncated checkpoint metadata: " + path);
  const std::string text = bytes.substr(header, meta_len);
  const std::size_t payload_start = header + meta_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  struct Entry {
    std::string dtype;
    Shape shape;
    std::size_t offset = 0, size = 0;
  };
  std::map<std::string, std::string> kv;
  std::map<std::string, Entry> entries;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "tensor") {
      std::string name, dims;
      Entry e;
      if (!(ls >> name >> e.dtype >> dims >> e.offset >> e.size))
        throw FormatError("malformed tensor entry in checkpoint: " + line);
      for (const auto& d : detail::split(dims, ',')) e.shape.push_back(std::stoll(d));
      entries[name] = e;
    } else {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      kv[key] = rest;
    }
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("checkpoint metadata lacks " + k);
    return it->second;
  };

  ModelConfig cfg;
  cfg.class_names = detail::split(need("config.class_names"), ',');
  cfg.width_multiple = std::stod(need("config.width_multiple"));
  cfg.depth_multiple = std::stod(need("config.depth_multiple"));
  cfg.use_ghost = need("config.use_ghost") == "1";
  cfg.use_cbam = need("config.use_cbam") == "1";
  cfg.use_dcn = need("config.use_dcn") == "1";
  cfg.anchors = std::stoll(need("config.anchors"));
  cfg.input_size = std::stoll(need("config.input_size"));
  const std::string dtype = need("dtype");

  if (std::stoull(need("checksum"), nullptr, 16) != fnv1a64(bytes.data() + payload_start, payload_size))
    throw IntegrityError("checkpoint payload checksum mismatch (truncated or corrupted): " + path);

  auto model = std::make_unique<Model<T>>(cfg, 0);
  auto state = model->state();
  if (state.size() != entries.size())
    throw FormatError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                      std::to_string(state.size()));
  for (auto& [name, t] : state) {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("checkpoint lacks tensor " + name);
    const Entry& e = it->second;
    if (e.shape != t.shape()) throw FormatError("shape mismatch for " + name);
    const std::size_t elem = e.dtype == "float32" ? 4 : e.dtype == "float64" ? 8 : 0;
    if (elem == 0) throw FormatError("unknown dtype " + e.dtype);
    if (e.size != elem * static_cast<std::size_t>(t.numel()) || e.offset + e.size > payload_size)
      throw IntegrityError("tensor " + name + " exceeds checkpoint payload");
    const char* src = bytes.data() + payload_start + e.offset;
    for (Index i = 0; i < t.numel(); ++i) {
      if (elem == 4) {
        float v;
        std::memcpy(&v, src + i * 4, 4);
        t[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, src + i * 8, 8);
        t[i] = static_cast<T>(v);
      }
    }
  }
  (void)dtype;
  return model;
}

}  // namespace vdet
