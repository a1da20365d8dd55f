// Copyright 2026 The DACT Authors.
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

#include "dact/array_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace dact {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "dact-arrays-v1";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

}  // namespace

const Matrix& ArrayBundle::at(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw Error("checkpoint is missing array '" + name + "'");
  return it->second;
}

void write_f32(const fs::path& path, const Matrix& m) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    std::uint32_t w;
    std::memcpy(&w, &f, sizeof(w));
    words[static_cast<std::size_t>(i)] = to_little_endian(w);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) throw Error("write failed for " + path.string());
}

Matrix read_f32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint32_t> words(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t))) {
    throw Error("truncated array file " + path.string());
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const std::uint32_t w = to_little_endian(words[static_cast<std::size_t>(i)]);
    float f;
    std::memcpy(&f, &w, sizeof(f));
    m.data()[i] = f;
  }
  return m;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ArrayBundle::save(const fs::path& dir) const {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["meta"] = meta;
  manifest["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : arrays) {
    const std::string file = name + ".f32";
    write_f32(dir / file, m);
    manifest["arrays"].push_back({{"name", name}, {"file", file}, {"shape", {m.rows(), m.cols()}}});
  }
  // The manifest goes last: its presence marks a complete checkpoint.
  write_text_atomic(dir / kManifest, manifest.dump(2) + "\n");
}

bool ArrayBundle::exists(const fs::path& dir) { return fs::exists(dir / kManifest); }

ArrayBundle ArrayBundle::load(const fs::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / kManifest));
  if (manifest.value("format", "") != kFormat) {
    throw Error("unrecognized checkpoint format in " + dir.string());
  }
  ArrayBundle bundle;
  bundle.meta = manifest.at("meta");
  for (const auto& entry : manifest.at("arrays")) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    bundle.arrays[entry.at("name").get<std::string>()] =
        read_f32(dir / entry.at("file").get<std::string>(), rows, cols);
  }
  return bundle;
}

}  // namespace dact
