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

// On-disk checkpoint layout shared by every component: a directory holding
// manifest.json (shapes plus free-form metadata) and one flat little-endian
// float32 file per named array, row-major.

#ifndef DACT_ARRAY_STORE_HPP_
#define DACT_ARRAY_STORE_HPP_

#include <filesystem>
#include <map>
#include <string>

#include "dact/common.hpp"
#include "json.hpp"

namespace dact {

struct ArrayBundle {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> arrays;

  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return arrays.count(name) > 0; }

  void save(const std::filesystem::path& dir) const;
  static ArrayBundle load(const std::filesystem::path& dir);
  static bool exists(const std::filesystem::path& dir);
};

void write_f32(const std::filesystem::path& path, const Matrix& m);
Matrix read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

// Writes via a temporary file and rename, so readers never observe a
// partially written file.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace dact

#endif  // DACT_ARRAY_STORE_HPP_
