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

#ifndef DACT_TESTS_TEST_UTIL_HPP_
#define DACT_TESTS_TEST_UTIL_HPP_

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "dact/common.hpp"
#include "dact/nn.hpp"

namespace dact::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dact_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::vector<Matrix> snapshot_grads(const std::vector<nn::NamedParam>& ps) {
  std::vector<Matrix> out;
  for (const auto& p : ps) out.push_back(p.param->grad);
  return out;
}

// Central differences of f over every entry of every listed parameter.
inline std::vector<Matrix> numeric_grads(const std::vector<nn::NamedParam>& ps, const std::function<double()>& f,
                                         double h = 1e-5) {
  std::vector<Matrix> out;
  for (const auto& p : ps) {
    Matrix& v = p.param->value;
    Matrix g(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double keep = v.data()[i];
      v.data()[i] = keep + h;
      const double up = f();
      v.data()[i] = keep - h;
      const double down = f();
      v.data()[i] = keep;
      g.data()[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// |a - n| / (|a| + |n|) over the concatenated gradient vectors.
inline double relative_error(const std::vector<Matrix>& a, const std::vector<Matrix>& n) {
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - n[k]).squaredNorm();
    na += a[k].squaredNorm();
    nn_ += n[k].squaredNorm();
  }
  const double denom = std::sqrt(na) + std::sqrt(nn_);
  if (denom < 1e-14) return 0.0;
  return std::sqrt(diff) / denom;
}

inline double norm_of(const std::vector<Matrix>& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return std::sqrt(s);
}

}  // namespace dact::testing

#endif  // DACT_TESTS_TEST_UTIL_HPP_
