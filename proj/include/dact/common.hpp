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

#ifndef DACT_COMMON_HPP_
#define DACT_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace dact {

using ItemId = std::int64_t;
using UserId = std::int64_t;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Rng = std::mt19937_64;

// Raised for runtime failures: I/O, divergence, malformed input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Derives an independent stream seed from a base seed and a tag, so that
// components seeded from the same run seed do not share RNG streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

// Rounds every entry to the nearest float32, matching what a checkpoint
// round trip produces.
void round_to_float32(Matrix& m);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

}  // namespace dact

#endif  // DACT_COMMON_HPP_
