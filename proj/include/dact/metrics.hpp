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

#ifndef DACT_METRICS_HPP_
#define DACT_METRICS_HPP_

#include <optional>
#include <span>
#include <vector>

namespace dact::metrics {

// Mann-Whitney ranking AUC of scores against binary labels; tied scores
// contribute one half, which equals the expectation under random
// tie-breaking. Throws std::invalid_argument when either class is empty.
double ranking_auc(std::span<const double> scores, const std::vector<bool>& positive);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

// rank is 1-based; nullopt means the target was not retrieved.
double hit_at(std::optional<int> rank, int k);
double ndcg_at(std::optional<int> rank, int k);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for n < 2
};
MeanStd mean_std(std::span<const double> values);

}  // namespace dact::metrics

#endif  // DACT_METRICS_HPP_
