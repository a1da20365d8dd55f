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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dact/metrics.hpp"

namespace dact::metrics {
namespace {

// Pairwise count, ties as one half.
double brute_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

TEST(RankingAucTest, MatchesPairwiseCount) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(30);
    std::vector<bool> pos(30);
    for (int i = 0; i < 30; ++i) {
      s[i] = level(rng);  // plenty of ties
      pos[i] = (rng() % 3) == 0;
    }
    pos[0] = true;
    pos[1] = false;
    EXPECT_NEAR(ranking_auc(s, pos), brute_auc(s, pos), 1e-12);
  }
}

TEST(RankingAucTest, DegenerateCases) {
  const std::vector<double> s = {0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(ranking_auc(s, {true, false, false}), 0.5);
  EXPECT_THROW(ranking_auc(s, {false, false, false}), std::invalid_argument);
  EXPECT_THROW(ranking_auc(s, {true, true, true}), std::invalid_argument);
  EXPECT_DOUBLE_EQ(ranking_auc(std::vector<double>{3, 2, 1}, {true, false, false}), 1.0);
}

TEST(SpearmanTest, PerfectAndTied) {
  const std::vector<double> x = {1, 2, 3, 4};
  EXPECT_NEAR(spearman(x, std::vector<double>{10, 20, 30, 40}), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, std::vector<double>{4, 3, 2, 1}), -1.0, 1e-12);
  // Ranks of y: 1, 2.5, 2.5, 4; Pearson of ranks by hand.
  const std::vector<double> y = {1, 5, 5, 9};
  const double rx[] = {1, 2, 3, 4}, ry[] = {1, 2.5, 2.5, 4};
  double mx = 2.5, my = 2.5, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, y), sxy / std::sqrt(sxx * syy), 1e-12);
}

TEST(HitNdcgTest, ClosedForms) {
  EXPECT_EQ(hit_at(1, 5), 1.0);
  EXPECT_EQ(ndcg_at(1, 5), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at(3, 10), 0.5);
  EXPECT_EQ(hit_at(11, 10), 0.0);
  EXPECT_EQ(ndcg_at(11, 10), 0.0);
  EXPECT_EQ(hit_at(std::nullopt, 10), 0.0);
  for (int r = 1; r <= 20; ++r) {
    EXPECT_LE(ndcg_at(r, 10), hit_at(r, 10));
    EXPECT_LE(hit_at(r, 5), hit_at(r, 10));
    EXPECT_LE(ndcg_at(r, 5), ndcg_at(r, 10));
  }
}

TEST(MeanStdTest, SampleStd) {
  const std::vector<double> v = {1, 2, 3, 4};
  const auto ms = mean_std(v);
  EXPECT_DOUBLE_EQ(ms.mean, 2.5);
  EXPECT_NEAR(ms.stddev, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(mean_std(std::vector<double>{7}).stddev, 0.0);
}

}  // namespace
}  // namespace dact::metrics
