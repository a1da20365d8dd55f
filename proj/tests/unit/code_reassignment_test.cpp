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

#include "dact/code_reassignment.hpp"
#include "dact/rq_tokenizer.hpp"
#include "test_util.hpp"

namespace dact::reassign {
namespace {

rq::TokenizerConfig small_config() {
  rq::TokenizerConfig c;
  c.semantic_dim = 6;
  c.hidden = {8};
  c.code_dim = 4;
  c.levels = 3;
  c.codes = 4;
  c.cf_dim = 4;
  return c;
}

struct Drifted {
  rq::Tokenizer prev, next;
  ItemTable semantic;
  std::vector<ItemId> items;
  rq::IdentifierMap prev_ids;

  Drifted(std::uint64_t seed, double noise, int n = 300) {
    Rng rng(seed);
    prev = rq::Tokenizer(small_config(), rng);
    for (auto& l : prev.codebooks.levels) l.value *= 4.0;
    next = prev;
    for (auto& p : next.params()) {
      p.param->value += gaussian_matrix(p.param->value.rows(), p.param->value.cols(), noise, rng);
    }
    for (int i = 0; i < n; ++i) items.push_back(i);
    semantic = ItemTable(items, gaussian_matrix(n, 6, 1.0, rng));
    prev_ids = rq::assign_identifiers(prev, semantic, items);
  }
};

bool unique_identifiers(const rq::IdentifierMap& ids) {
  std::set<std::pair<std::vector<int>, int>> seen;
  for (const auto& [id, s] : ids) {
    if (!seen.insert({s.codes, s.dedup_suffix}).second) return false;
  }
  return true;
}

TEST(ReassignTest, UnchangedStateChangesNothing) {
  Drifted s(1, 0.0);
  const auto r = reassign(s.prev, s.prev_ids, s.semantic, s.items);
  EXPECT_EQ(r.report.overall_change_rate, 0.0);
  for (double x : r.report.layer_change_rate) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(rq::identifiers_to_tsv(r.identifiers), rq::identifiers_to_tsv(s.prev_ids));
}

TEST(ReassignTest, StructuralLawAndConditionalStability) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Drifted s(seed, 0.15);
    const auto r = reassign(s.next, s.prev_ids, s.semantic, s.items);
    const auto& rep = r.report;
    ASSERT_EQ(rep.layer_change_rate.size(), 3u);
    EXPECT_EQ(rep.overall_change_rate, rep.layer_change_rate[0]);
    EXPECT_GT(rep.layer_change_rate[0], 0.0) << "perturbation too small to test anything";
    for (double x : rep.layer_change_rate) {
      EXPECT_LE(x, rep.layer_change_rate[0]);
      EXPECT_GE(x, 0.0);
    }
    for (const auto& [id, old] : s.prev_ids) {
      const auto& now = r.identifiers.at(id);
      if (now.codes[0] == old.codes[0]) EXPECT_TRUE(now.same_identifier(old)) << id;
    }
    EXPECT_TRUE(unique_identifiers(r.identifiers));
    EXPECT_EQ(rep.compared_items, s.items.size());
  }
}

TEST(ReassignTest, Idempotent) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Drifted s(seed, 0.2);
    const auto once = reassign(s.next, s.prev_ids, s.semantic, s.items);
    const auto twice = reassign(s.next, once.identifiers, s.semantic, s.items);
    EXPECT_EQ(twice.report.overall_change_rate, 0.0);
    EXPECT_EQ(rq::identifiers_to_tsv(twice.identifiers), rq::identifiers_to_tsv(once.identifiers));
  }
}

TEST(ReassignTest, NoMoreChangeThanFullRetokenization) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Drifted s(seed, 0.15);
    const auto relaxed = reassign(s.next, s.prev_ids, s.semantic, s.items);
    const auto full = compare_identifiers(s.prev_ids, rq::assign_identifiers(s.next, s.semantic, s.items));
    EXPECT_GE(full.overall_change_rate, relaxed.report.overall_change_rate);
  }
}

// Two-level identity tokenizer on the plane.
rq::Tokenizer plane_tokenizer() {
  rq::TokenizerConfig c;
  c.semantic_dim = 2;
  c.hidden = {};
  c.code_dim = 2;
  c.levels = 2;
  c.codes = 2;
  c.cf_dim = 2;
  Rng rng(0);
  rq::Tokenizer t(c, rng);
  t.encoder.layers[0].weight.value = Matrix::Identity(2, 2);
  t.encoder.layers[0].bias.value.setZero();
  t.codebooks.levels[0].value << 1, 0, -1, 0;
  t.codebooks.levels[1].value << 0, 0.2, 0, -0.2;
  return t;
}

TEST(ReassignTest, VoronoiCrossingRecomputesDeeperLevels) {
  rq::Tokenizer prev = plane_tokenizer();
  Matrix z(2, 2);
  z << 0.2, 0.3,   // will cross to the left cell
      0.9, -0.3;   // stays right
  const ItemTable sem({1, 2}, z);
  const auto prev_ids = rq::assign_identifiers(prev, sem, {1, 2});
  ASSERT_EQ(prev_ids.at(1).codes, (std::vector<int>{0, 0}));
  ASSERT_EQ(prev_ids.at(2).codes, (std::vector<int>{0, 1}));

  // Shift latents left by 0.5 and swap the level-2 codes: item 1 crosses,
  // item 2 would get a new level-2 code under a fresh tokenize but keeps
  // its old one.
  rq::Tokenizer next = prev;
  next.encoder.layers[0].bias.value << -0.5, 0.0;
  next.codebooks.levels[1].value << 0, -0.2, 0, 0.2;
  const auto r = reassign(next, prev_ids, sem, {1, 2});
  const auto fresh = next.tokenize(z.row(0));
  EXPECT_EQ(fresh.codes[0], 1);
  EXPECT_EQ(r.identifiers.at(1).codes, fresh.codes);
  EXPECT_NE(next.tokenize(z.row(1)).codes, prev_ids.at(2).codes);
  EXPECT_TRUE(r.identifiers.at(2).same_identifier(prev_ids.at(2)));
  EXPECT_DOUBLE_EQ(r.report.layer_change_rate[0], 0.5);
  EXPECT_DOUBLE_EQ(r.report.overall_change_rate, 0.5);
  EXPECT_EQ(r.report.changed_items, (std::vector<ItemId>{1}));
}

TEST(ReassignTest, ChangedItemTakesNextFreeSuffix) {
  rq::Tokenizer tok = plane_tokenizer();
  Matrix z(2, 2);
  z << -0.9, 0.3,  // item 5: path (1, 0) unchanged
      0.9, 0.3;    // item 3: path (0, 0), will move onto item 5's path
  const ItemTable sem({5, 3}, z);
  const auto prev_ids = rq::assign_identifiers(tok, sem, {3, 5});
  ASSERT_EQ(prev_ids.at(5).codes, (std::vector<int>{1, 0}));
  rq::Tokenizer next = tok;
  next.encoder.layers[0].weight.value << -1, 0, 0, 1;  // mirror x
  next.encoder.layers[0].bias.value << -1.8, 0;          // item 5 keeps its latent
  const auto r = reassign(next, prev_ids, sem, {3, 5});
  EXPECT_TRUE(r.identifiers.at(5).same_identifier(prev_ids.at(5)));
  EXPECT_EQ(r.identifiers.at(3).codes, prev_ids.at(5).codes);
  EXPECT_EQ(r.identifiers.at(3).dedup_suffix, 1);
  EXPECT_TRUE(unique_identifiers(r.identifiers));
}

TEST(ReassignTest, NewItemsAreFullyTokenized) {
  Drifted s(3, 0.1, 50);
  rq::IdentifierMap partial = s.prev_ids;
  for (ItemId id = 40; id < 50; ++id) partial.erase(id);
  const auto r = reassign(s.next, partial, s.semantic, s.items);
  EXPECT_EQ(r.report.new_items, 10u);
  EXPECT_EQ(r.report.compared_items, 40u);
  for (ItemId id = 40; id < 50; ++id) {
    EXPECT_EQ(r.identifiers.at(id).codes, s.next.tokenize(s.semantic.row(id)).codes);
  }
}

TEST(ReassignTest, ItemWithoutIdentifierOrEmbeddingIsAnError) {
  Drifted s(4, 0.1, 10);
  std::vector<ItemId> items = s.items;
  items.push_back(777);
  EXPECT_THROW(reassign(s.next, s.prev_ids, s.semantic, items), std::invalid_argument);
}

TEST(CompareIdentifiersTest, CountsValueChangesPerLevel) {
  rq::IdentifierMap a, b;
  a[1] = {1, {0, 1, 2}, 0};
  a[2] = {2, {0, 1, 2}, 1};
  a[3] = {3, {3, 3, 3}, 0};
  b[1] = {1, {0, 1, 2}, 0};   // same
  b[2] = {2, {0, 1, 2}, 0};   // suffix only
  b[3] = {3, {4, 3, 0}, 0};   // levels 1 and 3
  b[9] = {9, {1, 1, 1}, 0};   // new
  const auto r = compare_identifiers(a, b);
  EXPECT_EQ(r.compared_items, 3u);
  EXPECT_EQ(r.new_items, 1u);
  EXPECT_DOUBLE_EQ(r.layer_change_rate[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.layer_change_rate[1], 0.0);
  EXPECT_DOUBLE_EQ(r.layer_change_rate[2], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.overall_change_rate, 2.0 / 3.0);
  EXPECT_EQ(r.changed_items, (std::vector<ItemId>{2, 3}));
  const auto j = r.to_json();
  EXPECT_EQ(j.at("compared_items"), 3);
}

}  // namespace
}  // namespace dact::reassign
