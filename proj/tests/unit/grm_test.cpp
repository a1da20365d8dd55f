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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "dact/grm.hpp"
#include "test_util.hpp"

namespace dact::grm {
namespace {

rq::TokenSequence seq(ItemId id, std::vector<int> codes, int suffix = 0) {
  rq::TokenSequence s;
  s.item_id = id;
  s.codes = std::move(codes);
  s.dedup_suffix = suffix;
  return s;
}

GrmConfig tiny_config() {
  GrmConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_dim = 12;
  c.max_items = 3;
  c.vocab.levels = 2;
  c.vocab.codes = 3;
  c.vocab.max_suffix = 2;
  return c;
}

// Five items on a 2-level, 3-code grid; items 4 and 5 collide on codes.
rq::IdentifierMap five_items() {
  rq::IdentifierMap ids;
  ids[1] = seq(1, {0, 0});
  ids[2] = seq(2, {0, 1});
  ids[3] = seq(3, {1, 2});
  ids[4] = seq(4, {2, 0}, 0);
  ids[5] = seq(5, {2, 0}, 1);
  return ids;
}

TEST(TokenVocab, LayoutIsDisjointAcrossLevels) {
  TokenVocab v;
  v.levels = 3;
  v.codes = 4;
  v.max_suffix = 5;
  EXPECT_EQ(v.size(), 3 * 4 + 5 + 3);
  std::set<int> all;
  for (int l = 0; l < 3; ++l)
    for (int c = 0; c < 4; ++c) all.insert(v.code_token(l, c));
  for (int s = 0; s < 5; ++s) all.insert(v.suffix_token(s));
  all.insert(v.bos());
  all.insert(v.eos());
  all.insert(v.pad());
  EXPECT_EQ(static_cast<int>(all.size()), v.size());
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), v.size() - 1);
  EXPECT_EQ(v.tokens_per_item(), 4);
}

TEST(TokenVocab, ItemTokensAndErrors) {
  const auto c = tiny_config();
  EXPECT_EQ(c.vocab.item_tokens(seq(9, {2, 1}, 1)),
            (std::vector<int>{c.vocab.code_token(0, 2), c.vocab.code_token(1, 1), c.vocab.suffix_token(1)}));
  EXPECT_THROW(c.vocab.item_tokens(seq(9, {2})), std::invalid_argument);
  EXPECT_THROW(c.vocab.item_tokens(seq(9, {3, 0})), std::invalid_argument);
  EXPECT_THROW(c.vocab.item_tokens(seq(9, {0, 0}, 2)), Error);
}

TEST(GrmConfig, ValidateAndJson) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  const auto back = GrmConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EncodeHistory, EmptyAndTwoItems) {
  TokenVocab v;
  v.levels = 3;
  v.codes = 4;
  v.max_suffix = 2;
  rq::IdentifierMap ids;
  ids[7] = seq(7, {0, 1, 2});
  ids[8] = seq(8, {3, 3, 3}, 1);
  EXPECT_EQ(encode_history(ids, {}, 5, v), (std::vector<int>{v.bos(), v.eos()}));
  const auto t = encode_history(ids, {7, 8}, 5, v);
  ASSERT_EQ(t.size(), 10u);
  EXPECT_EQ(t.front(), v.bos());
  EXPECT_EQ(t.back(), v.eos());
  EXPECT_EQ(t[1], v.code_token(0, 0));
  EXPECT_EQ(t[4], v.suffix_token(0));
  EXPECT_EQ(t[8], v.suffix_token(1));
  EXPECT_THROW(encode_history(ids, {7, 99}, 5, v), std::invalid_argument);
}

TEST(EncodeHistory, KeepsMostRecentItems) {
  const auto c = tiny_config();
  const auto ids = five_items();
  const auto t = encode_history(ids, {1, 2, 3, 4, 5}, 2, c.vocab);
  EXPECT_EQ(t, encode_history(ids, {4, 5}, 2, c.vocab));
}

TEST(IdentifierTrie, DepthLookupRoundTrip) {
  const auto c = tiny_config();
  const auto ids = five_items();
  const IdentifierTrie trie(ids, c.vocab);
  EXPECT_EQ(trie.depth(), c.vocab.levels + 1);
  EXPECT_EQ(trie.size(), 5u);
  for (const auto& [id, s] : ids) EXPECT_EQ(trie.lookup(c.vocab.item_tokens(s)), id);
  EXPECT_FALSE(trie.lookup(c.vocab.item_tokens(seq(0, {1, 1}))).has_value());
  EXPECT_EQ(trie.children(IdentifierTrie::kRoot).size(), 3u);

  // Decoding a whole encoded history recovers the item sequence.
  const std::vector<ItemId> hist{3, 5, 1};
  const auto t = encode_history(ids, hist, 3, c.vocab);
  std::vector<ItemId> back;
  for (std::size_t i = 1; i + 1 < t.size(); i += 3)
    back.push_back(*trie.lookup(std::vector<int>(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i) + 3)));
  EXPECT_EQ(back, hist);
}

TEST(IdentifierTrie, SharedPathRejected) {
  const auto c = tiny_config();
  rq::IdentifierMap ids;
  ids[1] = seq(1, {0, 0});
  ids[2] = seq(2, {0, 0});
  EXPECT_THROW(IdentifierTrie(ids, c.vocab), Error);
}

TEST(MakeExample, InputIsHistoryPlusTargetPrefix) {
  const auto c = tiny_config();
  const auto ids = five_items();
  data::Window w;
  w.context = {1, 2};
  w.target = 3;
  const auto ex = make_example(ids, w, c);
  const auto tgt = c.vocab.item_tokens(ids.at(3));
  EXPECT_EQ(ex.target, tgt);
  auto expect = encode_history(ids, {1, 2}, c.max_items, c.vocab);
  expect.insert(expect.end(), tgt.begin(), tgt.end() - 1);
  EXPECT_EQ(ex.input, expect);
  w.target = 42;
  EXPECT_THROW(make_example(ids, w, c), std::invalid_argument);
}

TEST(Grm, CachedLogitsMatchFullPass) {
  const auto c = tiny_config();
  Rng rng(3);
  Grm m(c, rng);
  // Perturb so the comparison is not between near-zero logits.
  for (auto& p : m.params()) p.param->value += gaussian_matrix(p.param->value.rows(), p.param->value.cols(), 0.3, rng);
  const auto ids = five_items();
  const auto hist = encode_history(ids, {2, 4}, c.max_items, c.vocab);
  const auto cache = m.prefix_cache(hist);
  for (const std::vector<int>& suffix :
       {std::vector<int>{}, std::vector<int>{c.vocab.code_token(0, 2)},
        std::vector<int>{c.vocab.code_token(0, 2), c.vocab.code_token(1, 0)}}) {
    auto full = hist;
    full.insert(full.end(), suffix.begin(), suffix.end());
    EXPECT_LT((m.next_logits(cache, suffix) - m.next_logits(full)).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_THROW(m.prefix_cache({}), std::invalid_argument);
}

TEST(Grm, BatchLossGradientMatchesFiniteDifferences) {
  const auto c = tiny_config();
  Rng rng(5);
  Grm m(c, rng);
  for (auto& p : m.params()) p.param->value += gaussian_matrix(p.param->value.rows(), p.param->value.cols(), 0.2, rng);
  const auto ids = five_items();
  std::vector<Example> batch;
  for (auto [ctx, tgt] : std::vector<std::pair<std::vector<ItemId>, ItemId>>{{{1, 2}, 3}, {{4}, 5}, {{}, 1}}) {
    data::Window w;
    w.context = ctx;
    w.target = tgt;
    batch.push_back(make_example(ids, w, c));
  }
  const auto ps = m.params();
  nn::zero_grads(ps);
  m.batch_loss(batch, true);
  const auto analytic = testing::snapshot_grads(ps);
  const auto numeric = testing::numeric_grads(ps, [&] { return m.batch_loss(batch, false); });
  EXPECT_GT(testing::norm_of(analytic), 1e-3);
  EXPECT_LT(testing::relative_error(analytic, numeric), 1e-6);
}

TEST(Grm, InitialLossNearUniform) {
  GrmConfig c = tiny_config();
  c.d_model = 16;
  c.vocab.codes = 16;
  c.vocab.max_suffix = 4;
  Rng rng(1);
  Grm m(c, rng);
  rq::IdentifierMap ids;
  for (int i = 0; i < 40; ++i) ids[i] = seq(i, {i % 16, (i * 7) % 16}, i / 16 % 4);
  std::vector<Example> ex;
  for (int i = 0; i < 40; ++i) {
    data::Window w;
    w.context = {(i + 1) % 40, (i + 2) % 40};
    w.target = i;
    ex.push_back(make_example(ids, w, c));
  }
  const double uniform = std::log(static_cast<double>(c.vocab.size()));
  EXPECT_NEAR(mean_nll(m, ex), uniform, 0.05 * uniform);
}

std::vector<data::Window> one_pair() {
  data::Window w;
  w.context = {1, 2};
  w.target = 3;
  return {w};
}

TEST(TrainGrm, ZeroEpochsLeavesModelUntouched) {
  const auto c = tiny_config();
  Rng rng(2);
  Grm m(c, rng);
  const auto before = m.to_bundle();
  TrainOptions o;
  o.epochs = 0;
  const auto r = train_grm(m, one_pair(), five_items(), o);
  EXPECT_EQ(r.examples, 1u);
  EXPECT_EQ(r.initial_loss, r.final_loss);
  for (const auto& p : m.params()) EXPECT_EQ(p.param->value, before.at("grm." + p.name));
}

TEST(TrainGrm, MemorizesSinglePair) {
  const auto c = tiny_config();
  Rng rng(2);
  Grm m(c, rng);
  TrainOptions o;
  o.epochs = 300;
  o.lr = 1e-2;
  const auto ids = five_items();
  const auto r = train_grm(m, one_pair(), ids, o);
  EXPECT_LT(r.final_loss, 0.05);
  EXPECT_LT(r.final_loss, r.initial_loss);
  const IdentifierTrie trie(ids, c.vocab);
  const auto recs = recommend(m, trie, encode_history(ids, {1, 2}, c.max_items, c.vocab), 1, 3);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].item_id, 3);
}

TEST(TrainGrm, EmptyWindowsIsNoOp) {
  const auto c = tiny_config();
  Rng rng(2);
  Grm m(c, rng);
  const auto r = train_grm(m, {}, five_items(), TrainOptions{});
  EXPECT_EQ(r.examples, 0u);
}

class BeamTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(11);
    model_ = Grm(config_, rng);
    for (auto& p : model_.params())
      p.param->value += gaussian_matrix(p.param->value.rows(), p.param->value.cols(), 0.5, rng);
  }
  GrmConfig config_ = tiny_config();
  rq::IdentifierMap ids_ = five_items();
  Grm model_;
};

TEST_F(BeamTest, WideBeamEqualsExhaustiveRanking) {
  const IdentifierTrie trie(ids_, config_.vocab);
  for (const std::vector<ItemId>& h : {std::vector<ItemId>{}, std::vector<ItemId>{1}, std::vector<ItemId>{3, 4, 2}}) {
    const auto hist = encode_history(ids_, h, config_.max_items, config_.vocab);
    const auto all = exhaustive_ranking(model_, trie, hist);
    ASSERT_EQ(all.size(), 5u);
    const auto beam = recommend(model_, trie, hist, 5, 20);
    ASSERT_EQ(beam.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(beam[i].item_id, all[i].item_id);
      EXPECT_NEAR(beam[i].score, all[i].score, 1e-9);
    }
    // Scores are log-probabilities of a distribution over the five leaves.
    double z = 0.0;
    for (const auto& r : all) z += std::exp(r.score);
    EXPECT_NEAR(z, 1.0, 1e-9);
  }
}

TEST_F(BeamTest, NarrowBeamGivesValidSortedLeaves) {
  const IdentifierTrie trie(ids_, config_.vocab);
  const auto hist = encode_history(ids_, {2, 5}, config_.max_items, config_.vocab);
  for (int width : {1, 2, 3}) {
    const auto recs = recommend(model_, trie, hist, 1, width);
    ASSERT_FALSE(recs.empty());
    EXPECT_TRUE(ids_.count(recs[0].item_id));
  }
  const auto recs = recommend(model_, trie, hist, 3, 3);
  std::set<ItemId> seen;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_TRUE(ids_.count(recs[i].item_id));
    EXPECT_TRUE(seen.insert(recs[i].item_id).second);
    EXPECT_LE(recs[i].score, 0.0);
    if (i > 0) EXPECT_LE(recs[i].score, recs[i - 1].score);
  }
  EXPECT_THROW(recommend(model_, trie, hist, 4, 3), std::invalid_argument);
}

TEST_F(BeamTest, SingleItemTrie) {
  rq::IdentifierMap one;
  one[3] = ids_.at(3);
  const IdentifierTrie trie(one, config_.vocab);
  const auto recs = recommend(model_, trie, encode_history(one, {3}, 3, config_.vocab), 1, 5);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].item_id, 3);
  EXPECT_NEAR(recs[0].score, 0.0, 1e-12);
}

TEST_F(BeamTest, EmptyTrieRejected) {
  const IdentifierTrie trie(rq::IdentifierMap{}, config_.vocab);
  EXPECT_TRUE(trie.empty());
  EXPECT_THROW(recommend(model_, trie, {config_.vocab.bos(), config_.vocab.eos()}, 1, 1), std::invalid_argument);
}

TEST_F(BeamTest, EvaluateUsesExhaustiveRanks) {
  std::vector<data::Window> ws;
  for (ItemId t = 1; t <= 5; ++t) {
    data::Window w;
    w.context = {t % 5 + 1};
    w.target = t;
    ws.push_back(w);
  }
  const IdentifierTrie trie(ids_, config_.vocab);
  const auto r = evaluate(model_, ids_, ws, {1, 5}, 20, {1, 2});
  ASSERT_EQ(r.ranks.size(), 5u);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const auto all = exhaustive_ranking(model_, trie, encode_history(ids_, ws[i].context, 3, config_.vocab));
    int rank = 0;
    for (std::size_t j = 0; j < all.size(); ++j)
      if (all[j].item_id == ws[i].target) rank = static_cast<int>(j) + 1;
    EXPECT_EQ(r.ranks[i], rank);
  }
  EXPECT_EQ(r.users, 5u);
  EXPECT_EQ(r.warm_users, 2u);
  EXPECT_EQ(r.cold_users, 3u);
  EXPECT_DOUBLE_EQ(r.metrics.at("H@5"), 1.0);
  EXPECT_THROW(evaluate(model_, ids_, ws, {}, 20, {}), std::invalid_argument);
}

TEST(MetricsFromRanks, ClosedForms) {
  const auto m = metrics_from_ranks({3}, {1, 5, 10});
  EXPECT_DOUBLE_EQ(m.at("H@1"), 0.0);
  EXPECT_DOUBLE_EQ(m.at("H@10"), 1.0);
  EXPECT_DOUBLE_EQ(m.at("N@10"), 0.5);
  const auto two = metrics_from_ranks({1, std::nullopt}, {5});
  EXPECT_DOUBLE_EQ(two.at("H@5"), 0.5);
  EXPECT_DOUBLE_EQ(two.at("N@5"), 0.5);
  const auto none = metrics_from_ranks({}, {5});
  EXPECT_DOUBLE_EQ(none.at("H@5"), 0.0);
}

TEST(MetricsFromRanks, OrderingProperties) {
  Rng rng(4);
  std::uniform_int_distribution<int> r(0, 30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::optional<int>> ranks;
    for (int u = 0; u < 20; ++u) {
      const int x = r(rng);
      ranks.push_back(x == 0 ? std::nullopt : std::optional<int>(x));
    }
    const std::vector<int> ks{1, 5, 10, 20};
    const auto m = metrics_from_ranks(ranks, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto k = std::to_string(ks[i]);
      EXPECT_LE(m.at("N@" + k), m.at("H@" + k) + 1e-12);
      if (i > 0) {
        const auto kp = std::to_string(ks[i - 1]);
        EXPECT_GE(m.at("H@" + k), m.at("H@" + kp));
        EXPECT_GE(m.at("N@" + k), m.at("N@" + kp));
      }
    }
  }
}

TEST(Grm, SaveLoadRoundTrip) {
  const auto c = tiny_config();
  Rng rng(8);
  Grm m(c, rng);
  m.period_index = 2;
  testing::TempDir dir;
  m.save(dir / "grm");
  const Grm back = Grm::load(dir / "grm");
  EXPECT_EQ(back.config().to_json(), c.to_json());
  EXPECT_EQ(back.period_index, 2);
  const auto hist = encode_history(five_items(), {1, 3}, c.max_items, c.vocab);
  EXPECT_LT((back.next_logits(hist) - m.next_logits(hist)).cwiseAbs().maxCoeff(), 1e-5);
}

}  // namespace
}  // namespace dact::grm
