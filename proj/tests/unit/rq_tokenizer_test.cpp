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

#include <cmath>

#include "dact/data_pipeline.hpp"
#include "dact/rq_tokenizer.hpp"
#include "gradient_checks.hpp"
#include "test_util.hpp"

namespace dact::rq {
namespace {

TokenizerConfig tiny_config() {
  TokenizerConfig c;
  c.semantic_dim = 6;
  c.hidden = {8};
  c.code_dim = 4;
  c.levels = 3;
  c.codes = 6;
  c.cf_dim = 4;
  return c;
}

ItemTable random_items(int n, int dim, Rng& rng) {
  std::vector<ItemId> ids;
  for (int i = 0; i < n; ++i) ids.push_back(i);
  return ItemTable(ids, gaussian_matrix(n, dim, 1.0, rng));
}

// Plain loops over the MLP: affine, ReLU between layers.
RowVector straight_line_mlp(const nn::Mlp& mlp, const RowVector& x) {
  std::vector<double> cur(x.data(), x.data() + x.size());
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    const auto& w = mlp.layers[k].weight.value;
    const auto& bias = mlp.layers[k].bias.value;
    std::vector<double> next(w.cols());
    for (Eigen::Index o = 0; o < w.cols(); ++o) {
      double s = bias(0, o);
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += cur[i] * w(i, o);
      next[o] = (k + 1 < mlp.layers.size()) ? std::max(0.0, s) : s;
    }
    cur = next;
  }
  return Eigen::Map<RowVector>(cur.data(), static_cast<Eigen::Index>(cur.size()));
}

TEST(EncodeTest, ZeroEncoderGivesZero) {
  Rng rng(1);
  Tokenizer tok(tiny_config(), rng);
  for (auto& l : tok.encoder.layers) {
    l.weight.value.setZero();
    l.bias.value.setZero();
  }
  EXPECT_EQ(tok.encode(RowVector::Random(6)), RowVector::Zero(4));
}

TEST(EncodeTest, MatchesStraightLineEvaluation) {
  Rng rng(2);
  Tokenizer tok(tiny_config(), rng);
  for (int k = 0; k < 10; ++k) {
    const RowVector z = gaussian_matrix(1, 6, 1.0, rng).row(0);
    EXPECT_TRUE(tok.encode(z).isApprox(straight_line_mlp(tok.encoder, z), 1e-12));
    EXPECT_EQ(tok.encode(z), tok.encode(z));
  }
  EXPECT_THROW(tok.encode(RowVector::Zero(5)), std::invalid_argument);
}

TEST(AssignLevelTest, EquidistantCodesGiveUniformAndLowestIndex) {
  CodebookStack cb;
  Matrix e(4, 2);
  e << 1, 0, -1, 0, 0, 1, 0, -1;
  cb.levels.emplace_back(e);
  const auto a = cb.assign_level(RowVector::Zero(2), 0);
  EXPECT_EQ(a.index, 0);
  for (int m = 0; m < 4; ++m) EXPECT_NEAR(a.probs[m], 0.25, 1e-12);
}

TEST(AssignLevelTest, ThreeCodeExample) {
  CodebookStack cb;
  Matrix e(3, 2);
  e << 0, 0, 1, 0, 0, 1;
  cb.levels.emplace_back(e);
  RowVector v(2);
  v << 0.9, 0.1;
  const auto a = cb.assign_level(v, 0);
  // Brute-force nearest neighbour.
  int best = 0;
  for (int m = 1; m < 3; ++m) {
    if ((v - e.row(m)).squaredNorm() < (v - e.row(best)).squaredNorm()) best = m;
  }
  EXPECT_EQ(a.index, best);
  EXPECT_EQ(a.index, 1);
  EXPECT_NEAR(a.next_residual[0], -0.1, 1e-12);
  EXPECT_NEAR(a.next_residual[1], 0.1, 1e-12);
  EXPECT_NEAR(a.probs.sum(), 1.0, 1e-12);
  const double z = std::exp(-0.82) + std::exp(-0.02) + std::exp(-1.62);
  EXPECT_NEAR(a.probs[1], std::exp(-0.02) / z, 1e-12);
}

TEST(AssignLevelTest, ArgmaxIsTemperatureInvariant) {
  Rng rng(3);
  CodebookStack cb;
  cb.levels.emplace_back(gaussian_matrix(16, 4, 1.0, rng));
  for (int k = 0; k < 50; ++k) {
    const RowVector v = gaussian_matrix(1, 4, 1.0, rng).row(0);
    cb.temperature = 0.1;
    const auto cold = cb.assign_level(v, 0);
    cb.temperature = 10.0;
    const auto hot = cb.assign_level(v, 0);
    EXPECT_EQ(cold.index, hot.index);
    Eigen::Index arg = 0;
    hot.probs.maxCoeff(&arg);
    EXPECT_EQ(arg, hot.index);
    for (const auto* p : {&cold.probs, &hot.probs}) {
      EXPECT_NEAR(p->sum(), 1.0, 1e-6);
      EXPECT_GE(p->minCoeff(), 0.0);
    }
  }
}

TEST(AssignLevelTest, Errors) {
  CodebookStack cb;
  cb.levels.emplace_back(Matrix::Zero(2, 2));
  RowVector bad(2);
  bad << 1.0, std::nan("");
  EXPECT_THROW(cb.assign_level(bad, 0), std::invalid_argument);
  EXPECT_THROW(cb.assign_level(RowVector::Zero(2), 1), std::invalid_argument);
  EXPECT_THROW(cb.distribution(RowVector::Zero(2), 0, 0.0), std::invalid_argument);
}

TEST(TokenizeTest, ResidualIdentityAndChain) {
  Rng rng(4);
  Tokenizer tok(tiny_config(), rng);
  for (int k = 0; k < 200; ++k) {
    const RowVector z = gaussian_matrix(1, 6, 1.0, rng).row(0);
    const auto t = tok.tokenize(z);
    ASSERT_EQ(t.residuals.size(), 4u);
    EXPECT_LT((t.quantized + t.residuals.back() - tok.encode(z)).cwiseAbs().maxCoeff(), 1e-5);
    for (int l = 0; l < 3; ++l) {
      const RowVector step = t.residuals[l] - tok.codebooks.levels[l].value.row(t.codes[l]);
      EXPECT_NEAR(step.norm(), t.residuals[l + 1].norm(), 1e-12);
    }
  }
}

TEST(TokenizeTest, CodesMatchExhaustiveSearch) {
  Rng rng(5);
  Tokenizer tok(tiny_config(), rng);
  for (auto& l : tok.codebooks.levels) l.value *= 4.0;
  const Matrix z = gaussian_matrix(40, 6, 1.0, rng);
  const auto batch = tok.codes_batch(z);
  for (int i = 0; i < 40; ++i) {
    RowVector v = tok.encode(z.row(i));
    std::vector<int> oracle;
    for (int l = 0; l < 3; ++l) {
      const Matrix& e = tok.codebooks.levels[l].value;
      int best = 0;
      for (int m = 1; m < e.rows(); ++m) {
        if ((v - e.row(m)).squaredNorm() < (v - e.row(best)).squaredNorm()) best = m;
      }
      oracle.push_back(best);
      v -= e.row(best);
    }
    EXPECT_EQ(tok.tokenize(z.row(i)).codes, oracle);
    EXPECT_EQ(batch[i], oracle);
  }
}

TEST(TokenizeTest, SingleLevelQuantizesToOneCode) {
  Rng rng(6);
  auto cfg = tiny_config();
  cfg.levels = 1;
  Tokenizer tok(cfg, rng);
  const auto t = tok.tokenize(gaussian_matrix(1, 6, 1.0, rng).row(0));
  EXPECT_EQ(t.quantized, tok.codebooks.levels[0].value.row(t.codes[0]));
}

TEST(LossesTest, ReconZeroForIdentityDecoderAndNonNegative) {
  // Encoder and decoder are linear identities on a 2-d space, one code
  // per point: reconstruction is exact.
  TokenizerConfig cfg;
  cfg.semantic_dim = 2;
  cfg.hidden = {};
  cfg.code_dim = 2;
  cfg.levels = 1;
  cfg.codes = 2;
  cfg.cf_dim = 2;
  Rng rng(7);
  Tokenizer tok(cfg, rng);
  tok.encoder.layers[0].weight.value = Matrix::Identity(2, 2);
  tok.encoder.layers[0].bias.value.setZero();
  tok.decoder.layers[0].weight.value = Matrix::Identity(2, 2);
  tok.decoder.layers[0].bias.value.setZero();
  tok.codebooks.levels[0].value << 1, 2, -3, 0.5;
  RowVector z(2);
  z << -3, 0.5;
  EXPECT_EQ(recon_loss(tok, z), 0.0);
  const auto t = tok.tokenize(z);
  EXPECT_EQ(rq_loss(t, tok.codebooks, 0.25), 0.0);

  Tokenizer random(tiny_config(), rng);
  for (int k = 0; k < 20; ++k) EXPECT_GE(recon_loss(random, gaussian_matrix(1, 6, 1.0, rng).row(0)), 0.0);
  EXPECT_THROW(rq_loss(t, tok.codebooks, -1.0), std::invalid_argument);
}

TEST(CfLossTest, SingleItemBatchIsZero) {
  Matrix q(1, 3), h(1, 3);
  q << 1, 2, 3;
  h << -1, 0, 2;
  EXPECT_EQ(cf_loss(q, h), 0.0);
}

TEST(CfLossTest, EqualSimilaritiesGiveLogB) {
  Matrix q = Matrix::Ones(4, 3);
  Matrix h(4, 3);
  h << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  EXPECT_NEAR(cf_loss(q, h), std::log(4.0), 1e-12);
}

TEST(CfLossTest, ThreeItemTermByTerm) {
  Rng rng(8);
  const Matrix q = gaussian_matrix(3, 4, 1.0, rng);
  const Matrix h = gaussian_matrix(3, 4, 1.0, rng);
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    double num = 0.0, den = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double sim = q.row(j).dot(h.row(i)) / (q.row(j).norm() * h.row(i).norm());
      den += std::exp(sim);
      if (j == i) num = std::exp(sim);
    }
    total += -std::log(num / den);
  }
  EXPECT_NEAR(cf_loss(q, h), total / 3.0, 1e-12);
  EXPECT_GE(cf_loss(q, h), 0.0);
}

TEST(CfLossTest, ZeroNormIsAnError) {
  Matrix q = Matrix::Ones(2, 2), h = Matrix::Ones(2, 2);
  h.row(1).setZero();
  EXPECT_THROW(cf_loss(q, h), std::invalid_argument);
}

// One suite per loss: 20 random 8-item instances each.
class GradientSuiteTest : public ::testing::TestWithParam<testing::GradLoss> {};

TEST_P(GradientSuiteTest, MatchesCentralDifferences) {
  const auto s = testing::run_gradient_check(GetParam(), 20, 1234);
  EXPECT_EQ(s.instances, 20);
  EXPECT_LT(s.max_rel_error, 1e-4);
  EXPECT_GT(s.min_grad_norm, 1e-8);
}

INSTANTIATE_TEST_SUITE_P(TokenizerLosses, GradientSuiteTest,
                         ::testing::Values(testing::GradLoss::kRecon, testing::GradLoss::kRq, testing::GradLoss::kCf,
                                           testing::GradLoss::kAnchor, testing::GradLoss::kGlobal),
                         [](const auto& info) { return std::string(testing::grad_loss_name(info.param)); });

TEST(StopGradientTest, RqStepMovesCodesAndLatentsTogether) {
  Rng rng(9);
  Tokenizer tok(tiny_config(), rng);
  const Matrix z = gaussian_matrix(16, 6, 1.0, rng);
  auto gap = [&](const Tokenizer& t) {
    BatchInputs in;
    in.semantic = &z;
    return TokenizerPass(t, in).losses().rq.sum();
  };
  const double before = gap(tok);
  for (bool move_codebooks : {true, false}) {
    Tokenizer t = tok;
    BatchInputs in;
    in.semantic = &z;
    auto params = t.params();
    nn::zero_grads(params);
    TokenizerPass pass(t, in);
    LossCoefficients c;
    c.rq = Vector::Ones(16);
    pass.backward(t, c);
    for (auto& p : params) {
      const bool is_codebook = p.name.rfind("codebook", 0) == 0;
      if (is_codebook == move_codebooks) p.param->value -= 1e-3 * p.param->grad;
    }
    EXPECT_LT(gap(t), before) << (move_codebooks ? "codebooks" : "encoder");
  }
}

TEST(StopGradientTest, CodebooksGetNothingFromCommitmentOrRecon) {
  Rng rng(10);
  Tokenizer tok(tiny_config(), rng);
  const Matrix z = gaussian_matrix(8, 6, 1.0, rng);
  BatchInputs in;
  in.semantic = &z;
  auto params = tok.params();
  nn::zero_grads(params);
  TokenizerPass pass(tok, in);
  LossCoefficients c;
  c.recon = Vector::Ones(8);
  pass.backward(tok, c);
  for (const auto& l : tok.codebooks.levels) EXPECT_EQ(l.grad.norm(), 0.0);
  EXPECT_GT(tok.encoder.layers[0].weight.grad.norm(), 0.0);
}

class PretrainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    data::DriftSpec s;
    s.n_items = 200;
    s.n_users = 40;
    corpus_ = data::generate_synthetic(s);
    for (ItemId i : corpus_.semantic.ids()) items_.push_back(i);
  }
  data::Corpus corpus_;
  std::vector<ItemId> items_;
};

TEST_F(PretrainTest, ZeroStepsLeavesStateUnchanged) {
  Rng rng(11);
  TokenizerConfig cfg;
  Tokenizer tok(cfg, rng);
  const Tokenizer before = tok;
  PretrainOptions o;
  o.steps = 0;
  o.lambda = 0.0;
  pretrain(tok, corpus_.semantic, nullptr, items_, o);
  const auto a = before.params();
  const auto b = std::as_const(tok).params();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].param->value, b[k].param->value) << a[k].name;
}

TEST_F(PretrainTest, ZeroLambdaIgnoresCfTable) {
  Rng rng(12);
  Tokenizer tok(TokenizerConfig{}, rng);
  PretrainOptions o;
  o.steps = 3;
  o.lambda = 0.0;
  ItemTable real(items_, gaussian_matrix(items_.size(), 32, 1.0, rng));
  ItemTable zeroed(items_, Matrix::Zero(items_.size(), 32));
  Tokenizer a = tok, b = tok, c = tok;
  pretrain(a, corpus_.semantic, &real, items_, o);
  pretrain(b, corpus_.semantic, &zeroed, items_, o);
  pretrain(c, corpus_.semantic, nullptr, items_, o);
  const auto pa = std::as_const(a).params();
  const auto pb = std::as_const(b).params();
  const auto pc = std::as_const(c).params();
  for (std::size_t k = 0; k < pa.size(); ++k) {
    EXPECT_EQ(pa[k].param->value, pb[k].param->value) << pa[k].name;
    EXPECT_EQ(pa[k].param->value, pc[k].param->value) << pa[k].name;
  }
  o.lambda = 0.02;
  EXPECT_THROW(pretrain(c, corpus_.semantic, nullptr, items_, o), std::invalid_argument);
}

TEST_F(PretrainTest, ReconHalvesAndCollisionsStayLow) {
  Rng rng(13);
  TokenizerConfig cfg;  // L=3, M=64, d_c=32
  Tokenizer tok(cfg, rng);
  ItemTable cf(items_, gaussian_matrix(items_.size(), 32, 1.0, rng));
  PretrainOptions o;  // 2000 steps, lambda 0.02
  o.seed = 5;
  const auto r = pretrain(tok, corpus_.semantic, &cf, items_, o);
  EXPECT_LE(r.final_recon, 0.5 * r.initial_recon);
  EXPECT_LT(r.final_loss, r.initial_loss);

  // 500 items for the collision bound.
  data::DriftSpec s;
  s.n_items = 500;
  s.n_users = 40;
  const auto big = data::generate_synthetic(s);
  std::vector<ItemId> all(big.semantic.ids());
  Tokenizer tok2(cfg, rng);
  o.lambda = 0.0;
  pretrain(tok2, big.semantic, nullptr, all, o);
  const auto ids = assign_identifiers(tok2, big.semantic, all);
  EXPECT_LT(collision_rate(ids), 0.10);
}

TEST(AssignIdentifiersTest, SuffixesInItemOrderAndUnique) {
  // Two items share every code; a third differs.
  TokenizerConfig cfg;
  cfg.semantic_dim = 2;
  cfg.hidden = {};
  cfg.code_dim = 2;
  cfg.levels = 1;
  cfg.codes = 2;
  cfg.cf_dim = 2;
  Rng rng(14);
  Tokenizer tok(cfg, rng);
  tok.encoder.layers[0].weight.value = Matrix::Identity(2, 2);
  tok.encoder.layers[0].bias.value.setZero();
  tok.codebooks.levels[0].value << 1, 0, -1, 0;
  Matrix z(3, 2);
  z << 0.9, 0, 1.1, 0.1, -1, 0;
  ItemTable sem({30, 10, 20}, z);
  const auto ids = assign_identifiers(tok, sem, {30, 10, 20});
  EXPECT_EQ(ids.at(10).dedup_suffix, 0);  // same path as 30, lower id first
  EXPECT_EQ(ids.at(30).dedup_suffix, 1);
  EXPECT_EQ(ids.at(20).dedup_suffix, 0);
  EXPECT_NEAR(collision_rate(ids), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(max_suffix(ids), 1);

  std::set<std::pair<std::vector<int>, int>> seen;
  for (const auto& [id, s] : ids) EXPECT_TRUE(seen.insert({s.codes, s.dedup_suffix}).second);
}

TEST(AssignIdentifiersTest, DistinctPathsAllSuffixZero) {
  Rng rng(15);
  Tokenizer tok(tiny_config(), rng);
  for (auto& l : tok.codebooks.levels) l.value *= 5.0;
  ItemTable sem({1, 2}, gaussian_matrix(2, 6, 1.0, rng));
  auto ids = assign_identifiers(tok, sem, {1, 2});
  if (ids.at(1).codes != ids.at(2).codes) {
    EXPECT_EQ(ids.at(1).dedup_suffix, 0);
    EXPECT_EQ(ids.at(2).dedup_suffix, 0);
  }
}

TEST(IdentifierTsvTest, RoundTripAndErrors) {
  IdentifierMap ids;
  ids[5] = {5, {1, 2, 3}, 0};
  ids[9] = {9, {1, 2, 3}, 1};
  const auto back = identifiers_from_tsv(identifiers_to_tsv(ids));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back.at(9).same_identifier(ids.at(9)));
  EXPECT_EQ(identifiers_to_tsv(back), identifiers_to_tsv(ids));
  EXPECT_THROW(identifiers_from_tsv("1\t2\n"), Error);
  EXPECT_THROW(identifiers_from_tsv("1\t2\t3\n4\tx\t5\n"), Error);
}

TEST(CheckpointTest, SaveLoadIsStableAfterOneRoundTrip) {
  Rng rng(16);
  auto cfg = tiny_config();
  cfg.cf_dim = 3;
  Tokenizer tok(cfg, rng);
  testing::TempDir dir;
  tok.save(dir / "a");
  const auto once = Tokenizer::load(dir / "a");
  once.save(dir / "b");
  const auto twice = Tokenizer::load(dir / "b");
  ASSERT_TRUE(twice.cf_projection.has_value());
  const auto p1 = once.params();
  const auto p2 = twice.params();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t k = 0; k < p1.size(); ++k) EXPECT_EQ(p1[k].param->value, p2[k].param->value);
  const RowVector z = gaussian_matrix(1, 6, 1.0, rng).row(0);
  EXPECT_TRUE(once.encode(z).isApprox(tok.encode(z), 1e-5));
}

}  // namespace
}  // namespace dact::rq
