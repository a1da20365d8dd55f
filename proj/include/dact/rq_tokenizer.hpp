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

// Residual-quantized item tokenizer: MLP encoder, L residual codebooks,
// MLP decoder, and the reconstruction / quantization / collaborative losses
// with hand-written gradients.

#ifndef DACT_RQ_TOKENIZER_HPP_
#define DACT_RQ_TOKENIZER_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dact/array_store.hpp"
#include "dact/common.hpp"
#include "dact/item_table.hpp"
#include "dact/nn.hpp"
#include "json.hpp"

namespace dact::rq {

struct TokenizerConfig {
  int semantic_dim = 64;
  std::vector<int> hidden = {128, 64};
  int code_dim = 32;
  int levels = 3;
  int codes = 64;
  int cf_dim = 32;           // a learned projection is added when this differs from code_dim
  double temperature = 1.0;  // assignment temperature

  void validate() const;
  nlohmann::json to_json() const;
  static TokenizerConfig from_json(const nlohmann::json& j);
};

struct LevelAssignment {
  int index = 0;
  RowVector probs;
  RowVector next_residual;
};

struct CodebookStack {
  std::vector<nn::Param> levels;  // each codes x code_dim
  double temperature = 1.0;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int num_codes() const { return static_cast<int>(levels.front().value.rows()); }
  int dim() const { return static_cast<int>(levels.front().value.cols()); }

  // level is 0-based. Ties in the argmax go to the lowest index.
  LevelAssignment assign_level(const RowVector& v, int level) const;
  // Assignment distribution at an explicit temperature.
  RowVector distribution(const RowVector& v, int level, double temperature) const;
};

struct Tokenization {
  std::vector<int> codes;
  RowVector quantized;
  std::vector<RowVector> residuals;  // L + 1 entries; residuals[0] is the encoder output
  std::vector<RowVector> probs;      // one distribution per level
};

struct TokenSequence {
  ItemId item_id = 0;
  std::vector<int> codes;
  int dedup_suffix = 0;

  bool same_identifier(const TokenSequence& o) const {
    return codes == o.codes && dedup_suffix == o.dedup_suffix;
  }
};

using IdentifierMap = std::map<ItemId, TokenSequence>;

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(const TokenizerConfig& config, Rng& rng);

  const TokenizerConfig& config() const { return config_; }
  int period_index = 0;

  nn::Mlp encoder;
  nn::Mlp decoder;
  CodebookStack codebooks;
  std::optional<nn::Linear> cf_projection;

  RowVector encode(const RowVector& z) const;
  Matrix encode_batch(const Matrix& z) const;
  RowVector decode(const RowVector& r) const;
  Tokenization tokenize(const RowVector& z) const;
  // Codes (rows x levels) for a batch of semantic vectors.
  std::vector<std::vector<int>> codes_batch(const Matrix& z) const;
  Matrix quantize_batch(const Matrix& z) const;

  // Level-by-level k-means on the encoder outputs of the given items.
  void init_codebooks_kmeans(const Matrix& z, Rng& rng, int iterations = 20);

  std::vector<nn::NamedParam> params();
  std::vector<nn::ConstNamedParam> params() const;

  ArrayBundle to_bundle() const;
  static Tokenizer from_bundle(const ArrayBundle& bundle);
  void save(const std::filesystem::path& dir) const { to_bundle().save(dir); }
  static Tokenizer load(const std::filesystem::path& dir) { return from_bundle(ArrayBundle::load(dir)); }

 private:
  TokenizerConfig config_;
};

// Per-item loss values of one batch. Squared distances are averaged over
// vector components (mean squared error), so recon is normalized by the
// semantic dimension and rq / anchor by the code dimension.
struct PerItemLosses {
  Vector recon;   // |z - Dec(r_hat)|^2 / d_sem
  Vector rq;      // sum_l (1 + mu) |v_l - e_l|^2 / d_c
  Vector cf;      // contrastive term with the item as anchor; empty when no CF input
  Vector anchor;  // |r - r_prev|^2 / d_c; empty when no previous latents
  Vector kl;      // KL(p_prev || p_cur) on level 1; empty when no snapshot
};

// Per-item multipliers for each term; an empty vector drops the term.
struct LossCoefficients {
  Vector recon, rq, cf, anchor, kl;
};

struct BatchInputs {
  const Matrix* semantic = nullptr;
  const Matrix* cf = nullptr;           // rows aligned with semantic
  const Matrix* prev_latent = nullptr;  // rows aligned with semantic
  const Matrix* prev_probs = nullptr;   // level-1 snapshot distributions
  double mu = 0.25;
  double kl_temperature = 1.0;
};

// One forward pass over a batch, kept so several weighted combinations of
// the per-item losses can be back-propagated.
class TokenizerPass {
 public:
  TokenizerPass(const Tokenizer& tok, const BatchInputs& in);

  const PerItemLosses& losses() const { return losses_; }
  const Matrix& latent() const { return residuals_.front(); }
  const Matrix& quantized() const { return quantized_; }
  const std::vector<std::vector<int>>& codes() const { return codes_; }
  const Matrix& current_probs() const { return kl_probs_; }

  // Accumulates parameter gradients of sum_i sum_term c_term[i] * loss_term[i].
  void backward(Tokenizer& tok, const LossCoefficients& c) const;

 private:
  BatchInputs in_;
  nn::Mlp::Cache enc_cache_;
  nn::Mlp::Cache dec_cache_;
  std::vector<Matrix> residuals_;  // L + 1, each B x d
  std::vector<std::vector<int>> codes_;
  Matrix quantized_;
  Matrix projected_;
  Matrix reconstruction_;
  Matrix cos_;  // cos_(j, i) = sim(q_j, h_i)
  Matrix kl_probs_;
  PerItemLosses losses_;
};

// Scalar forms used by tests and reports.
double recon_loss(const Tokenizer& tok, const RowVector& z);
double rq_loss(const Tokenization& t, const CodebookStack& cb, double mu);
// Mean over anchors of -log softmax_j sim(r_hat_j, h_i) at j = i.
double cf_loss(const Matrix& quantized, const Matrix& cf);
Vector cf_loss_per_anchor(const Matrix& quantized, const Matrix& cf);

struct PretrainOptions {
  double lambda = 0.02;
  double mu = 0.25;
  int steps = 2000;
  int batch_size = 64;
  double lr = 1e-3;
  double grad_clip = 10.0;
  bool kmeans_init = true;
  bool reseed_dead_codes = true;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double initial_recon = 0.0;  // mean over all items
  double final_recon = 0.0;
  double initial_loss = 0.0;   // full objective on a fixed probe batch
  double final_loss = 0.0;
  int reseeded_codes = 0;
};

// Trains on the combined objective recon + rq + lambda * cf. cf may be null
// only when lambda is zero; items lacking a CF row are skipped by the CF term.
PretrainReport pretrain(Tokenizer& tok, const ItemTable& semantic, const ItemTable* cf,
                        const std::vector<ItemId>& items, const PretrainOptions& options);

// Tokenizes every item; identical code paths get suffixes 0, 1, ... in item
// id order.
IdentifierMap assign_identifiers(const Tokenizer& tok, const ItemTable& semantic,
                                 const std::vector<ItemId>& items);
double collision_rate(const IdentifierMap& ids);
int max_suffix(const IdentifierMap& ids);

std::string identifiers_to_tsv(const IdentifierMap& ids);
IdentifierMap identifiers_from_tsv(const std::string& text);

}  // namespace dact::rq

#endif  // DACT_RQ_TOKENIZER_HPP_
