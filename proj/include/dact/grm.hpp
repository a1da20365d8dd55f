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

// Small decoder-only transformer over identifier tokens, trained with
// teacher-forced NLL on the target item's tokens and decoded with beam
// search restricted to live identifiers.

#ifndef DACT_GRM_HPP_
#define DACT_GRM_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "dact/array_store.hpp"
#include "dact/common.hpp"
#include "dact/data_pipeline.hpp"
#include "dact/nn.hpp"
#include "dact/rq_tokenizer.hpp"
#include "json.hpp"

namespace dact::grm {

// Level-disjoint code tokens, then suffix tokens, then specials.
struct TokenVocab {
  int levels = 3;
  int codes = 64;
  int max_suffix = 16;

  int code_token(int level, int code) const { return level * codes + code; }
  int suffix_token(int suffix) const { return levels * codes + suffix; }
  int bos() const { return levels * codes + max_suffix; }
  int eos() const { return bos() + 1; }
  int pad() const { return bos() + 2; }
  int size() const { return levels * codes + max_suffix + 3; }
  int tokens_per_item() const { return levels + 1; }

  std::vector<int> item_tokens(const rq::TokenSequence& s) const;
};

struct GrmConfig {
  int d_model = 128;
  int heads = 4;
  int layers = 2;
  int ffn_dim = 256;
  int max_items = 20;  // history items kept per window
  TokenVocab vocab;

  int max_positions() const { return 2 + max_items * vocab.tokens_per_item() + vocab.levels; }
  void validate() const;
  nlohmann::json to_json() const;
  static GrmConfig from_json(const nlohmann::json& j);
};

class IdentifierTrie {
 public:
  IdentifierTrie(const rq::IdentifierMap& ids, const TokenVocab& vocab);

  static constexpr int kRoot = 0;
  bool empty() const { return items_ == 0; }
  std::size_t size() const { return items_; }
  const std::map<int, int>& children(int node) const { return nodes_[node].children; }
  std::optional<ItemId> leaf_item(int node) const { return nodes_[node].item; }
  // Walks a full token path; nullopt when it is not a live identifier.
  std::optional<ItemId> lookup(const std::vector<int>& tokens) const;
  int depth() const { return depth_; }

 private:
  struct Node {
    std::map<int, int> children;
    std::optional<ItemId> item;
  };
  std::vector<Node> nodes_;
  std::size_t items_ = 0;
  int depth_ = 0;
};

// [bos, tokens of the last max_items items, eos].
std::vector<int> encode_history(const rq::IdentifierMap& ids, const std::vector<ItemId>& history, int max_items,
                                const TokenVocab& vocab);

struct Example {
  std::vector<int> input;   // history tokens followed by all but the last target token
  std::vector<int> target;  // the target item's tokens
};

Example make_example(const rq::IdentifierMap& ids, const data::Window& w, const GrmConfig& config);

class Grm {
 public:
  Grm() = default;
  Grm(const GrmConfig& config, Rng& rng);

  const GrmConfig& config() const { return config_; }
  int period_index = 0;

  // Mean NLL over the target tokens of the batch; accumulates gradients
  // when train is set.
  double batch_loss(const std::vector<Example>& batch, bool train);

  // Next-token logits after the prefix, full-sequence evaluation.
  RowVector next_logits(const std::vector<int>& prefix) const;

  // Key/value cache of a history prefix for incremental decoding.
  struct PrefixCache {
    std::vector<Matrix> keys;    // per layer, n x d_model
    std::vector<Matrix> values;  // per layer
    Matrix last_hidden;          // final residual stream at the last prefix position
    int length = 0;
  };
  PrefixCache prefix_cache(const std::vector<int>& prefix) const;
  // Logits after prefix + suffix, reusing the prefix cache.
  RowVector next_logits(const PrefixCache& cache, const std::vector<int>& suffix) const;

  std::vector<nn::NamedParam> params();
  std::vector<nn::ConstNamedParam> params() const;

  ArrayBundle to_bundle() const;
  static Grm from_bundle(const ArrayBundle& bundle);
  void save(const std::filesystem::path& dir) const { to_bundle().save(dir); }
  static Grm load(const std::filesystem::path& dir) { return from_bundle(ArrayBundle::load(dir)); }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear wq, wk, wv, wo;
    nn::Linear ff1, ff2;
  };

  Matrix embed(const std::vector<int>& tokens, int offset) const;

  GrmConfig config_;
  nn::Param token_embedding_;
  nn::Param position_embedding_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  nn::Linear head_;
};

struct TrainOptions {
  int epochs = 10;
  int batch_size = 32;
  double lr = 1e-3;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double initial_loss = 0.0;  // per-token NLL on a fixed probe batch
  double final_loss = 0.0;
  std::size_t examples = 0;
};

TrainReport train_grm(Grm& model, const std::vector<data::Window>& windows, const rq::IdentifierMap& ids,
                      const TrainOptions& options);

// Per-token NLL averaged over the examples.
double mean_nll(Grm& model, const std::vector<Example>& examples);

struct Recommendation {
  ItemId item_id = 0;
  double score = 0.0;  // total log-probability under trie-renormalized steps
};

std::vector<Recommendation> recommend(const Grm& model, const IdentifierTrie& trie, const std::vector<int>& history,
                                      int k, int beam_width);

// Scores every live identifier and ranks all items; test oracle for the
// beam search.
std::vector<Recommendation> exhaustive_ranking(const Grm& model, const IdentifierTrie& trie,
                                               const std::vector<int>& history);

struct EvalResult {
  std::map<std::string, double> metrics;  // H@k, N@k, plus warm/cold variants
  std::size_t users = 0;
  std::size_t warm_users = 0;
  std::size_t cold_users = 0;
  std::vector<std::optional<int>> ranks;  // 1-based rank per window

  nlohmann::json to_json() const;
};

// Warm targets are items in warm_items; the rest count as cold.
EvalResult evaluate(const Grm& model, const rq::IdentifierMap& ids, const std::vector<data::Window>& windows,
                    const std::vector<int>& ks, int beam_width, const std::set<ItemId>& warm_items);

// Metrics from precomputed ranks.
std::map<std::string, double> metrics_from_ranks(const std::vector<std::optional<int>>& ranks,
                                                 const std::vector<int>& ks);

}  // namespace dact::grm

#endif  // DACT_GRM_HPP_
