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

// Continual tokenizer update: per-batch top-K drift/stationary split with a
// straight-through gate, differentiated losses, level-1 KL constraint and
// the confidence regularizer, trained jointly with the pattern memory.

#ifndef DACT_DRIFT_ADAPTATION_HPP_
#define DACT_DRIFT_ADAPTATION_HPP_

#include <map>
#include <vector>

#include "dact/cdim.hpp"
#include "dact/common.hpp"
#include "dact/item_table.hpp"
#include "dact/rq_tokenizer.hpp"
#include "json.hpp"

namespace dact::adapt {

struct LossWeights {
  double lambda = 0.02;
  double mu = 0.25;
  double alpha_anchor = 1.0;
  double theta = 0.1;
  double beta = 5.0;
  double zeta = 0.001;
  double k_ratio = 0.3;
  double t_global = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

struct DriftPartition {
  std::vector<ItemId> drift_set;
  std::vector<ItemId> stable_set;
  std::vector<int> mask;  // aligned with the input order; 1 marks the drift set
};

// The ceil(k_ratio * B) highest confidences form the drift set; ties go to
// the lower item id.
DriftPartition split_topk(const std::vector<ItemId>& items, const Vector& confidences, double k_ratio);

struct AdaptationSnapshot {
  ItemTable prev_latent;  // previous encoder output per item
  ItemTable prev_probs;   // previous level-1 distribution at t_global
  double t_global = 1.0;

  static AdaptationSnapshot build(const rq::Tokenizer& prev, const ItemTable& semantic,
                                  const std::vector<ItemId>& items, double t_global);
};

struct ObjectiveTerms {
  double drift = 0.0;
  double stable = 0.0;
  double global = 0.0;
  double reg = 0.0;
};

// drift + theta * stable + beta * global + zeta * reg; a non-finite term
// raises an Error naming it.
double overall_objective(const ObjectiveTerms& t, const LossWeights& w);

// Mean over masked items of recon + rq + lambda * cf; 0 when none is masked.
double drift_loss(const rq::PerItemLosses& l, const std::vector<int>& mask, double lambda);
// Mean over unmasked items of recon + rq + alpha * anchor + lambda * cf.
double stable_loss(const rq::PerItemLosses& l, const std::vector<int>& mask, double alpha, double lambda);

double kl_divergence(const RowVector& p, const RowVector& q);
// Mean level-1 KL(prev || current) over the items, recomputed from the
// current encoder and codebook.
double global_kl(const rq::Tokenizer& tok, const AdaptationSnapshot& snap, const ItemTable& semantic,
                 const std::vector<ItemId>& items);

enum class GateMode {
  kStraightThrough,  // gate gradients reach the pattern memory
  kDetachedMask,     // hard mask only; negative control
};

struct BatchResult {
  ObjectiveTerms terms;
  double total = 0.0;
  DriftPartition partition;
  Vector confidences;
};

// Forward pass of the overall objective on one batch; with accumulate set,
// gradients are added to the tokenizer and memory parameters. A forced mask
// replaces the top-K split.
BatchResult batch_objective(rq::Tokenizer& tok, cdim::PatternMemory& mem, const AdaptationSnapshot& snap,
                            const ItemTable& semantic, const ItemTable& cf, const std::vector<ItemId>& batch,
                            const LossWeights& w, bool accumulate, GateMode gate = GateMode::kStraightThrough,
                            const std::vector<int>* forced_mask = nullptr);

struct AdaptOptions {
  int steps = 500;
  int batch_size = 64;
  double lr = 1e-3;
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  cdim::CdimConfig cdim;
};

struct AdaptResult {
  rq::Tokenizer tokenizer;
  cdim::PatternMemory memory;
  std::map<ItemId, double> confidences;  // final, for every adapted item
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

// Period update. mem_prev null means a freshly initialized memory.
AdaptResult adapt_period(const rq::Tokenizer& prev, const cdim::PatternMemory* mem_prev, const ItemTable& semantic,
                         const ItemTable& cf, const std::vector<ItemId>& items, const LossWeights& w,
                         const AdaptOptions& options);

// Confidences of the given items under a frozen tokenizer and memory.
std::map<ItemId, double> final_confidences(const rq::Tokenizer& tok, const cdim::PatternMemory& mem,
                                           const AdaptationSnapshot& snap, const ItemTable& cf,
                                           const ItemTable& semantic, const std::vector<ItemId>& items);

}  // namespace dact::adapt

#endif  // DACT_DRIFT_ADAPTATION_HPP_
