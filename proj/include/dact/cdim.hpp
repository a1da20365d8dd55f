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

// Drift identification: a learnable pattern memory attended by a per-item
// query built from previous latent, current latent and collaborative
// embedding, pooled into a scalar confidence in (0, 1).

#ifndef DACT_CDIM_HPP_
#define DACT_CDIM_HPP_

#include <vector>

#include "dact/array_store.hpp"
#include "dact/common.hpp"
#include "dact/nn.hpp"
#include "json.hpp"

namespace dact::cdim {

struct CdimConfig {
  int slots = 32;
  int code_dim = 32;
  int head_hidden = 32;
  double temperature = 0.5;  // attention temperature

  int query_dim() const { return 3 * code_dim; }
  int value_dim() const { return 3 * code_dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static CdimConfig from_json(const nlohmann::json& j);
};

struct DriftQuery {
  RowVector s_prev;  // r_prev * h
  RowVector s_cur;   // r_cur * h
  RowVector delta;   // r_cur - r_prev
  RowVector q;       // [s_prev, s_cur, delta]
};

// Every argument is a constant here: the current latent is detached.
DriftQuery build_query(const RowVector& r_prev, const RowVector& r_cur, const RowVector& h);
Matrix build_queries(const Matrix& r_prev, const Matrix& r_cur, const Matrix& h);

struct DriftConfidence {
  double d = 0.5;
  RowVector attn_weights;
};

class PatternMemory {
 public:
  PatternMemory() = default;
  PatternMemory(const CdimConfig& config, Rng& rng);

  const CdimConfig& config() const { return config_; }

  nn::Param keys;    // slots x query_dim
  nn::Param values;  // slots x value_dim
  nn::Mlp head;      // value_dim -> head_hidden -> 1, tanh

  struct Pass {
    Matrix q;
    Matrix attn;    // B x slots
    Matrix pooled;  // B x value_dim
    nn::Mlp::Cache head_cache;
    Vector logit;
    Vector d;
  };

  Pass forward(const Matrix& q) const;
  // Accumulates gradients of sum_i grad_d[i] * d_i into keys, values, head.
  void backward(const Pass& pass, const Vector& grad_d);
  DriftConfidence confidence(const DriftQuery& q) const;

  std::vector<nn::NamedParam> params();
  std::vector<nn::ConstNamedParam> params() const;

  // Arrays are named cdim.keys, cdim.values, cdim.head.*.
  void add_to_bundle(ArrayBundle& bundle) const;
  static PatternMemory from_bundle(const ArrayBundle& bundle);

 private:
  CdimConfig config_;
};

// Trainable copy of the previous period's memory; the configuration must
// match exactly.
PatternMemory warm_start(const PatternMemory& prev, const CdimConfig& config);

// Mean of d_i^2 over a non-empty set.
double reg_loss(const Vector& d);

}  // namespace dact::cdim

#endif  // DACT_CDIM_HPP_
