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

// Small dense building blocks with hand-written backward passes. Row-major
// batches: every forward takes an (N x in) matrix and returns (N x out).

#ifndef DACT_NN_HPP_
#define DACT_NN_HPP_

#include <string>
#include <utility>
#include <vector>

#include "dact/common.hpp"

namespace dact::nn {

struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  explicit Param(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct NamedParam {
  std::string name;
  Param* param;
};

struct ConstNamedParam {
  std::string name;
  const Param* param;
};

void zero_grads(const std::vector<NamedParam>& params);
double grad_norm(const std::vector<NamedParam>& params);
void clip_grad_norm(const std::vector<NamedParam>& params, double max_norm);
void round_params_to_float32(const std::vector<NamedParam>& params);

// y = x W + b with W stored (in x out).
struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng, double init_scale = -1.0);

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  Matrix forward(const Matrix& x) const;
  // Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& grad_out);

  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const;
};

enum class Activation { kRelu, kTanh };

// Feed-forward stack; the activation is applied after every layer but the
// last.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::kRelu;

  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each hidden layer
  };

  Mlp() = default;
  Mlp(const std::vector<int>& dims, Activation act, Rng& rng);

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Cache& cache, const Matrix& grad_out);

  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const;
};

// Per-row normalization with learned gain and shift.
struct LayerNorm {
  Param gain;
  Param shift;
  double eps = 1e-5;

  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Cache& cache, const Matrix& grad_out);
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

// Moment buffers are bound to the parameter list's order on first step.
class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  void step(const std::vector<NamedParam>& params);
  long steps_taken() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace dact::nn

#endif  // DACT_NN_HPP_
