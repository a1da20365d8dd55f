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

#include "dact/nn.hpp"

#include <cmath>

namespace dact::nn {

void zero_grads(const std::vector<NamedParam>& params) {
  for (const auto& p : params) p.param->zero_grad();
}

double grad_norm(const std::vector<NamedParam>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.param->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& p : params) p.param->grad *= scale;
  }
}

void round_params_to_float32(const std::vector<NamedParam>& params) {
  for (const auto& p : params) round_to_float32(p.param->value);
}

Linear::Linear(int in, int out, Rng& rng, double init_scale) {
  const double scale = init_scale > 0.0 ? init_scale : std::sqrt(2.0 / (in + out));
  weight = Param(gaussian_matrix(in, out, scale, rng));
  bias = Param(Matrix::Zero(1, out));
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out) {
  weight.grad.noalias() += x.transpose() * grad_out;
  bias.grad.row(0) += grad_out.colwise().sum();
  return grad_out * weight.value.transpose();
}

void Linear::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

void Linear::append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Mlp::Mlp(const std::vector<int>& dims, Activation act, Rng& rng) : activation(act) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(dims[i], dims[i + 1], rng);
  }
}

namespace {

Matrix activate(const Matrix& x, Activation act) {
  if (act == Activation::kRelu) return x.cwiseMax(0.0);
  return x.array().tanh().matrix();
}

Matrix activate_backward(const Matrix& pre, const Matrix& grad, Activation act) {
  if (act == Activation::kRelu) {
    return (pre.array() > 0.0).select(grad, 0.0);
  }
  const Eigen::ArrayXXd t = pre.array().tanh();
  return (grad.array() * (1.0 - t * t)).matrix();
}

}  // namespace

Matrix Mlp::forward(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = activate(h, activation);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cache.inputs.push_back(h);
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) {
      cache.pre.push_back(h);
      h = activate(h, activation);
    }
  }
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& grad_out) {
  Matrix g = grad_out;
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (i + 1 < layers.size()) g = activate_backward(cache.pre[i], g, activation);
    g = layers[i].backward(cache.inputs[i], g);
  }
  return g;
}

void Mlp::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].append_params(prefix + "." + std::to_string(i), out);
  }
}

void Mlp::append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].append_params(prefix + "." + std::to_string(i), out);
  }
}

void Adam::step(const std::vector<NamedParam>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
      v_.push_back(Matrix::Zero(p.param->value.rows(), p.param->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i].param;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * p.grad;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * p.grad.cwiseProduct(p.grad);
    if (options_.weight_decay > 0.0) p.value *= (1.0 - options_.lr * options_.weight_decay);
    p.value.array() -= options_.lr * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + options_.eps);
  }
}

LayerNorm::LayerNorm(int dim) : gain(Matrix::Ones(1, dim)), shift(Matrix::Zero(1, dim)) {}

Matrix LayerNorm::forward(const Matrix& x) const {
  Cache cache;
  return forward(x, cache);
}

Matrix LayerNorm::forward(const Matrix& x, Cache& cache) const {
  const auto n = static_cast<double>(x.cols());
  const Vector mean = x.rowwise().mean();
  cache.normalized = x.colwise() - mean;
  const Vector var = cache.normalized.rowwise().squaredNorm() / n;
  cache.inv_std = (var.array() + eps).rsqrt();
  cache.normalized.array().colwise() *= cache.inv_std.array();
  Matrix y = cache.normalized.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += shift.value.row(0);
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& grad_out) {
  const auto n = static_cast<double>(grad_out.cols());
  gain.grad.row(0) += (grad_out.cwiseProduct(cache.normalized)).colwise().sum();
  shift.grad.row(0) += grad_out.colwise().sum();
  const Matrix g = grad_out.array().rowwise() * gain.value.row(0).array();
  const Vector g_sum = g.rowwise().sum();
  const Vector gx_sum = g.cwiseProduct(cache.normalized).rowwise().sum();
  Matrix dx = (n * g).colwise() - g_sum;
  dx.array() -= cache.normalized.array().colwise() * gx_sum.array();
  dx.array().colwise() *= cache.inv_std.array() / n;
  return dx;
}

void LayerNorm::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".shift", &shift});
}

void LayerNorm::append_params(const std::string& prefix, std::vector<ConstNamedParam>& out) const {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".shift", &shift});
}

}  // namespace dact::nn
