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

#include "dact/cdim.hpp"

#include <cmath>

namespace dact::cdim {

void CdimConfig::validate() const {
  if (slots < 1) throw std::invalid_argument("CDIM needs at least one slot");
  if (code_dim < 1 || head_hidden < 1) throw std::invalid_argument("CDIM dimensions must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("CDIM attention temperature must be positive");
}

nlohmann::json CdimConfig::to_json() const {
  return {{"slots", slots}, {"code_dim", code_dim}, {"head_hidden", head_hidden}, {"temperature", temperature}};
}

CdimConfig CdimConfig::from_json(const nlohmann::json& j) {
  CdimConfig c;
  c.slots = j.at("slots").get<int>();
  c.code_dim = j.at("code_dim").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.temperature = j.at("temperature").get<double>();
  return c;
}

DriftQuery build_query(const RowVector& r_prev, const RowVector& r_cur, const RowVector& h) {
  if (r_prev.size() != r_cur.size() || r_prev.size() != h.size()) {
    throw std::invalid_argument("build_query: dimension mismatch");
  }
  DriftQuery q;
  q.s_prev = r_prev.cwiseProduct(h);
  q.s_cur = r_cur.cwiseProduct(h);
  q.delta = r_cur - r_prev;
  q.q.resize(3 * h.size());
  q.q << q.s_prev, q.s_cur, q.delta;
  return q;
}

Matrix build_queries(const Matrix& r_prev, const Matrix& r_cur, const Matrix& h) {
  if (r_prev.rows() != r_cur.rows() || r_prev.rows() != h.rows() || r_prev.cols() != r_cur.cols() ||
      r_prev.cols() != h.cols()) {
    throw std::invalid_argument("build_queries: dimension mismatch");
  }
  const auto d = h.cols();
  Matrix q(h.rows(), 3 * d);
  q.leftCols(d) = r_prev.cwiseProduct(h);
  q.middleCols(d, d) = r_cur.cwiseProduct(h);
  q.rightCols(d) = r_cur - r_prev;
  return q;
}

PatternMemory::PatternMemory(const CdimConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  keys = nn::Param(gaussian_matrix(config_.slots, config_.query_dim(), 1.0 / std::sqrt(config_.query_dim()), rng));
  values = nn::Param(gaussian_matrix(config_.slots, config_.value_dim(), 1.0 / std::sqrt(config_.value_dim()), rng));
  head = nn::Mlp({config_.value_dim(), config_.head_hidden, 1}, nn::Activation::kTanh, rng);
}

PatternMemory::Pass PatternMemory::forward(const Matrix& q) const {
  if (q.cols() != config_.query_dim()) throw std::invalid_argument("CDIM query dimension mismatch");
  Pass p;
  p.q = q;
  p.attn = (q * keys.value.transpose()) / config_.temperature;
  for (Eigen::Index i = 0; i < p.attn.rows(); ++i) {
    const double mx = p.attn.row(i).maxCoeff();
    p.attn.row(i) = (p.attn.row(i).array() - mx).exp();
    p.attn.row(i) /= p.attn.row(i).sum();
  }
  p.pooled = p.attn * values.value;
  p.logit = head.forward(p.pooled, p.head_cache).col(0);
  p.d = (1.0 / (1.0 + (-p.logit.array()).exp())).matrix();
  return p;
}

void PatternMemory::backward(const Pass& p, const Vector& grad_d) {
  if (grad_d.size() != p.d.size()) throw std::invalid_argument("CDIM backward: gradient size mismatch");
  Matrix g_logit = (grad_d.array() * p.d.array() * (1.0 - p.d.array())).matrix();
  const Matrix g_pooled = head.backward(p.head_cache, g_logit);
  values.grad += p.attn.transpose() * g_pooled;
  const Matrix g_attn = g_pooled * values.value.transpose();
  // Softmax backward, then the 1/tau scaled dot product; q is constant.
  Matrix g_score(p.attn.rows(), p.attn.cols());
  for (Eigen::Index i = 0; i < p.attn.rows(); ++i) {
    const double inner = p.attn.row(i).dot(g_attn.row(i));
    g_score.row(i) = p.attn.row(i).array() * (g_attn.row(i).array() - inner);
  }
  g_score /= config_.temperature;
  keys.grad += g_score.transpose() * p.q;
}

DriftConfidence PatternMemory::confidence(const DriftQuery& q) const {
  Matrix m = q.q;
  const auto p = forward(m);
  return {p.d[0], p.attn.row(0)};
}

std::vector<nn::NamedParam> PatternMemory::params() {
  std::vector<nn::NamedParam> out{{"keys", &keys}, {"values", &values}};
  head.append_params("head", out);
  return out;
}

std::vector<nn::ConstNamedParam> PatternMemory::params() const {
  std::vector<nn::ConstNamedParam> out{{"keys", &keys}, {"values", &values}};
  head.append_params("head", out);
  return out;
}

void PatternMemory::add_to_bundle(ArrayBundle& bundle) const {
  bundle.meta["cdim"] = config_.to_json();
  for (const auto& p : params()) bundle.arrays["cdim." + p.name] = p.param->value;
}

PatternMemory PatternMemory::from_bundle(const ArrayBundle& bundle) {
  Rng rng(0);
  PatternMemory m(CdimConfig::from_json(bundle.meta.at("cdim")), rng);
  for (auto& p : m.params()) {
    const Matrix& a = bundle.at("cdim." + p.name);
    if (a.rows() != p.param->value.rows() || a.cols() != p.param->value.cols()) {
      throw Error("CDIM checkpoint: shape mismatch for " + p.name);
    }
    p.param->value = a;
    p.param->zero_grad();
  }
  return m;
}

PatternMemory warm_start(const PatternMemory& prev, const CdimConfig& config) {
  const auto& c = prev.config();
  if (c.slots != config.slots || c.code_dim != config.code_dim || c.head_hidden != config.head_hidden) {
    throw std::invalid_argument("CDIM warm start: previous memory shape does not match the configuration");
  }
  PatternMemory m = prev;
  for (auto& p : m.params()) p.param->zero_grad();
  return m;
}

double reg_loss(const Vector& d) {
  if (d.size() == 0) throw std::invalid_argument("reg_loss: empty item set");
  return d.squaredNorm() / static_cast<double>(d.size());
}

}  // namespace dact::cdim
