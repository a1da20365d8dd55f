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

#include "dact/rq_tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace dact::rq {

void TokenizerConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("tokenizer needs at least one level");
  if (codes < 2) throw std::invalid_argument("tokenizer needs at least two codes per level");
  if (!(temperature > 0.0)) throw std::invalid_argument("assignment temperature must be positive");
  if (semantic_dim <= 0 || code_dim <= 0 || cf_dim <= 0) {
    throw std::invalid_argument("tokenizer dimensions must be positive");
  }
}

nlohmann::json TokenizerConfig::to_json() const {
  return {{"semantic_dim", semantic_dim}, {"hidden", hidden}, {"code_dim", code_dim},
          {"levels", levels},             {"codes", codes},   {"cf_dim", cf_dim},
          {"temperature", temperature}};
}

TokenizerConfig TokenizerConfig::from_json(const nlohmann::json& j) {
  TokenizerConfig c;
  c.semantic_dim = j.at("semantic_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.code_dim = j.at("code_dim").get<int>();
  c.levels = j.at("levels").get<int>();
  c.codes = j.at("codes").get<int>();
  c.cf_dim = j.at("cf_dim").get<int>();
  c.temperature = j.at("temperature").get<double>();
  return c;
}

namespace {

// Squared distances from each row of v to each code: (rows x codes).
Matrix squared_distances(const Matrix& v, const Matrix& codes) {
  Matrix d = -2.0 * v * codes.transpose();
  d.colwise() += v.rowwise().squaredNorm();
  d.rowwise() += codes.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

int argmin_row(const Eigen::Ref<const RowVector>& d) {
  int best = 0;
  for (int m = 1; m < d.size(); ++m) {
    if (d[m] < d[best]) best = m;
  }
  return best;
}

RowVector softmax_neg(const Eigen::Ref<const RowVector>& d, double t) {
  const double lo = d.minCoeff();
  RowVector p = (-(d.array() - lo) / t).exp().matrix();
  return p / p.sum();
}

void check_finite(const RowVector& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

LevelAssignment CodebookStack::assign_level(const RowVector& v, int level) const {
  if (level < 0 || level >= num_levels()) throw std::invalid_argument("assign_level: level out of range");
  check_finite(v, "assign_level");
  const Matrix& e = levels[level].value;
  const RowVector d = (e.rowwise() - v).rowwise().squaredNorm().transpose();
  LevelAssignment a;
  a.index = argmin_row(d);
  a.probs = softmax_neg(d, temperature);
  a.next_residual = v - e.row(a.index);
  return a;
}

RowVector CodebookStack::distribution(const RowVector& v, int level, double t) const {
  if (!(t > 0.0)) throw std::invalid_argument("temperature must be positive");
  const Matrix& e = levels.at(level).value;
  const RowVector d = (e.rowwise() - v).rowwise().squaredNorm().transpose();
  return softmax_neg(d, t);
}

namespace {

std::vector<int> encoder_dims(const TokenizerConfig& c) {
  std::vector<int> dims{c.semantic_dim};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(c.code_dim);
  return dims;
}

}  // namespace

Tokenizer::Tokenizer(const TokenizerConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  auto enc = encoder_dims(config_);
  encoder = nn::Mlp(enc, nn::Activation::kRelu, rng);
  std::reverse(enc.begin(), enc.end());
  decoder = nn::Mlp(enc, nn::Activation::kRelu, rng);
  codebooks.temperature = config_.temperature;
  for (int l = 0; l < config_.levels; ++l) {
    codebooks.levels.emplace_back(gaussian_matrix(config_.codes, config_.code_dim, 0.1, rng));
  }
  if (config_.cf_dim != config_.code_dim) cf_projection = nn::Linear(config_.code_dim, config_.cf_dim, rng);
}

RowVector Tokenizer::encode(const RowVector& z) const {
  if (z.size() != config_.semantic_dim) throw std::invalid_argument("encode: semantic dimension mismatch");
  Matrix x = z;
  return encoder.forward(x).row(0);
}

Matrix Tokenizer::encode_batch(const Matrix& z) const {
  if (z.cols() != config_.semantic_dim) throw std::invalid_argument("encode: semantic dimension mismatch");
  return encoder.forward(z);
}

RowVector Tokenizer::decode(const RowVector& r) const {
  Matrix x = r;
  return decoder.forward(x).row(0);
}

Tokenization Tokenizer::tokenize(const RowVector& z) const {
  Tokenization t;
  t.residuals.push_back(encode(z));
  t.quantized = RowVector::Zero(config_.code_dim);
  for (int l = 0; l < config_.levels; ++l) {
    auto a = codebooks.assign_level(t.residuals.back(), l);
    t.codes.push_back(a.index);
    t.quantized += codebooks.levels[l].value.row(a.index);
    t.probs.push_back(std::move(a.probs));
    t.residuals.push_back(std::move(a.next_residual));
  }
  return t;
}

std::vector<std::vector<int>> Tokenizer::codes_batch(const Matrix& z) const {
  Matrix v = encode_batch(z);
  std::vector<std::vector<int>> out(v.rows(), std::vector<int>(config_.levels));
  for (int l = 0; l < config_.levels; ++l) {
    const Matrix& e = codebooks.levels[l].value;
    const Matrix d = squared_distances(v, e);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const int c = argmin_row(d.row(i));
      out[i][l] = c;
      v.row(i) -= e.row(c);
    }
  }
  return out;
}

Matrix Tokenizer::quantize_batch(const Matrix& z) const {
  const auto codes = codes_batch(z);
  Matrix q = Matrix::Zero(z.rows(), config_.code_dim);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (int l = 0; l < config_.levels; ++l) q.row(i) += codebooks.levels[l].value.row(codes[i][l]);
  }
  return q;
}

namespace {

Matrix kmeans(const Matrix& x, int k, Rng& rng, int iterations) {
  const auto n = x.rows();
  Matrix centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (int c = 0; c < k; ++c) {
    centers.row(c) = x.row(order[c % n]);
    if (c >= n) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) centers(c, j) += jitter(rng);
    }
  }
  std::vector<int> assign(n);
  for (int it = 0; it < iterations; ++it) {
    const Matrix d = squared_distances(x, centers);
    for (Eigen::Index i = 0; i < n; ++i) assign[i] = argmin_row(d.row(i));
    Matrix sum = Matrix::Zero(k, x.cols());
    std::vector<int> count(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(assign[i]) += x.row(i);
      ++count[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centers.row(c) = sum.row(c) / count[c];
      } else {
        centers.row(c) = x.row(pick(rng));
        for (Eigen::Index j = 0; j < x.cols(); ++j) centers(c, j) += jitter(rng);
      }
    }
  }
  return centers;
}

}  // namespace

void Tokenizer::init_codebooks_kmeans(const Matrix& z, Rng& rng, int iterations) {
  Matrix v = encode_batch(z);
  for (int l = 0; l < config_.levels; ++l) {
    Matrix& e = codebooks.levels[l].value;
    e = kmeans(v, config_.codes, rng, iterations);
    const Matrix d = squared_distances(v, e);
    for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) -= e.row(argmin_row(d.row(i)));
  }
}

std::vector<nn::NamedParam> Tokenizer::params() {
  std::vector<nn::NamedParam> out;
  encoder.append_params("encoder", out);
  decoder.append_params("decoder", out);
  for (int l = 0; l < config_.levels; ++l) {
    out.push_back({"codebook." + std::to_string(l), &codebooks.levels[l]});
  }
  if (cf_projection) cf_projection->append_params("cf_projection", out);
  return out;
}

std::vector<nn::ConstNamedParam> Tokenizer::params() const {
  std::vector<nn::ConstNamedParam> out;
  encoder.append_params("encoder", out);
  decoder.append_params("decoder", out);
  for (int l = 0; l < config_.levels; ++l) {
    out.push_back({"codebook." + std::to_string(l), &codebooks.levels[l]});
  }
  if (cf_projection) cf_projection->append_params("cf_projection", out);
  return out;
}

ArrayBundle Tokenizer::to_bundle() const {
  ArrayBundle b;
  b.meta["kind"] = "rq_tokenizer";
  b.meta["config"] = config_.to_json();
  b.meta["period_index"] = period_index;
  for (const auto& p : params()) b.arrays["tokenizer." + p.name] = p.param->value;
  return b;
}

Tokenizer Tokenizer::from_bundle(const ArrayBundle& b) {
  Rng rng(0);
  Tokenizer t(TokenizerConfig::from_json(b.meta.at("config")), rng);
  t.period_index = b.meta.at("period_index").get<int>();
  for (auto& p : t.params()) {
    const Matrix& m = b.at("tokenizer." + p.name);
    if (m.rows() != p.param->value.rows() || m.cols() != p.param->value.cols()) {
      throw Error("tokenizer checkpoint: shape mismatch for " + p.name);
    }
    p.param->value = m;
    p.param->zero_grad();
  }
  return t;
}

TokenizerPass::TokenizerPass(const Tokenizer& tok, const BatchInputs& in) : in_(in) {
  if (in.semantic == nullptr) throw std::invalid_argument("TokenizerPass: semantic batch required");
  const Matrix& z = *in.semantic;
  const auto b = z.rows();
  const int levels = tok.config().levels;
  const double dim = tok.config().code_dim;
  if (z.cols() != tok.config().semantic_dim) throw std::invalid_argument("TokenizerPass: semantic dimension mismatch");

  residuals_.push_back(tok.encoder.forward(z, enc_cache_));
  codes_.assign(b, std::vector<int>(levels));
  losses_.rq = Vector::Zero(b);
  for (int l = 0; l < levels; ++l) {
    const Matrix& e = tok.codebooks.levels[l].value;
    const Matrix d = squared_distances(residuals_.back(), e);
    Matrix next = residuals_.back();
    for (Eigen::Index i = 0; i < b; ++i) {
      const int c = argmin_row(d.row(i));
      codes_[i][l] = c;
      next.row(i) -= e.row(c);
    }
    losses_.rq += ((1.0 + in.mu) / dim) * next.rowwise().squaredNorm();
    residuals_.push_back(std::move(next));
  }
  quantized_ = residuals_.front() - residuals_.back();
  // Exact codeword sum, free of the cancellation in the difference above.
  for (Eigen::Index i = 0; i < b; ++i) {
    RowVector q = RowVector::Zero(quantized_.cols());
    for (int l = 0; l < levels; ++l) q += tok.codebooks.levels[l].value.row(codes_[i][l]);
    quantized_.row(i) = q;
  }

  reconstruction_ = tok.decoder.forward(quantized_, dec_cache_);
  losses_.recon = (z - reconstruction_).rowwise().squaredNorm() / static_cast<double>(z.cols());

  if (in.cf != nullptr) {
    const Matrix& h = *in.cf;
    if (h.rows() != b) throw std::invalid_argument("TokenizerPass: CF batch misaligned");
    projected_ = tok.cf_projection ? tok.cf_projection->forward(quantized_) : quantized_;
    if (h.cols() != projected_.cols()) throw std::invalid_argument("TokenizerPass: CF dimension mismatch");
    const Vector qn = projected_.rowwise().norm();
    const Vector hn = h.rowwise().norm();
    if ((qn.array() <= 0.0).any() || (hn.array() <= 0.0).any()) {
      throw std::invalid_argument("cf_loss: zero-norm vector, cosine undefined");
    }
    cos_ = projected_ * h.transpose();
    cos_.array().colwise() /= qn.array();
    cos_.array().rowwise() /= hn.transpose().array();
    losses_.cf.resize(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double mx = cos_.col(i).maxCoeff();
      const double lse = mx + std::log((cos_.col(i).array() - mx).exp().sum());
      losses_.cf[i] = lse - cos_(i, i);
    }
  }
  if (in.prev_latent != nullptr) {
    if (in.prev_latent->rows() != b) throw std::invalid_argument("TokenizerPass: previous latents misaligned");
    losses_.anchor = (residuals_.front() - *in.prev_latent).rowwise().squaredNorm() / dim;
  }
  if (in.prev_probs != nullptr) {
    const Matrix& pp = *in.prev_probs;
    if (pp.rows() != b || pp.cols() != tok.config().codes) {
      throw std::invalid_argument("TokenizerPass: snapshot distributions misaligned");
    }
    const Matrix d = squared_distances(residuals_.front(), tok.codebooks.levels[0].value);
    kl_probs_.resize(b, d.cols());
    losses_.kl.resize(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const RowVector logits = -d.row(i) / in.kl_temperature;
      const double mx = logits.maxCoeff();
      const double lse = mx + std::log((logits.array() - mx).exp().sum());
      const RowVector logp = logits.array() - lse;
      kl_probs_.row(i) = logp.array().exp();
      double kl = 0.0;
      for (Eigen::Index m = 0; m < d.cols(); ++m) {
        if (pp(i, m) > 0.0) kl += pp(i, m) * (std::log(pp(i, m)) - logp[m]);
      }
      losses_.kl[i] = kl;
    }
  }
}

namespace {

bool active(const Vector& c) { return c.size() > 0 && (c.array() != 0.0).any(); }

void require_term(const Vector& c, const Vector& loss, Eigen::Index b, const char* name) {
  if (c.size() == 0) return;
  if (c.size() != b) throw std::invalid_argument(std::string("coefficient size mismatch for ") + name);
  if (active(c) && loss.size() == 0) {
    throw std::invalid_argument(std::string("term ") + name + " was not computed in the forward pass");
  }
}

}  // namespace

void TokenizerPass::backward(Tokenizer& tok, const LossCoefficients& c) const {
  const Matrix& z = *in_.semantic;
  const auto b = z.rows();
  require_term(c.recon, losses_.recon, b, "recon");
  require_term(c.rq, losses_.rq, b, "rq");
  require_term(c.cf, losses_.cf, b, "cf");
  require_term(c.anchor, losses_.anchor, b, "anchor");
  require_term(c.kl, losses_.kl, b, "kl");
  const Matrix& v1 = residuals_.front();
  Matrix d_v1 = Matrix::Zero(v1.rows(), v1.cols());
  Matrix d_q = Matrix::Zero(v1.rows(), v1.cols());

  if (active(c.recon)) {
    Matrix d_out = (-2.0 / static_cast<double>(z.cols())) * (z - reconstruction_);
    d_out.array().colwise() *= c.recon.array();
    d_q += tok.decoder.backward(dec_cache_, d_out);
  }
  if (active(c.cf)) {
    const Matrix& h = *in_.cf;
    // dS(j, i) = c_i (softmax_j S(., i) - [j == i])
    Matrix ds(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double mx = cos_.col(i).maxCoeff();
      Vector p = (cos_.col(i).array() - mx).exp();
      p /= p.sum();
      p[i] -= 1.0;
      ds.col(i) = c.cf[i] * p;
    }
    const Vector qn = projected_.rowwise().norm();
    const Vector hn = h.rowwise().norm();
    Matrix hu = h;
    hu.array().colwise() /= hn.array();
    // d cos(q, h)/dq = h/(|q||h|) - cos q/|q|^2
    Matrix d_proj = ds * hu;
    d_proj.array().colwise() /= qn.array();
    const Vector row_scale = (ds.cwiseProduct(cos_)).rowwise().sum();
    for (Eigen::Index j = 0; j < b; ++j) d_proj.row(j) -= row_scale[j] * projected_.row(j) / (qn[j] * qn[j]);
    if (tok.cf_projection) {
      d_q += tok.cf_projection->backward(quantized_, d_proj);
    } else {
      d_q += d_proj;
    }
  }
  // Straight-through: gradients on the quantized vector pass to the latent.
  d_v1 += d_q;

  const double dim = tok.config().code_dim;
  if (active(c.rq)) {
    for (int l = 0; l < tok.config().levels; ++l) {
      Matrix& g = tok.codebooks.levels[l].grad;
      const Matrix& diff = residuals_[l + 1];  // v_l - e_l
      for (Eigen::Index i = 0; i < b; ++i) {
        g.row(codes_[i][l]) -= (2.0 / dim) * c.rq[i] * diff.row(i);
        d_v1.row(i) += (2.0 * in_.mu / dim) * c.rq[i] * diff.row(i);
      }
    }
  }
  if (active(c.anchor)) {
    Matrix d = (2.0 / dim) * (v1 - *in_.prev_latent);
    d.array().colwise() *= c.anchor.array();
    d_v1 += d;
  }
  if (active(c.kl)) {
    const Matrix& e = tok.codebooks.levels[0].value;
    Matrix& g = tok.codebooks.levels[0].grad;
    const double t = in_.kl_temperature;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (c.kl[i] == 0.0) continue;
      const RowVector dlogit = c.kl[i] * (kl_probs_.row(i) - in_.prev_probs->row(i));
      // logit_m = -||v - e_m||^2 / T
      const Matrix diff = (-e).rowwise() + v1.row(i);  // v - e_m
      d_v1.row(i) += (-2.0 / t) * (dlogit * diff);
      for (Eigen::Index m = 0; m < e.rows(); ++m) g.row(m) += (2.0 / t) * dlogit[m] * diff.row(m);
    }
  }
  tok.encoder.backward(enc_cache_, d_v1);
}

double recon_loss(const Tokenizer& tok, const RowVector& z) {
  const auto t = tok.tokenize(z);
  return (z - tok.decode(t.quantized)).squaredNorm() / static_cast<double>(z.size());
}

double rq_loss(const Tokenization& t, const CodebookStack& cb, double mu) {
  if (mu < 0.0) throw std::invalid_argument("rq_loss: mu must be non-negative");
  double s = 0.0;
  for (std::size_t l = 0; l < t.codes.size(); ++l) {
    const double d = (t.residuals[l] - cb.levels[l].value.row(t.codes[l])).squaredNorm() / cb.dim();
    s += d + mu * d;
  }
  return s;
}

Vector cf_loss_per_anchor(const Matrix& quantized, const Matrix& cf) {
  if (quantized.rows() != cf.rows() || quantized.cols() != cf.cols() || quantized.rows() < 1) {
    throw std::invalid_argument("cf_loss: batches must be non-empty and aligned");
  }
  const auto b = quantized.rows();
  Vector out(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double hn = cf.row(i).norm();
    if (!(hn > 0.0)) throw std::invalid_argument("cf_loss: zero-norm vector, cosine undefined");
    Vector s(b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const double qn = quantized.row(j).norm();
      if (!(qn > 0.0)) throw std::invalid_argument("cf_loss: zero-norm vector, cosine undefined");
      s[j] = quantized.row(j).dot(cf.row(i)) / (qn * hn);
    }
    const double mx = s.maxCoeff();
    out[i] = mx + std::log((s.array() - mx).exp().sum()) - s[i];
  }
  return out;
}

double cf_loss(const Matrix& quantized, const Matrix& cf) { return cf_loss_per_anchor(quantized, cf).mean(); }

PretrainReport pretrain(Tokenizer& tok, const ItemTable& semantic, const ItemTable* cf,
                        const std::vector<ItemId>& items, const PretrainOptions& options) {
  if (options.lambda < 0.0) throw std::invalid_argument("pretrain: lambda must be non-negative");
  if (options.lambda > 0.0 && cf == nullptr) throw std::invalid_argument("pretrain: CF table required when lambda > 0");
  if (items.empty()) throw std::invalid_argument("pretrain: no items");
  PretrainReport report;
  const Matrix all_z = semantic.gather(items);
  auto mean_recon = [&]() {
    const Matrix rec = tok.decoder.forward(tok.quantize_batch(all_z));
    return (all_z - rec).rowwise().squaredNorm().mean() / static_cast<double>(all_z.cols());
  };
  if (options.steps <= 0) {
    report.initial_recon = report.final_recon = mean_recon();
    return report;
  }
  Rng rng(options.seed);
  if (options.kmeans_init) tok.init_codebooks_kmeans(all_z, rng);

  // CF rows are gathered only for items the table covers.
  const bool use_cf = options.lambda > 0.0;
  std::vector<ItemId> pool;
  for (ItemId id : items) {
    if (!use_cf || cf->contains(id)) pool.push_back(id);
  }
  if (pool.empty()) throw std::invalid_argument("pretrain: no item has a CF embedding");
  const auto batch = std::min<std::size_t>(options.batch_size, pool.size());

  auto run = [&](const std::vector<ItemId>& ids, bool train) {
    const Matrix z = semantic.gather(ids);
    Matrix h;
    BatchInputs in;
    in.semantic = &z;
    in.mu = options.mu;
    if (use_cf && ids.size() > 1) {
      h = cf->gather(ids);
      in.cf = &h;
    }
    TokenizerPass pass(tok, in);
    const auto n = static_cast<double>(ids.size());
    const auto& l = pass.losses();
    double loss = (l.recon.sum() + l.rq.sum()) / n;
    if (in.cf != nullptr) loss += options.lambda * l.cf.sum() / n;
    if (!std::isfinite(loss)) throw Error("tokenizer pretraining diverged: non-finite loss");
    if (train) {
      LossCoefficients c;
      c.recon = Vector::Constant(ids.size(), 1.0 / n);
      c.rq = c.recon;
      if (in.cf != nullptr) c.cf = Vector::Constant(ids.size(), options.lambda / n);
      pass.backward(tok, c);
    }
    return std::pair{loss, pass.codes()};
  };

  std::vector<ItemId> probe(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch));
  report.initial_recon = mean_recon();
  report.initial_loss = run(probe, false).first;

  nn::AdamOptions adam_options;
  adam_options.lr = options.lr;
  nn::Adam adam(adam_options);
  const auto params = tok.params();
  const int levels = tok.config().levels;
  const int codes = tok.config().codes;
  std::vector<std::vector<char>> used(levels, std::vector<char>(codes, 0));
  std::vector<ItemId> order = pool;
  std::size_t cursor = order.size();
  for (int step = 0; step < options.steps; ++step) {
    if (cursor + batch > order.size()) {
      if (options.reseed_dead_codes && step > 0) {
        // End of an epoch: unused codes jump to a random residual.
        const Matrix z = semantic.gather(pool);
        Matrix v = tok.encode_batch(z);
        std::uniform_int_distribution<Eigen::Index> pick(0, v.rows() - 1);
        for (int l = 0; l < levels; ++l) {
          Matrix& e = tok.codebooks.levels[l].value;
          const Matrix d = squared_distances(v, e);
          std::vector<int> assign(v.rows());
          for (Eigen::Index i = 0; i < v.rows(); ++i) assign[i] = argmin_row(d.row(i));
          for (int m = 0; m < codes; ++m) {
            if (!used[l][m]) {
              e.row(m) = v.row(pick(rng));
              ++report.reseeded_codes;
            }
          }
          for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) -= e.row(assign[i]);
          std::fill(used[l].begin(), used[l].end(), 0);
        }
      }
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<ItemId> ids(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                            order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;
    nn::zero_grads(params);
    const auto codes_used = run(ids, true).second;
    for (const auto& row : codes_used) {
      for (int l = 0; l < levels; ++l) used[l][row[l]] = 1;
    }
    nn::clip_grad_norm(params, options.grad_clip);
    adam.step(params);
  }
  nn::zero_grads(params);
  report.final_recon = mean_recon();
  report.final_loss = run(probe, false).first;
  return report;
}

IdentifierMap assign_identifiers(const Tokenizer& tok, const ItemTable& semantic,
                                 const std::vector<ItemId>& items) {
  std::vector<ItemId> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  IdentifierMap out;
  if (sorted.empty()) return out;
  const auto codes = tok.codes_batch(semantic.gather(sorted));
  std::map<std::vector<int>, int> next_suffix;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    TokenSequence s;
    s.item_id = sorted[k];
    s.codes = codes[k];
    s.dedup_suffix = next_suffix[s.codes]++;
    out.emplace(s.item_id, std::move(s));
  }
  return out;
}

double collision_rate(const IdentifierMap& ids) {
  if (ids.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& [id, s] : ids) n += s.dedup_suffix > 0 ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(ids.size());
}

int max_suffix(const IdentifierMap& ids) {
  int m = 0;
  for (const auto& [id, s] : ids) m = std::max(m, s.dedup_suffix);
  return m;
}

std::string identifiers_to_tsv(const IdentifierMap& ids) {
  std::ostringstream os;
  for (const auto& [id, s] : ids) {
    os << id;
    for (int c : s.codes) os << '\t' << c;
    os << '\t' << s.dedup_suffix << '\n';
  }
  return os.str();
}

IdentifierMap identifiers_from_tsv(const std::string& text) {
  IdentifierMap out;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<long long> fields;
    long long v = 0;
    while (ls >> v) fields.push_back(v);
    if (fields.size() < 3 || !ls.eof()) throw Error("identifier TSV line " + std::to_string(line_no) + " is malformed");
    TokenSequence s;
    s.item_id = fields.front();
    for (std::size_t k = 1; k + 1 < fields.size(); ++k) s.codes.push_back(static_cast<int>(fields[k]));
    s.dedup_suffix = static_cast<int>(fields.back());
    out.emplace(s.item_id, std::move(s));
  }
  return out;
}

}  // namespace dact::rq
