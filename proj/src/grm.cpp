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

#include "dact/grm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dact/metrics.hpp"

namespace dact::grm {

std::vector<int> TokenVocab::item_tokens(const rq::TokenSequence& s) const {
  if (static_cast<int>(s.codes.size()) != levels) throw std::invalid_argument("identifier has the wrong number of levels");
  if (s.dedup_suffix < 0 || s.dedup_suffix >= max_suffix) {
    throw Error("dedup suffix " + std::to_string(s.dedup_suffix) + " exceeds the vocabulary's " +
                std::to_string(max_suffix) + " suffix tokens");
  }
  std::vector<int> out;
  out.reserve(levels + 1);
  for (int l = 0; l < levels; ++l) {
    if (s.codes[l] < 0 || s.codes[l] >= codes) throw std::invalid_argument("code out of range");
    out.push_back(code_token(l, s.codes[l]));
  }
  out.push_back(suffix_token(s.dedup_suffix));
  return out;
}

void GrmConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument("d_model must be a positive multiple of heads");
  }
  if (layers < 1 || ffn_dim < 1 || max_items < 1) throw std::invalid_argument("GRM sizes must be positive");
  if (vocab.levels < 1 || vocab.codes < 2 || vocab.max_suffix < 1) throw std::invalid_argument("bad GRM vocabulary");
}

nlohmann::json GrmConfig::to_json() const {
  return {{"d_model", d_model}, {"heads", heads},          {"layers", layers},        {"ffn_dim", ffn_dim},
          {"max_items", max_items}, {"levels", vocab.levels}, {"codes", vocab.codes}, {"max_suffix", vocab.max_suffix}};
}

GrmConfig GrmConfig::from_json(const nlohmann::json& j) {
  GrmConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_items = j.at("max_items").get<int>();
  c.vocab.levels = j.at("levels").get<int>();
  c.vocab.codes = j.at("codes").get<int>();
  c.vocab.max_suffix = j.at("max_suffix").get<int>();
  return c;
}

IdentifierTrie::IdentifierTrie(const rq::IdentifierMap& ids, const TokenVocab& vocab) {
  nodes_.emplace_back();
  depth_ = vocab.tokens_per_item();
  for (const auto& [id, seq] : ids) {
    int node = kRoot;
    for (int t : vocab.item_tokens(seq)) {
      auto it = nodes_[node].children.find(t);
      if (it == nodes_[node].children.end()) {
        nodes_.emplace_back();
        const int child = static_cast<int>(nodes_.size()) - 1;
        nodes_[node].children.emplace(t, child);
        node = child;
      } else {
        node = it->second;
      }
    }
    if (nodes_[node].item) throw Error("two items share identifier path; item " + std::to_string(id));
    nodes_[node].item = id;
    ++items_;
  }
}

std::optional<ItemId> IdentifierTrie::lookup(const std::vector<int>& tokens) const {
  int node = kRoot;
  for (int t : tokens) {
    const auto it = nodes_[node].children.find(t);
    if (it == nodes_[node].children.end()) return std::nullopt;
    node = it->second;
  }
  return nodes_[node].item;
}

std::vector<int> encode_history(const rq::IdentifierMap& ids, const std::vector<ItemId>& history, int max_items,
                                const TokenVocab& vocab) {
  std::vector<int> out{vocab.bos()};
  const std::size_t begin = history.size() > static_cast<std::size_t>(max_items) ? history.size() - max_items : 0;
  for (std::size_t k = begin; k < history.size(); ++k) {
    const auto it = ids.find(history[k]);
    if (it == ids.end()) throw std::invalid_argument("encode_history: item " + std::to_string(history[k]) + " has no identifier");
    const auto t = vocab.item_tokens(it->second);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.push_back(vocab.eos());
  return out;
}

Example make_example(const rq::IdentifierMap& ids, const data::Window& w, const GrmConfig& config) {
  Example ex;
  ex.input = encode_history(ids, w.context, config.max_items, config.vocab);
  const auto it = ids.find(w.target);
  if (it == ids.end()) throw std::invalid_argument("target item " + std::to_string(w.target) + " has no identifier");
  ex.target = config.vocab.item_tokens(it->second);
  ex.input.insert(ex.input.end(), ex.target.begin(), ex.target.end() - 1);
  return ex;
}

namespace {

nn::Linear small_linear(int in, int out, Rng& rng) { return nn::Linear(in, out, rng, 0.02); }

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

void softmax_rows_inplace(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

RowVector log_softmax(const RowVector& x) {
  const double mx = x.maxCoeff();
  const double lse = mx + std::log((x.array() - mx).exp().sum());
  return x.array() - lse;
}

}  // namespace

Grm::Grm(const GrmConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  token_embedding_ = nn::Param(gaussian_matrix(config_.vocab.size(), d, 0.02, rng));
  position_embedding_ = nn::Param(gaussian_matrix(config_.max_positions(), d, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    Block b;
    b.ln1 = nn::LayerNorm(d);
    b.ln2 = nn::LayerNorm(d);
    b.wq = small_linear(d, d, rng);
    b.wk = small_linear(d, d, rng);
    b.wv = small_linear(d, d, rng);
    b.wo = small_linear(d, d, rng);
    b.ff1 = small_linear(d, config_.ffn_dim, rng);
    b.ff2 = small_linear(config_.ffn_dim, d, rng);
    blocks_.push_back(std::move(b));
  }
  final_norm_ = nn::LayerNorm(d);
  head_ = small_linear(d, config_.vocab.size(), rng);
}

Matrix Grm::embed(const std::vector<int>& tokens, int offset) const {
  const int n = static_cast<int>(tokens.size());
  if (offset + n > config_.max_positions()) throw std::invalid_argument("sequence longer than the GRM position table");
  Matrix x(n, config_.d_model);
  for (int i = 0; i < n; ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab.size()) throw std::invalid_argument("token id out of range");
    x.row(i) = token_embedding_.value.row(tokens[i]) + position_embedding_.value.row(offset + i);
  }
  return x;
}

double Grm::batch_loss(const std::vector<Example>& batch, bool train) {
  if (batch.empty()) return 0.0;
  const int d = config_.d_model;
  const int heads = config_.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int> starts;
  int total = 0;
  for (const auto& ex : batch) {
    starts.push_back(total);
    total += static_cast<int>(ex.input.size());
  }
  Matrix x(total, d);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    x.middleRows(starts[s], static_cast<Eigen::Index>(batch[s].input.size())) = embed(batch[s].input, 0);
  }

  struct BlockCache {
    Matrix x_in, h1, q, k, v, ctx, x_mid, h2, f_pre, f_act;
    nn::LayerNorm::Cache ln1, ln2;
    std::vector<Matrix> attn;  // per (sequence, head)
  };
  std::vector<BlockCache> caches(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    BlockCache& c = caches[l];
    c.x_in = x;
    c.h1 = b.ln1.forward(x, c.ln1);
    c.q = b.wq.forward(c.h1);
    c.k = b.wk.forward(c.h1);
    c.v = b.wv.forward(c.h1);
    c.ctx = Matrix::Zero(total, d);
    c.attn.resize(batch.size() * heads);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const int st = starts[s];
      const int n = static_cast<int>(batch[s].input.size());
      for (int h = 0; h < heads; ++h) {
        Matrix sc = c.q.block(st, h * dh, n, dh) * c.k.block(st, h * dh, n, dh).transpose() * scale;
        for (int i = 0; i < n; ++i) {
          for (int j = i + 1; j < n; ++j) sc(i, j) = -std::numeric_limits<double>::infinity();
        }
        softmax_rows_inplace(sc);
        c.ctx.block(st, h * dh, n, dh) = sc * c.v.block(st, h * dh, n, dh);
        c.attn[s * heads + h] = std::move(sc);
      }
    }
    x = c.x_in + b.wo.forward(c.ctx);
    c.x_mid = x;
    c.h2 = b.ln2.forward(x, c.ln2);
    c.f_pre = b.ff1.forward(c.h2);
    c.f_act = relu(c.f_pre);
    x = c.x_mid + b.ff2.forward(c.f_act);
  }

  // Rows that predict the target tokens: from eos up to the last input.
  const int levels = config_.vocab.tokens_per_item();
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const int n = static_cast<int>(batch[s].input.size());
    for (int j = 0; j < levels; ++j) {
      rows.push_back(starts[s] + n - levels + j);
      targets.push_back(batch[s].target[j]);
    }
  }
  Matrix xr(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) xr.row(r) = x.row(rows[r]);
  nn::LayerNorm::Cache final_cache;
  const Matrix yr = final_norm_.forward(xr, final_cache);
  Matrix logits = head_.forward(yr);
  double loss = 0.0;
  Matrix probs = logits;
  softmax_rows_inplace(probs);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    loss -= log_softmax(logits.row(r))[targets[r]];
  }
  const double n_targets = static_cast<double>(rows.size());
  loss /= n_targets;
  if (!std::isfinite(loss)) throw Error("GRM training diverged: non-finite loss");
  if (!train) return loss;

  Matrix d_logits = probs;
  for (std::size_t r = 0; r < rows.size(); ++r) d_logits(r, targets[r]) -= 1.0;
  d_logits /= n_targets;
  const Matrix d_yr = head_.backward(yr, d_logits);
  const Matrix d_xr = final_norm_.backward(final_cache, d_yr);
  Matrix dx = Matrix::Zero(total, d);
  for (std::size_t r = 0; r < rows.size(); ++r) dx.row(rows[r]) += d_xr.row(r);

  for (std::size_t li = blocks_.size(); li-- > 0;) {
    Block& b = blocks_[li];
    const BlockCache& c = caches[li];
    const Matrix d_fact = b.ff2.backward(c.f_act, dx);
    const Matrix d_fpre = (c.f_pre.array() > 0.0).select(d_fact, 0.0);
    const Matrix d_h2 = b.ff1.backward(c.h2, d_fpre);
    const Matrix d_mid = dx + b.ln2.backward(c.ln2, d_h2);
    const Matrix d_ctx = b.wo.backward(c.ctx, d_mid);
    Matrix dq = Matrix::Zero(total, d);
    Matrix dk = Matrix::Zero(total, d);
    Matrix dv = Matrix::Zero(total, d);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const int st = starts[s];
      const int n = static_cast<int>(batch[s].input.size());
      for (int h = 0; h < heads; ++h) {
        const Matrix& a = c.attn[s * heads + h];
        const Matrix d_o = d_ctx.block(st, h * dh, n, dh);
        dv.block(st, h * dh, n, dh) = a.transpose() * d_o;
        const Matrix d_a = d_o * c.v.block(st, h * dh, n, dh).transpose();
        Matrix d_s = a.cwiseProduct(d_a);
        const Vector inner = d_s.rowwise().sum();
        d_s -= a.cwiseProduct(inner.replicate(1, n));
        d_s *= scale;
        dq.block(st, h * dh, n, dh) = d_s * c.k.block(st, h * dh, n, dh);
        dk.block(st, h * dh, n, dh) = d_s.transpose() * c.q.block(st, h * dh, n, dh);
      }
    }
    Matrix d_h1 = b.wq.backward(c.h1, dq);
    d_h1 += b.wk.backward(c.h1, dk);
    d_h1 += b.wv.backward(c.h1, dv);
    dx = d_mid + b.ln1.backward(c.ln1, d_h1);
  }
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& in = batch[s].input;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const RowVector g = dx.row(starts[s] + static_cast<int>(i));
      token_embedding_.grad.row(in[i]) += g;
      position_embedding_.grad.row(static_cast<Eigen::Index>(i)) += g;
    }
  }
  return loss;
}

Grm::PrefixCache Grm::prefix_cache(const std::vector<int>& prefix) const {
  if (prefix.empty()) throw std::invalid_argument("prefix_cache: empty prefix");
  PrefixCache cache;
  cache.length = static_cast<int>(prefix.size());
  const int n = cache.length;
  const int d = config_.d_model;
  const int dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix x = embed(prefix, 0);
  for (const Block& b : blocks_) {
    const Matrix h1 = b.ln1.forward(x);
    const Matrix q = b.wq.forward(h1);
    Matrix k = b.wk.forward(h1);
    Matrix v = b.wv.forward(h1);
    Matrix ctx(n, d);
    for (int h = 0; h < config_.heads; ++h) {
      Matrix sc = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) sc(i, j) = -std::numeric_limits<double>::infinity();
      }
      softmax_rows_inplace(sc);
      ctx.middleCols(h * dh, dh) = sc * v.middleCols(h * dh, dh);
    }
    x += b.wo.forward(ctx);
    x += b.ff2.forward(relu(b.ff1.forward(b.ln2.forward(x))));
    cache.keys.push_back(std::move(k));
    cache.values.push_back(std::move(v));
  }
  cache.last_hidden = x.bottomRows(1);
  return cache;
}

RowVector Grm::next_logits(const PrefixCache& cache, const std::vector<int>& suffix) const {
  if (suffix.empty()) return head_.forward(final_norm_.forward(cache.last_hidden)).row(0);
  const int m = static_cast<int>(suffix.size());
  const int n = cache.length;
  const int d = config_.d_model;
  const int dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix x = embed(suffix, n);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const Matrix h1 = b.ln1.forward(x);
    const Matrix q = b.wq.forward(h1);
    Matrix k(n + m, d);
    Matrix v(n + m, d);
    k << cache.keys[l], b.wk.forward(h1);
    v << cache.values[l], b.wv.forward(h1);
    Matrix ctx(m, d);
    for (int h = 0; h < config_.heads; ++h) {
      Matrix sc = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (int i = 0; i < m; ++i) {
        for (int j = n + i + 1; j < n + m; ++j) sc(i, j) = -std::numeric_limits<double>::infinity();
      }
      softmax_rows_inplace(sc);
      ctx.middleCols(h * dh, dh) = sc * v.middleCols(h * dh, dh);
    }
    x += b.wo.forward(ctx);
    x += b.ff2.forward(relu(b.ff1.forward(b.ln2.forward(x))));
  }
  return head_.forward(final_norm_.forward(x.bottomRows(1))).row(0);
}

RowVector Grm::next_logits(const std::vector<int>& prefix) const {
  // Full causal pass, independent of the cached path.
  const int n = static_cast<int>(prefix.size());
  const int d = config_.d_model;
  const int dh = d / config_.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix x = embed(prefix, 0);
  for (const Block& b : blocks_) {
    const Matrix h1 = b.ln1.forward(x);
    const Matrix q = b.wq.forward(h1);
    const Matrix k = b.wk.forward(h1);
    const Matrix v = b.wv.forward(h1);
    Matrix ctx(n, d);
    for (int h = 0; h < config_.heads; ++h) {
      Matrix sc = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) sc(i, j) = -std::numeric_limits<double>::infinity();
      }
      softmax_rows_inplace(sc);
      ctx.middleCols(h * dh, dh) = sc * v.middleCols(h * dh, dh);
    }
    x += b.wo.forward(ctx);
    x += b.ff2.forward(relu(b.ff1.forward(b.ln2.forward(x))));
  }
  return head_.forward(final_norm_.forward(x.bottomRows(1))).row(0);
}

std::vector<nn::NamedParam> Grm::params() {
  std::vector<nn::NamedParam> out{{"token_embedding", &token_embedding_}, {"position_embedding", &position_embedding_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    Block& b = blocks_[l];
    b.ln1.append_params(p + ".ln1", out);
    b.wq.append_params(p + ".wq", out);
    b.wk.append_params(p + ".wk", out);
    b.wv.append_params(p + ".wv", out);
    b.wo.append_params(p + ".wo", out);
    b.ln2.append_params(p + ".ln2", out);
    b.ff1.append_params(p + ".ff1", out);
    b.ff2.append_params(p + ".ff2", out);
  }
  final_norm_.append_params("final_norm", out);
  head_.append_params("head", out);
  return out;
}

std::vector<nn::ConstNamedParam> Grm::params() const {
  std::vector<nn::ConstNamedParam> out;
  for (const auto& p : const_cast<Grm*>(this)->params()) out.push_back({p.name, p.param});
  return out;
}

ArrayBundle Grm::to_bundle() const {
  ArrayBundle b;
  b.meta["kind"] = "grm";
  b.meta["config"] = config_.to_json();
  b.meta["period_index"] = period_index;
  for (const auto& p : params()) b.arrays["grm." + p.name] = p.param->value;
  return b;
}

Grm Grm::from_bundle(const ArrayBundle& bundle) {
  Rng rng(0);
  Grm g(GrmConfig::from_json(bundle.meta.at("config")), rng);
  g.period_index = bundle.meta.at("period_index").get<int>();
  for (auto& p : g.params()) {
    const Matrix& m = bundle.at("grm." + p.name);
    if (m.rows() != p.param->value.rows() || m.cols() != p.param->value.cols()) {
      throw Error("GRM checkpoint: shape mismatch for " + p.name);
    }
    p.param->value = m;
    p.param->zero_grad();
  }
  return g;
}

double mean_nll(Grm& model, const std::vector<Example>& examples) {
  if (examples.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t b = 0; b < examples.size(); b += 64) {
    const std::vector<Example> chunk(examples.begin() + static_cast<std::ptrdiff_t>(b),
                                     examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), b + 64)));
    s += model.batch_loss(chunk, false) * static_cast<double>(chunk.size());
  }
  return s / static_cast<double>(examples.size());
}

TrainReport train_grm(Grm& model, const std::vector<data::Window>& windows, const rq::IdentifierMap& ids,
                      const TrainOptions& options) {
  TrainReport report;
  std::vector<Example> examples;
  examples.reserve(windows.size());
  for (const auto& w : windows) examples.push_back(make_example(ids, w, model.config()));
  report.examples = examples.size();
  if (examples.empty()) return report;
  const std::vector<Example> probe(examples.begin(),
                                   examples.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(64, examples.size())));
  report.initial_loss = model.batch_loss(probe, false);
  if (options.epochs <= 0) {
    report.final_loss = report.initial_loss;
    return report;
  }
  Rng rng(options.seed);
  nn::AdamOptions adam_options;
  adam_options.lr = options.lr;
  nn::Adam adam(adam_options);
  const auto params = model.params();
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += bs) {
      std::vector<Example> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) batch.push_back(examples[order[k]]);
      nn::zero_grads(params);
      model.batch_loss(batch, true);
      nn::clip_grad_norm(params, options.grad_clip);
      adam.step(params);
    }
  }
  nn::zero_grads(params);
  report.final_loss = model.batch_loss(probe, false);
  return report;
}

namespace {

struct Beam {
  int node = IdentifierTrie::kRoot;
  std::vector<int> tokens;
  double score = 0.0;
};

// Log-probabilities of the trie children of a node, renormalized over the
// valid children only.
std::vector<std::pair<int, double>> child_scores(const RowVector& logits, const std::map<int, int>& children) {
  std::vector<std::pair<int, double>> out;
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& [tok, child] : children) mx = std::max(mx, logits[tok]);
  double z = 0.0;
  for (const auto& [tok, child] : children) z += std::exp(logits[tok] - mx);
  const double lse = mx + std::log(z);
  for (const auto& [tok, child] : children) out.emplace_back(tok, logits[tok] - lse);
  return out;
}

bool better(const Recommendation& a, const Recommendation& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item_id < b.item_id;
}

}  // namespace

std::vector<Recommendation> recommend(const Grm& model, const IdentifierTrie& trie, const std::vector<int>& history,
                                      int k, int beam_width) {
  if (trie.empty()) throw std::invalid_argument("recommend: empty identifier trie");
  if (beam_width < k) throw std::invalid_argument("recommend: beam width must be at least k");
  const auto cache = model.prefix_cache(history);
  std::vector<Beam> beams{Beam{}};
  for (int step = 0; step < trie.depth(); ++step) {
    std::vector<Beam> next;
    for (const auto& b : beams) {
      const auto& children = trie.children(b.node);
      if (children.empty()) continue;
      const RowVector logits = model.next_logits(cache, b.tokens);
      for (const auto& [tok, lp] : child_scores(logits, children)) {
        Beam nb;
        nb.node = children.at(tok);
        nb.tokens = b.tokens;
        nb.tokens.push_back(tok);
        nb.score = b.score + lp;
        next.push_back(std::move(nb));
      }
    }
    std::sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.tokens < b.tokens;
    });
    if (static_cast<int>(next.size()) > beam_width) next.resize(beam_width);
    beams = std::move(next);
  }
  std::vector<Recommendation> out;
  std::set<ItemId> seen;
  for (const auto& b : beams) {
    const auto item = trie.leaf_item(b.node);
    if (item && seen.insert(*item).second) out.push_back({*item, b.score});
  }
  std::sort(out.begin(), out.end(), better);
  if (static_cast<int>(out.size()) > k) out.resize(k);
  return out;
}

std::vector<Recommendation> exhaustive_ranking(const Grm& model, const IdentifierTrie& trie,
                                               const std::vector<int>& history) {
  std::vector<Recommendation> out;
  // Depth-first over every path; each prefix is scored with a full pass.
  std::vector<std::pair<Beam, int>> stack{{Beam{}, 0}};
  while (!stack.empty()) {
    auto [b, depth] = stack.back();
    stack.pop_back();
    if (depth == trie.depth()) {
      if (const auto item = trie.leaf_item(b.node)) out.push_back({*item, b.score});
      continue;
    }
    std::vector<int> prefix = history;
    prefix.insert(prefix.end(), b.tokens.begin(), b.tokens.end());
    const RowVector logits = model.next_logits(prefix);
    const auto& children = trie.children(b.node);
    for (const auto& [tok, lp] : child_scores(logits, children)) {
      Beam nb;
      nb.node = children.at(tok);
      nb.tokens = b.tokens;
      nb.tokens.push_back(tok);
      nb.score = b.score + lp;
      stack.emplace_back(std::move(nb), depth + 1);
    }
  }
  std::sort(out.begin(), out.end(), better);
  return out;
}

std::map<std::string, double> metrics_from_ranks(const std::vector<std::optional<int>>& ranks,
                                                 const std::vector<int>& ks) {
  std::map<std::string, double> m;
  for (int k : ks) {
    double h = 0.0;
    double n = 0.0;
    for (const auto& r : ranks) {
      h += metrics::hit_at(r, k);
      n += metrics::ndcg_at(r, k);
    }
    const double users = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
    m["H@" + std::to_string(k)] = h / users;
    m["N@" + std::to_string(k)] = n / users;
  }
  return m;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json j = metrics;
  j["users"] = users;
  j["warm_users"] = warm_users;
  j["cold_users"] = cold_users;
  return j;
}

EvalResult evaluate(const Grm& model, const rq::IdentifierMap& ids, const std::vector<data::Window>& windows,
                    const std::vector<int>& ks, int beam_width, const std::set<ItemId>& warm_items) {
  if (ks.empty()) throw std::invalid_argument("evaluate: no cutoffs");
  const int kmax = *std::max_element(ks.begin(), ks.end());
  const IdentifierTrie trie(ids, model.config().vocab);
  EvalResult r;
  std::vector<std::optional<int>> warm, cold;
  for (const auto& w : windows) {
    const auto history = encode_history(ids, w.context, model.config().max_items, model.config().vocab);
    const auto recs = recommend(model, trie, history, kmax, std::max(beam_width, kmax));
    std::optional<int> rank;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].item_id == w.target) {
        rank = static_cast<int>(i) + 1;
        break;
      }
    }
    r.ranks.push_back(rank);
    (warm_items.count(w.target) ? warm : cold).push_back(rank);
  }
  r.users = r.ranks.size();
  r.warm_users = warm.size();
  r.cold_users = cold.size();
  r.metrics = metrics_from_ranks(r.ranks, ks);
  for (const auto& [name, v] : metrics_from_ranks(warm, ks)) r.metrics[name + "_warm"] = warm.empty() ? 0.0 : v;
  for (const auto& [name, v] : metrics_from_ranks(cold, ks)) r.metrics[name + "_cold"] = cold.empty() ? 0.0 : v;
  return r;
}

}  // namespace dact::grm
