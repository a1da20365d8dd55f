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

#include "dact/drift_adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dact::adapt {

void LossWeights::validate() const {
  for (double v : {lambda, mu, alpha_anchor, theta, beta, zeta}) {
    if (v < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(k_ratio > 0.0 && k_ratio < 1.0)) throw std::invalid_argument("k_ratio must lie strictly in (0, 1)");
  if (!(t_global > 0.0)) throw std::invalid_argument("t_global must be positive");
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda", lambda}, {"mu", mu},     {"alpha_anchor", alpha_anchor}, {"theta", theta},
          {"beta", beta},     {"zeta", zeta}, {"k_ratio", k_ratio},           {"t_global", t_global}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  w.lambda = j.at("lambda").get<double>();
  w.mu = j.at("mu").get<double>();
  w.alpha_anchor = j.at("alpha_anchor").get<double>();
  w.theta = j.at("theta").get<double>();
  w.beta = j.at("beta").get<double>();
  w.zeta = j.at("zeta").get<double>();
  w.k_ratio = j.at("k_ratio").get<double>();
  w.t_global = j.at("t_global").get<double>();
  return w;
}

DriftPartition split_topk(const std::vector<ItemId>& items, const Vector& confidences, double k_ratio) {
  if (items.size() < 2) throw std::invalid_argument("split_topk: need at least two items");
  if (static_cast<std::size_t>(confidences.size()) != items.size()) {
    throw std::invalid_argument("split_topk: confidences misaligned with items");
  }
  if (!(k_ratio > 0.0 && k_ratio < 1.0)) throw std::invalid_argument("split_topk: k_ratio must lie in (0, 1)");
  const auto b = items.size();
  // A small epsilon keeps exact products such as 0.3 * 10 from rounding up.
  const auto k = static_cast<std::size_t>(std::ceil(k_ratio * static_cast<double>(b) - 1e-9));
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    if (confidences[a] != confidences[c]) return confidences[a] > confidences[c];
    return items[a] < items[c];
  });
  DriftPartition part;
  part.mask.assign(b, 0);
  for (std::size_t r = 0; r < k; ++r) part.mask[order[r]] = 1;
  for (std::size_t i = 0; i < b; ++i) (part.mask[i] ? part.drift_set : part.stable_set).push_back(items[i]);
  return part;
}

AdaptationSnapshot AdaptationSnapshot::build(const rq::Tokenizer& prev, const ItemTable& semantic,
                                             const std::vector<ItemId>& items, double t_global) {
  AdaptationSnapshot s;
  s.t_global = t_global;
  const Matrix v = prev.encode_batch(semantic.gather(items));
  Matrix probs(v.rows(), prev.config().codes);
  for (Eigen::Index i = 0; i < v.rows(); ++i) probs.row(i) = prev.codebooks.distribution(v.row(i), 0, t_global);
  s.prev_latent = ItemTable(items, v);
  s.prev_probs = ItemTable(items, std::move(probs));
  return s;
}

double overall_objective(const ObjectiveTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {
      {"drift", t.drift}, {"stable", t.stable}, {"global", t.global}, {"reg", t.reg}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw Error(std::string("non-finite ") + name + " loss");
  }
  return t.drift + w.theta * t.stable + w.beta * t.global + w.zeta * t.reg;
}

namespace {

double cf_term(const rq::PerItemLosses& l, Eigen::Index i) { return l.cf.size() > 0 ? l.cf[i] : 0.0; }

}  // namespace

double drift_loss(const rq::PerItemLosses& l, const std::vector<int>& mask, double lambda) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto k = static_cast<Eigen::Index>(i);
    s += l.recon[k] + l.rq[k] + lambda * cf_term(l, k);
    ++n;
  }
  return n > 0 ? s / n : 0.0;
}

double stable_loss(const rq::PerItemLosses& l, const std::vector<int>& mask, double alpha, double lambda) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) continue;
    const auto k = static_cast<Eigen::Index>(i);
    if (l.anchor.size() == 0) throw std::invalid_argument("stable_loss: snapshot latents missing");
    s += l.recon[k] + l.rq[k] + alpha * l.anchor[k] + lambda * cf_term(l, k);
    ++n;
  }
  return n > 0 ? s / n : 0.0;
}

double kl_divergence(const RowVector& p, const RowVector& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  for (const RowVector* v : {&p, &q}) {
    if ((v->array() < 0.0).any() || std::abs(v->sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("kl_divergence: argument is not a probability vector");
    }
  }
  double kl = 0.0;
  for (Eigen::Index m = 0; m < p.size(); ++m) {
    if (p[m] <= 0.0) continue;
    if (q[m] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[m] * std::log(p[m] / q[m]);
  }
  return std::max(0.0, kl);
}

double global_kl(const rq::Tokenizer& tok, const AdaptationSnapshot& snap, const ItemTable& semantic,
                 const std::vector<ItemId>& items) {
  if (items.empty()) return 0.0;
  const Matrix v = tok.encode_batch(semantic.gather(items));
  double s = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const RowVector cur = tok.codebooks.distribution(v.row(static_cast<Eigen::Index>(i)), 0, snap.t_global);
    s += kl_divergence(snap.prev_probs.row(items[i]), cur);
  }
  return s / static_cast<double>(items.size());
}

BatchResult batch_objective(rq::Tokenizer& tok, cdim::PatternMemory& mem, const AdaptationSnapshot& snap,
                            const ItemTable& semantic, const ItemTable& cf, const std::vector<ItemId>& batch,
                            const LossWeights& w, bool accumulate, GateMode gate,
                            const std::vector<int>* forced_mask) {
  for (ItemId id : batch) {
    if (!snap.prev_latent.contains(id)) {
      throw std::invalid_argument("snapshot does not cover item " + std::to_string(id));
    }
  }
  const auto b = static_cast<Eigen::Index>(batch.size());
  const Matrix z = semantic.gather(batch);
  const Matrix h = cf.gather(batch);
  const Matrix r_prev = snap.prev_latent.gather(batch);
  const Matrix p_prev = snap.prev_probs.gather(batch);
  rq::BatchInputs in;
  in.semantic = &z;
  in.cf = &h;
  in.prev_latent = &r_prev;
  in.prev_probs = &p_prev;
  in.mu = w.mu;
  in.kl_temperature = w.t_global;
  rq::TokenizerPass pass(tok, in);

  const Matrix q = cdim::build_queries(r_prev, pass.latent(), h);
  const auto mp = mem.forward(q);

  BatchResult out;
  out.confidences = mp.d;
  if (forced_mask != nullptr) {
    if (forced_mask->size() != batch.size()) throw std::invalid_argument("forced mask misaligned with batch");
    out.partition.mask = *forced_mask;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ((*forced_mask)[i] ? out.partition.drift_set : out.partition.stable_set).push_back(batch[i]);
    }
  } else {
    out.partition = split_topk(batch, mp.d, w.k_ratio);
  }
  const auto& mask = out.partition.mask;
  const auto& l = pass.losses();
  out.terms.drift = drift_loss(l, mask, w.lambda);
  out.terms.stable = stable_loss(l, mask, w.alpha_anchor, w.lambda);
  out.terms.global = l.kl.mean();
  out.terms.reg = cdim::reg_loss(mp.d);
  out.total = overall_objective(out.terms, w);
  if (!accumulate) return out;

  const double nd = static_cast<double>(out.partition.drift_set.size());
  const double ns = static_cast<double>(out.partition.stable_set.size());
  const double inv_d = nd > 0 ? 1.0 / nd : 0.0;
  const double inv_s = ns > 0 ? w.theta / ns : 0.0;
  rq::LossCoefficients c;
  c.recon.resize(b);
  c.anchor.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    c.recon[i] = mask[i] ? inv_d : inv_s;
    c.anchor[i] = mask[i] ? 0.0 : inv_s * w.alpha_anchor;
  }
  c.rq = c.recon;
  c.cf = w.lambda * c.recon;
  c.kl = Vector::Constant(b, w.beta / static_cast<double>(b));
  pass.backward(tok, c);

  // Drift gate m + d - sg(d), stable gate (1 - m) + sg(d) - d.
  Vector grad_d = (2.0 * w.zeta / static_cast<double>(b)) * mp.d;
  if (gate == GateMode::kStraightThrough) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const double ld = l.recon[i] + l.rq[i] + w.lambda * l.cf[i];
      const double ls = ld + w.alpha_anchor * l.anchor[i];
      grad_d[i] += ld * inv_d - ls * inv_s;
    }
  }
  mem.backward(mp, grad_d);
  return out;
}

std::map<ItemId, double> final_confidences(const rq::Tokenizer& tok, const cdim::PatternMemory& mem,
                                           const AdaptationSnapshot& snap, const ItemTable& cf,
                                           const ItemTable& semantic, const std::vector<ItemId>& items) {
  std::map<ItemId, double> out;
  if (items.empty()) return out;
  const Matrix q = cdim::build_queries(snap.prev_latent.gather(items), tok.encode_batch(semantic.gather(items)),
                                       cf.gather(items));
  const auto p = mem.forward(q);
  for (std::size_t i = 0; i < items.size(); ++i) out[items[i]] = p.d[static_cast<Eigen::Index>(i)];
  return out;
}

AdaptResult adapt_period(const rq::Tokenizer& prev, const cdim::PatternMemory* mem_prev, const ItemTable& semantic,
                         const ItemTable& cf, const std::vector<ItemId>& items, const LossWeights& w,
                         const AdaptOptions& options) {
  w.validate();
  if (items.size() < 2) throw std::invalid_argument("adapt_period: need at least two items");
  Rng rng(options.seed);
  AdaptResult r;
  r.tokenizer = prev;
  for (auto& p : r.tokenizer.params()) p.param->zero_grad();
  r.memory = mem_prev != nullptr ? cdim::warm_start(*mem_prev, options.cdim) : cdim::PatternMemory(options.cdim, rng);
  const auto snap = AdaptationSnapshot::build(prev, semantic, items, w.t_global);

  const auto batch = std::min<std::size_t>(std::max(2, options.batch_size), items.size());
  std::vector<ItemId> probe(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(batch));
  r.initial_objective = batch_objective(r.tokenizer, r.memory, snap, semantic, cf, probe, w, false).total;

  auto params = r.tokenizer.params();
  for (auto& p : r.memory.params()) params.push_back({"cdim." + p.name, p.param});
  nn::AdamOptions adam_options;
  adam_options.lr = options.lr;
  nn::Adam adam(adam_options);
  std::vector<ItemId> order = items;
  std::size_t cursor = order.size();
  for (int step = 0; step < options.steps; ++step) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<ItemId> ids(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                            order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;
    nn::zero_grads(params);
    batch_objective(r.tokenizer, r.memory, snap, semantic, cf, ids, w, true);
    nn::clip_grad_norm(params, options.grad_clip);
    adam.step(params);
  }
  nn::zero_grads(params);
  r.tokenizer.period_index = prev.period_index + 1;
  r.final_objective = batch_objective(r.tokenizer, r.memory, snap, semantic, cf, probe, w, false).total;
  r.confidences = final_confidences(r.tokenizer, r.memory, snap, cf, semantic, items);
  return r;
}

}  // namespace dact::adapt
