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

#include "dact/cf_signal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "dact/array_store.hpp"
#include "dact/metrics.hpp"

namespace dact::cf {

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("cannot normalize a zero or non-finite embedding row");
    m.row(i) /= n;
  }
}

ItemTable CfModel::embeddings() const {
  Matrix m = input.matrix();
  normalize_rows(m);
  return ItemTable(input.ids(), std::move(m));
}

void CfModel::save(const std::filesystem::path& dir) const {
  ArrayBundle b;
  b.meta["kind"] = "cf_sgns";
  b.meta["period_index"] = period_index;
  b.meta["item_ids"] = input.ids();
  b.arrays["input"] = input.matrix();
  b.arrays["context"] = context.matrix();
  b.save(dir);
}

CfModel CfModel::load(const std::filesystem::path& dir) {
  const auto b = ArrayBundle::load(dir);
  CfModel m;
  m.period_index = b.meta.at("period_index").get<int>();
  const auto ids = b.meta.at("item_ids").get<std::vector<ItemId>>();
  m.input = ItemTable(ids, b.at("input"));
  m.context = ItemTable(ids, b.at("context"));
  return m;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

CfModel train_cf(const data::PeriodDataset& pd, const CfModel* prev, const SgnsOptions& options) {
  if (options.dim <= 0) throw std::invalid_argument("train_cf: d_cf must be positive");
  if (prev != nullptr && prev->input.dim() != options.dim) {
    throw std::invalid_argument("train_cf: warm-start table has a different dimension");
  }
  Rng rng(options.seed);

  // Vocabulary: previous items first (stable row order), then new ones by id.
  std::vector<ItemId> ids;
  if (prev != nullptr) ids = prev->input.ids();
  std::set<ItemId> known(ids.begin(), ids.end());
  for (ItemId i : pd.period_items()) {
    if (known.insert(i).second) ids.push_back(i);
  }
  if (ids.empty()) throw std::invalid_argument("train_cf: empty vocabulary");

  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix in(n, options.dim);
  Matrix ctx = Matrix::Zero(n, options.dim);
  std::uniform_real_distribution<double> init(-0.5 / options.dim, 0.5 / options.dim);
  const auto period_items = pd.period_items();
  for (Eigen::Index r = 0; r < n; ++r) {
    const ItemId id = ids[r];
    const bool reuse = prev != nullptr && prev->input.contains(id) &&
                       !(options.retrain && period_items.count(id));
    if (reuse) {
      in.row(r) = prev->input.row(id);
      ctx.row(r) = prev->context.row(id);
    } else {
      for (int k = 0; k < options.dim; ++k) in(r, k) = init(rng);
    }
  }
  std::unordered_map<ItemId, Eigen::Index> row_of;
  for (Eigen::Index r = 0; r < n; ++r) row_of[ids[r]] = r;

  // Per-user sequences restricted to this period's events.
  std::map<UserId, std::vector<Eigen::Index>> seqs;
  for (const auto& e : pd.events) seqs[e.user_id].push_back(row_of.at(e.item_id));
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  std::vector<double> freq(n, 0.0);
  for (const auto& [u, s] : seqs) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      freq[s[t]] += 1.0;
      const std::size_t lo = t >= static_cast<std::size_t>(options.window) ? t - options.window : 0;
      const std::size_t hi = std::min(s.size(), t + options.window + 1);
      for (std::size_t c = lo; c < hi; ++c) {
        if (c != t) pairs.emplace_back(s[t], s[c]);
      }
    }
  }

  CfModel out;
  out.period_index = pd.period_index;
  if (!pairs.empty() && options.epochs > 0) {
    for (double& f : freq) f = std::pow(f, 0.75);
    std::discrete_distribution<Eigen::Index> negative(freq.begin(), freq.end());
    const double total = static_cast<double>(pairs.size()) * options.epochs;
    double done = 0.0;
    RowVector grad_in(options.dim);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      std::shuffle(pairs.begin(), pairs.end(), rng);
      for (const auto& [center, context] : pairs) {
        const double lr = options.lr * std::max(1e-4, 1.0 - done / total);
        done += 1.0;
        grad_in.setZero();
        for (int k = 0; k <= options.negatives; ++k) {
          Eigen::Index target = context;
          double label = 1.0;
          if (k > 0) {
            target = negative(rng);
            if (target == context) continue;
            label = 0.0;
          }
          const double g = lr * (label - sigmoid(in.row(center).dot(ctx.row(target))));
          grad_in += g * ctx.row(target);
          ctx.row(target) += g * in.row(center);
        }
        in.row(center) += grad_in;
      }
    }
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!in.row(r).allFinite()) throw Error("train_cf diverged: non-finite embedding");
  }
  out.input = ItemTable(ids, std::move(in));
  out.context = ItemTable(ids, std::move(ctx));
  return out;
}

double drift_ground_truth_check(const ItemTable& cf_p, const ItemTable& cf_prev,
                                const std::set<ItemId>& drifting) {
  std::vector<double> scores;
  std::vector<bool> labels;
  for (ItemId id : cf_prev.ids()) {
    if (!cf_p.contains(id)) continue;
    const auto a = cf_p.row(id);
    const auto b = cf_prev.row(id);
    const double denom = a.norm() * b.norm();
    if (!(denom > 0.0)) throw std::invalid_argument("drift_ground_truth_check: zero-norm embedding");
    // Unchanged vectors score exactly zero, free of rounding in the cosine.
    scores.push_back(a == b ? 0.0 : 1.0 - a.dot(b) / denom);
    labels.push_back(drifting.count(id) > 0);
  }
  if (scores.empty()) throw std::invalid_argument("drift_ground_truth_check: tables share no items");
  return metrics::ranking_auc(scores, labels);
}

}  // namespace dact::cf
