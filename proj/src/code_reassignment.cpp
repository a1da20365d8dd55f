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

#include "dact/code_reassignment.hpp"

#include <algorithm>
#include <set>

namespace dact::reassign {

nlohmann::json ReassignmentReport::to_json() const {
  return {{"layer_change_rate", layer_change_rate},
          {"overall_change_rate", overall_change_rate},
          {"compared_items", compared_items},
          {"new_items", new_items},
          {"changed_items", changed_items.size()}};
}

ReassignmentReport compare_identifiers(const rq::IdentifierMap& prev, const rq::IdentifierMap& next) {
  ReassignmentReport r;
  std::size_t levels = 0;
  for (const auto& [id, s] : next) levels = std::max(levels, s.codes.size());
  std::vector<std::size_t> layer_changes(levels, 0);
  std::size_t changed = 0;
  for (const auto& [id, s] : next) {
    const auto it = prev.find(id);
    if (it == prev.end()) {
      ++r.new_items;
      continue;
    }
    ++r.compared_items;
    const auto& old = it->second;
    for (std::size_t l = 0; l < levels; ++l) {
      if (l >= old.codes.size() || l >= s.codes.size() || old.codes[l] != s.codes[l]) ++layer_changes[l];
    }
    if (!old.same_identifier(s)) {
      ++changed;
      r.changed_items.push_back(id);
      r.changes.emplace_back(old, s);
    }
  }
  const double n = r.compared_items > 0 ? static_cast<double>(r.compared_items) : 1.0;
  for (auto c : layer_changes) r.layer_change_rate.push_back(static_cast<double>(c) / n);
  r.overall_change_rate = static_cast<double>(changed) / n;
  return r;
}

ReassignResult reassign(const rq::Tokenizer& tok, const rq::IdentifierMap& prev, const ItemTable& semantic,
                        const std::vector<ItemId>& items) {
  std::set<ItemId> all(items.begin(), items.end());
  for (const auto& [id, s] : prev) all.insert(id);
  const std::vector<ItemId> ordered(all.begin(), all.end());
  for (ItemId id : ordered) {
    if (!semantic.contains(id) && !prev.count(id)) {
      throw std::invalid_argument("reassign: item " + std::to_string(id) + " has neither identifier nor embedding");
    }
  }
  std::vector<ItemId> computable;
  for (ItemId id : ordered) {
    if (semantic.contains(id)) computable.push_back(id);
  }
  const int levels = tok.config().levels;
  const Matrix v1 = computable.empty() ? Matrix() : tok.encode_batch(semantic.gather(computable));

  ReassignResult out;
  std::vector<ItemId> pending;  // changed or new: need a suffix
  for (std::size_t k = 0; k < computable.size(); ++k) {
    const ItemId id = computable[k];
    RowVector v = v1.row(static_cast<Eigen::Index>(k));
    const auto first = tok.codebooks.assign_level(v, 0);
    const auto it = prev.find(id);
    if (it != prev.end() && !it->second.codes.empty() && it->second.codes[0] == first.index) {
      out.identifiers.emplace(id, it->second);
      continue;
    }
    rq::TokenSequence s;
    s.item_id = id;
    s.codes.push_back(first.index);
    v = first.next_residual;
    for (int l = 1; l < levels; ++l) {
      const auto a = tok.codebooks.assign_level(v, l);
      s.codes.push_back(a.index);
      v = a.next_residual;
    }
    out.identifiers.emplace(id, std::move(s));
    pending.push_back(id);
  }
  for (ItemId id : ordered) {
    if (!semantic.contains(id)) out.identifiers.emplace(id, prev.at(id));
  }

  // Unchanged identifiers keep their suffixes; the rest take the smallest
  // free suffix on their path, in item id order.
  const std::set<ItemId> pending_set(pending.begin(), pending.end());
  std::map<std::vector<int>, std::set<int>> taken;
  for (const auto& [id, s] : out.identifiers) {
    if (!pending_set.count(id)) taken[s.codes].insert(s.dedup_suffix);
  }
  for (ItemId id : pending) {
    auto& s = out.identifiers.at(id);
    auto& used = taken[s.codes];
    int suffix = 0;
    while (used.count(suffix)) ++suffix;
    s.dedup_suffix = suffix;
    used.insert(suffix);
  }
  out.report = compare_identifiers(prev, out.identifiers);
  return out;
}

}  // namespace dact::reassign
