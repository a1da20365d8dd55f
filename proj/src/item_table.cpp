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

#include "dact/item_table.hpp"

#include "dact/array_store.hpp"

namespace dact {

ItemTable::ItemTable(std::vector<ItemId> ids, Matrix rows) : ids_(std::move(ids)), rows_(std::move(rows)) {
  if (static_cast<Eigen::Index>(ids_.size()) != rows_.rows()) {
    throw std::invalid_argument("ItemTable: id count does not match row count");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw std::invalid_argument("ItemTable: duplicate item id " + std::to_string(ids_[i]));
    }
  }
}

std::size_t ItemTable::index_of(ItemId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("ItemTable: unknown item id " + std::to_string(id));
  return it->second;
}

Matrix ItemTable::gather(const std::vector<ItemId>& ids) const {
  Matrix out(static_cast<Eigen::Index>(ids.size()), rows_.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = row(ids[i]);
  return out;
}

void ItemTable::upsert(ItemId id, const RowVector& v) {
  if (v.size() != rows_.cols()) throw std::invalid_argument("ItemTable: dimension mismatch on upsert");
  auto it = index_.find(id);
  if (it != index_.end()) {
    rows_.row(static_cast<Eigen::Index>(it->second)) = v;
    return;
  }
  rows_.conservativeResize(rows_.rows() + 1, Eigen::NoChange);
  rows_.row(rows_.rows() - 1) = v;
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
}

void ItemTable::save(const std::filesystem::path& dir, const std::string& array_name) const {
  ArrayBundle bundle;
  bundle.meta["item_ids"] = ids_;
  bundle.meta["dim"] = dim();
  bundle.arrays[array_name] = rows_;
  bundle.save(dir);
}

ItemTable ItemTable::load(const std::filesystem::path& dir, const std::string& array_name) {
  const ArrayBundle bundle = ArrayBundle::load(dir);
  return ItemTable(bundle.meta.at("item_ids").get<std::vector<ItemId>>(), bundle.at(array_name));
}

}  // namespace dact
