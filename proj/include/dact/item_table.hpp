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

#ifndef DACT_ITEM_TABLE_HPP_
#define DACT_ITEM_TABLE_HPP_

#include <filesystem>
#include <unordered_map>
#include <vector>

#include "dact/common.hpp"

namespace dact {

// Dense per-item vectors keyed by item id; row order is insertion order.
class ItemTable {
 public:
  ItemTable() = default;
  explicit ItemTable(int dim) : rows_(0, dim) {}
  ItemTable(std::vector<ItemId> ids, Matrix rows);

  int dim() const { return static_cast<int>(rows_.cols()); }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  bool contains(ItemId id) const { return index_.count(id) > 0; }
  std::size_t index_of(ItemId id) const;

  const std::vector<ItemId>& ids() const { return ids_; }
  const Matrix& matrix() const { return rows_; }
  Matrix& mutable_matrix() { return rows_; }

  Eigen::Ref<const RowVector> row(ItemId id) const { return rows_.row(static_cast<Eigen::Index>(index_of(id))); }
  Eigen::Ref<RowVector> mutable_row(ItemId id) { return rows_.row(static_cast<Eigen::Index>(index_of(id))); }

  // Gathers rows for the given ids into a (ids.size() x dim) matrix.
  Matrix gather(const std::vector<ItemId>& ids) const;

  void upsert(ItemId id, const RowVector& v);

  // Manifest + float32 array; "item_ids" lists the row order.
  void save(const std::filesystem::path& dir, const std::string& array_name = "vectors") const;
  static ItemTable load(const std::filesystem::path& dir, const std::string& array_name = "vectors");

 private:
  std::vector<ItemId> ids_;
  Matrix rows_;
  std::unordered_map<ItemId, std::size_t> index_;
};

}  // namespace dact

#endif  // DACT_ITEM_TABLE_HPP_
