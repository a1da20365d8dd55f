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

// Per-period collaborative item embeddings from skip-gram with negative
// sampling over user sequences.

#ifndef DACT_CF_SIGNAL_HPP_
#define DACT_CF_SIGNAL_HPP_

#include <filesystem>
#include <set>

#include "dact/common.hpp"
#include "dact/data_pipeline.hpp"
#include "dact/item_table.hpp"

namespace dact::cf {

struct SgnsOptions {
  int dim = 32;
  int epochs = 20;
  double lr = 0.025;
  int window = 3;
  int negatives = 5;
  bool retrain = false;  // ignore the previous model's vectors for items seen this period
  std::uint64_t seed = 0;
};

// Both SGNS matrices are kept so a later period can fine-tune from them.
struct CfModel {
  int period_index = 0;
  ItemTable input;
  ItemTable context;

  // Unit-normalized input vectors: the published embedding table.
  ItemTable embeddings() const;

  void save(const std::filesystem::path& dir) const;
  static CfModel load(const std::filesystem::path& dir);
};

CfModel train_cf(const data::PeriodDataset& pd, const CfModel* prev, const SgnsOptions& options);

// Scores each shared item by 1 - cos(cf_p, cf_prev) and returns the ranking
// AUC against the drift labels. Items outside both tables are ignored.
double drift_ground_truth_check(const ItemTable& cf_p, const ItemTable& cf_prev,
                                const std::set<ItemId>& drifting);

// Unit-normalizes each row; a zero row is an error.
void normalize_rows(Matrix& m);

}  // namespace dact::cf

#endif  // DACT_CF_SIGNAL_HPP_
