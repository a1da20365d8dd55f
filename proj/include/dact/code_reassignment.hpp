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

// Relaxed-to-strict identifier update: level-1 codes are always re-inferred,
// deeper levels are recomputed only for items whose level-1 code moved.

#ifndef DACT_CODE_REASSIGNMENT_HPP_
#define DACT_CODE_REASSIGNMENT_HPP_

#include <vector>

#include "dact/common.hpp"
#include "dact/item_table.hpp"
#include "dact/rq_tokenizer.hpp"
#include "json.hpp"

namespace dact::reassign {

struct ReassignmentReport {
  std::vector<double> layer_change_rate;  // value changes per level over previously identified items
  double overall_change_rate = 0.0;       // identifier (codes or suffix) changed
  std::size_t compared_items = 0;
  std::size_t new_items = 0;
  std::vector<ItemId> changed_items;
  std::vector<std::pair<rq::TokenSequence, rq::TokenSequence>> changes;  // (old, new) per changed item

  nlohmann::json to_json() const;
};

// Change accounting between two identifier maps; items absent from prev are
// counted as new.
ReassignmentReport compare_identifiers(const rq::IdentifierMap& prev, const rq::IdentifierMap& next);

struct ReassignResult {
  rq::IdentifierMap identifiers;
  ReassignmentReport report;
};

ReassignResult reassign(const rq::Tokenizer& tok, const rq::IdentifierMap& prev, const ItemTable& semantic,
                        const std::vector<ItemId>& items);

}  // namespace dact::reassign

#endif  // DACT_CODE_REASSIGNMENT_HPP_
