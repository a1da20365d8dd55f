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

// Interaction streams, the chronological period split and per-period
// leave-one-out structure, plus a synthetic generator with planted
// collaborative drift.

#ifndef DACT_DATA_PIPELINE_HPP_
#define DACT_DATA_PIPELINE_HPP_

#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "dact/common.hpp"
#include "dact/item_table.hpp"

namespace dact::data {

inline constexpr int kNumPeriods = 5;

struct InteractionEvent {
  UserId user_id = 0;
  ItemId item_id = 0;
  std::int64_t timestamp = 0;

  // Chronological order; equal timestamps are broken by (user, item).
  auto operator<=>(const InteractionEvent& o) const {
    if (auto c = timestamp <=> o.timestamp; c != 0) return c;
    if (auto c = user_id <=> o.user_id; c != 0) return c;
    return item_id <=> o.item_id;
  }
  bool operator==(const InteractionEvent&) const = default;
};

// Positions into a user's sequence S_u. S_u[0, train_end) is the training
// prefix; targets in [period_start, train_end) belong to this period. When
// held_out, S_u[train_end] is the validation target and S_u[train_end + 1]
// the test target.
struct UserSplit {
  std::size_t period_start = 0;
  std::size_t train_end = 0;
  bool held_out = false;
};

struct PeriodDataset {
  int period_index = 0;
  std::vector<InteractionEvent> events;                  // this period only
  std::set<ItemId> item_set;                             // live items: everything seen up to this period
  std::set<ItemId> new_items;                            // first seen in this period
  std::map<UserId, std::vector<ItemId>> user_sequences;  // full history for users active in this period
  std::map<UserId, UserSplit> splits;

  std::set<ItemId> period_items() const;
  std::size_t held_out_users() const;
};

struct Window {
  UserId user_id = 0;
  std::vector<ItemId> context;
  ItemId target = 0;
};

struct DriftSpec {
  int n_users = 200;
  int n_items = 400;
  int n_clusters = 10;
  double drift_fraction = 0.2;
  int drift_period = 1;
  double popularity_shift = 1.0;
  std::uint64_t seed = 0;

  int events_per_user = 50;
  double session_mean = 4.0;
  double noise_rate = 0.1;
  int favorite_clusters = 2;
  double late_item_fraction = 0.1;
  double late_user_fraction = 0.1;
  int semantic_dim = 64;
  double semantic_noise = 0.1;
  double centroid_scale = 0.5;

  void validate() const;
};

struct Corpus {
  std::vector<InteractionEvent> stream;  // chronological
  std::vector<PeriodDataset> periods;    // kNumPeriods entries
  // Synthetic only.
  std::set<ItemId> drifting_items;
  std::map<ItemId, int> original_cluster;
  std::map<ItemId, int> drift_target_cluster;
  ItemTable semantic;  // may be empty for ingested corpora

  bool has_drift_labels() const { return !original_cluster.empty(); }
  std::set<ItemId> warm_items() const { return periods.front().item_set; }
};

// Interaction-count boundaries of the 60/10/10/10/10 split: entry p is the
// first stream index of period p, entry kNumPeriods is n.
std::array<std::size_t, kNumPeriods + 1> period_boundaries(std::size_t n);

// Builds the period datasets from a chronologically sorted stream.
std::vector<PeriodDataset> split_periods(const std::vector<InteractionEvent>& stream);

Corpus generate_synthetic(const DriftSpec& spec);

// Iterated k-core: drops users and items with fewer than min_count events
// until no more can be dropped.
std::vector<InteractionEvent> kcore_filter(std::vector<InteractionEvent> events, int min_count);

std::vector<InteractionEvent> read_tsv(const std::filesystem::path& path);
Corpus ingest_tsv(const std::filesystem::path& path, int min_count);

// Every (prefix up to max_len, next item) pair whose target lies in the
// period's training split. Contexts may reach back into earlier periods.
std::vector<Window> build_training_windows(const PeriodDataset& pd, int max_len);
std::vector<Window> validation_windows(const PeriodDataset& pd, int max_len);
std::vector<Window> test_windows(const PeriodDataset& pd, int max_len);

// One TSV per period plus manifest.json; semantic embeddings (when present)
// under embeddings/.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

std::string events_to_tsv(const std::vector<InteractionEvent>& events);

}  // namespace dact::data

#endif  // DACT_DATA_PIPELINE_HPP_
