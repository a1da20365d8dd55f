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

// Period-wise experiment driver: P0 pretraining, per-mode updates over
// P1..P4, evaluation, checkpoints, and the aggregated tables and plots.

#ifndef DACT_HARNESS_HPP_
#define DACT_HARNESS_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dact/cf_signal.hpp"
#include "dact/config.hpp"
#include "dact/data_pipeline.hpp"
#include "dact/drift_adaptation.hpp"
#include "dact/grm.hpp"
#include "dact/rq_tokenizer.hpp"
#include "json.hpp"

namespace dact::harness {

// frozen, ft-tok, ft-grm, ft-both, dact.
const std::vector<std::string>& all_modes();
bool updates_tokenizer(const std::string& mode);
bool updates_grm(const std::string& mode);

// Synthetic corpus settings from data.* keys (data.seed included).
data::DriftSpec drift_spec_from(const KeyValueConfig& kv);

struct RunConfig {
  std::string source = "synthetic";  // synthetic | corpus (saved dir) | tsv
  std::filesystem::path data_path;
  int min_count = 5;
  data::DriftSpec spec;
  std::vector<std::string> modes = all_modes();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::filesystem::path out_dir = "out";

  cf::SgnsOptions cf;
  rq::TokenizerConfig tokenizer;
  rq::PretrainOptions pretrain;
  // Naive tokenizer fine-tuning in ft-tok / ft-both: the pretraining
  // recipe continued from the previous weights, without k-means re-init.
  int finetune_steps = 2000;
  double finetune_lr = 1e-3;
  bool finetune_reseed = true;
  adapt::LossWeights weights;
  adapt::AdaptOptions adapt;
  grm::GrmConfig grm;
  grm::TrainOptions grm_pretrain;
  grm::TrainOptions grm_finetune;
  int beam_width = 20;
  std::vector<int> ks = {5, 10};
  bool backward_transfer = false;
  bool plots = true;

  void validate() const;
  nlohmann::json to_json() const;
  // DACT_SEED (comma-separated) replaces the seed list when set.
  static RunConfig from_config(const KeyValueConfig& kv);
};

struct PeriodReport {
  std::uint64_t seed = 0;
  int period = 0;
  std::string mode;
  std::map<std::string, double> metrics;  // H@k, N@k and their _warm / _cold variants
  std::size_t users = 0;
  std::size_t warm_users = 0;
  std::size_t cold_users = 0;
  std::vector<double> layer_change_rate;
  double overall_change_rate = 0.0;
  std::size_t compared_items = 0;
  std::size_t new_items = 0;
  std::optional<bool> reassign_idempotent;
  double collision_rate = 0.0;
  double mean_cosine = 0.0;
  std::optional<double> drift_auc;     // pattern-memory confidences vs planted labels
  std::optional<double> cf_drift_auc;  // teacher embedding shift vs planted labels
  std::map<std::string, double> seconds;
  // Not part of the per-period protocol: earlier test splits re-scored with
  // the current models, keyed "period_q/H@k".
  std::map<std::string, double> backward_transfer;

  nlohmann::json to_json() const;
  static PeriodReport from_json(const nlohmann::json& j);
};

std::vector<PeriodReport> run_pipeline(const RunConfig& config);

// All reports of one seed; completed periods found on disk are reloaded.
std::vector<PeriodReport> run_seed(const RunConfig& config, std::uint64_t seed);

// Mean over items of cos(r_hat_i, h_i); r_hat goes through the CF projection
// when the tokenizer has one.
double mean_cosine(const rq::Tokenizer& tok, const ItemTable& semantic, const ItemTable& cf,
                   const std::vector<ItemId>& items);

struct CosineDriftReport {
  std::vector<double> frozen;  // P0 tokenizer throughout
  std::vector<double> adapted;
};
// Entry p of each curve scores period p's items against cf_tables[p].
CosineDriftReport cosine_drift_report(const rq::Tokenizer& initial, const std::vector<rq::Tokenizer>& adapted,
                                      const std::vector<ItemTable>& cf_tables, const ItemTable& semantic,
                                      const std::vector<std::vector<ItemId>>& items);

// Writes reports/period_{p}_{mode}.json (seed-aggregated), tables/*.csv and
// plots/*.png. Tables cover the update periods (p >= 1); period 0 only
// feeds the drift curves.
void emit_reports(const std::vector<PeriodReport>& reports, const std::filesystem::path& out_dir, bool plots = true);

// Reloads every per-seed report under out_dir.
std::vector<PeriodReport> collect_reports(const std::filesystem::path& out_dir);

// PCA of CF embeddings colored by layer-1 code.
void write_code_scatter(const ItemTable& cf, const rq::IdentifierMap& ids, const std::filesystem::path& path);

}  // namespace dact::harness

#endif  // DACT_HARNESS_HPP_
