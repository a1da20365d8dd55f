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

// Command-line entry point: data generation and ingestion, CF training,
// single-period adaptation, full runs and report regeneration.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dact/array_store.hpp"
#include "dact/cdim.hpp"
#include "dact/cf_signal.hpp"
#include "dact/code_reassignment.hpp"
#include "dact/config.hpp"
#include "dact/data_pipeline.hpp"
#include "dact/drift_adaptation.hpp"
#include "dact/harness.hpp"
#include "dact/metrics.hpp"

namespace fs = std::filesystem;
using namespace dact;

namespace {

void print_corpus(const data::Corpus& c) {
  std::set<UserId> users;
  for (const auto& e : c.stream) users.insert(e.user_id);
  std::cout << "users " << users.size() << " items " << c.periods.back().item_set.size() << " interactions "
            << c.stream.size() << "\n";
  for (const auto& pd : c.periods) {
    std::cout << "  P" << pd.period_index << ": events " << pd.events.size() << " live items " << pd.item_set.size()
              << " new items " << pd.new_items.size() << " held-out users " << pd.held_out_users() << "\n";
  }
}

int data_gen(const std::string& spec_path, const fs::path& out) {
  const auto kv = spec_path.empty() ? KeyValueConfig() : KeyValueConfig::from_file(spec_path);
  const auto corpus = data::generate_synthetic(harness::drift_spec_from(kv));
  data::save_corpus(corpus, out);
  print_corpus(corpus);
  std::cout << "drifting items " << corpus.drifting_items.size() << "\nwrote " << out << "\n";
  return 0;
}

int data_ingest(const fs::path& tsv, int min_count, const fs::path& out) {
  const auto corpus = data::ingest_tsv(tsv, min_count);
  data::save_corpus(corpus, out);
  print_corpus(corpus);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cf_train(const fs::path& data_dir, int period, const std::string& warm_start, const fs::path& out,
             cf::SgnsOptions opts) {
  const auto corpus = data::load_corpus(data_dir);
  if (period < 0 || period >= data::kNumPeriods) throw std::invalid_argument("period must be in 0..4");
  std::optional<cf::CfModel> prev;
  if (!warm_start.empty()) prev = cf::CfModel::load(warm_start);
  auto model = cf::train_cf(corpus.periods[period], prev ? &*prev : nullptr, opts);
  model.save(out);
  std::cout << "period " << period << ": " << model.input.size() << " item vectors, dim " << model.input.dim() << "\n";
  if (prev && corpus.has_drift_labels() && !corpus.drifting_items.empty()) {
    std::cout << "drift check AUC "
              << cf::drift_ground_truth_check(model.embeddings(), prev->embeddings(), corpus.drifting_items) << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

// Config keys: adapt.data, adapt.tokenizer, adapt.cf, adapt.identifiers
// (optional), adapt.out, plus the loss.* / adapt.* / tokenizer.* settings.
int adapt_cmd(int period, const std::string& mode, const fs::path& config_path, std::uint64_t seed) {
  const auto kv = KeyValueConfig::from_file(config_path);
  const auto rc = harness::RunConfig::from_config(kv);
  const fs::path data_dir = kv.get_string("adapt.data", "");
  const fs::path tok_dir = kv.get_string("adapt.tokenizer", "");
  const fs::path cf_dir = kv.get_string("adapt.cf", "");
  const fs::path out = kv.get_string("adapt.out", "");
  const std::string ids_path = kv.get_string("adapt.identifiers", "");
  if (data_dir.empty() || tok_dir.empty() || cf_dir.empty() || out.empty()) {
    throw std::invalid_argument("config needs adapt.data, adapt.tokenizer, adapt.cf and adapt.out");
  }
  if (mode != "dact" && mode != "ft-tok") throw std::invalid_argument("adapt supports modes dact and ft-tok");
  const auto corpus = data::load_corpus(data_dir);
  if (period < 1 || period >= data::kNumPeriods) throw std::invalid_argument("period must be in 1..4");
  const auto bundle = ArrayBundle::load(tok_dir);
  const auto prev = rq::Tokenizer::from_bundle(bundle);
  std::optional<cdim::PatternMemory> mem;
  if (bundle.contains("cdim.keys")) mem = cdim::PatternMemory::from_bundle(bundle);
  const auto cf_table = cf::CfModel::load(cf_dir).embeddings();
  const auto& live = corpus.periods[period].item_set;
  const std::vector<ItemId> items(live.begin(), live.end());

  rq::Tokenizer next;
  fs::create_directories(out);
  if (mode == "dact") {
    auto opts = rc.adapt;
    opts.seed = seed;
    auto res = adapt::adapt_period(prev, mem ? &*mem : nullptr, corpus.semantic, cf_table, items, rc.weights, opts);
    std::cout << "objective " << res.initial_objective << " -> " << res.final_objective << "\n";
    std::ostringstream conf;
    conf << "item_id\tconfidence\n";
    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& [id, d] : res.confidences) {
      conf << id << '\t' << d << '\n';
      if (corpus.periods[period - 1].item_set.count(id)) {
        scores.push_back(d);
        labels.push_back(corpus.drifting_items.count(id) > 0);
      }
    }
    write_text_atomic(out / "confidences.tsv", conf.str());
    if (corpus.has_drift_labels() && !corpus.drifting_items.empty()) {
      std::cout << "drift AUC " << metrics::ranking_auc(scores, labels) << "\n";
    }
    auto b = res.tokenizer.to_bundle();
    res.memory.add_to_bundle(b);
    b.save(out / "tokenizer");
    next = std::move(res.tokenizer);
  } else {
    next = prev;
    auto opts = rc.pretrain;
    opts.steps = rc.finetune_steps;
    opts.lr = rc.finetune_lr;
    opts.kmeans_init = false;
    opts.reseed_dead_codes = rc.finetune_reseed;
    opts.seed = seed;
    rq::pretrain(next, corpus.semantic, &cf_table, items, opts);
    next.save(out / "tokenizer");
  }
  write_text_atomic(out / "weights.json", rc.weights.to_json().dump(2) + "\n");
  if (!ids_path.empty()) {
    const auto prev_ids = rq::identifiers_from_tsv(read_text(ids_path));
    rq::IdentifierMap ids;
    reassign::ReassignmentReport rep;
    if (mode == "dact") {
      auto r = reassign::reassign(next, prev_ids, corpus.semantic, items);
      ids = std::move(r.identifiers);
      rep = std::move(r.report);
    } else {
      ids = rq::assign_identifiers(next, corpus.semantic, items);
      rep = reassign::compare_identifiers(prev_ids, ids);
    }
    write_text_atomic(out / "identifiers.tsv", rq::identifiers_to_tsv(ids));
    write_text_atomic(out / "reassignment.json", rep.to_json().dump(2) + "\n");
    std::cout << "overall change rate " << rep.overall_change_rate << " over " << rep.compared_items << " items\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_cmd(const fs::path& config_path) {
  const auto rc = harness::RunConfig::from_config(KeyValueConfig::from_file(config_path));
  const auto reports = harness::run_pipeline(rc);
  std::cout << reports.size() << " period reports; tables under " << (rc.out_dir / "tables") << "\n";
  return 0;
}

int report_cmd(const fs::path& dir) {
  const auto reports = harness::collect_reports(dir);
  harness::emit_reports(reports, dir);
  std::cout << reports.size() << " period reports aggregated under " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dact: drift-aware continual tokenization lab"};
  app.require_subcommand(1);

  auto* data_cmd = app.add_subcommand("data", "synthetic generation and TSV ingestion");
  data_cmd->require_subcommand(1);
  std::string spec_path;
  std::string gen_out;
  auto* gen = data_cmd->add_subcommand("gen", "generate a planted-drift corpus");
  gen->add_option("--spec", spec_path, "key/value file with data.* settings");
  gen->add_option("--out", gen_out, "output directory")->required();
  std::string tsv_path;
  std::string ingest_out;
  int min_count = 5;
  auto* ingest = data_cmd->add_subcommand("ingest", "ingest a user/item/timestamp TSV");
  ingest->add_option("--tsv", tsv_path, "input TSV")->required();
  ingest->add_option("--min-count", min_count, "k-core threshold");
  ingest->add_option("--out", ingest_out, "output directory")->required();

  auto* cf_cmd = app.add_subcommand("cf", "collaborative embeddings");
  cf_cmd->require_subcommand(1);
  auto* cf_tr = cf_cmd->add_subcommand("train", "train one period's CF table");
  int cf_period = 0;
  std::string warm_start;
  std::string cf_data;
  std::string cf_out;
  cf::SgnsOptions sgns;
  cf_tr->add_option("--period", cf_period, "period index")->required();
  cf_tr->add_option("--warm-start", warm_start, "previous period's CF model directory");
  cf_tr->add_option("--data", cf_data, "corpus directory")->required();
  cf_tr->add_option("--out", cf_out, "output directory")->required();
  cf_tr->add_option("--dim", sgns.dim, "embedding dimension");
  cf_tr->add_option("--epochs", sgns.epochs, "passes over the period");
  cf_tr->add_option("--seed", sgns.seed, "random seed");
  cf_tr->add_flag("--retrain", sgns.retrain, "re-initialize vectors of items seen in the period");

  auto* ad = app.add_subcommand("adapt", "update a tokenizer for one period");
  int ad_period = 1;
  std::string ad_mode = "dact";
  std::string ad_config;
  std::uint64_t ad_seed = 0;
  ad->add_option("--period", ad_period, "period index")->required();
  ad->add_option("--mode", ad_mode, "dact or ft-tok");
  ad->add_option("--config", ad_config, "key/value config")->required();
  ad->add_option("--seed", ad_seed, "random seed");

  auto* run = app.add_subcommand("run", "run the period-wise experiment matrix");
  std::string run_config;
  run->add_option("--config", run_config, "key/value run config")->required();

  auto* rep = app.add_subcommand("report", "re-aggregate tables and plots from saved reports");
  std::string rep_dir;
  rep->add_option("--dir", rep_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return data_gen(spec_path, gen_out);
    if (ingest->parsed()) return data_ingest(tsv_path, min_count, ingest_out);
    if (cf_tr->parsed()) return cf_train(cf_data, cf_period, warm_start, cf_out, sgns);
    if (ad->parsed()) return adapt_cmd(ad_period, ad_mode, ad_config, ad_seed);
    if (run->parsed()) return run_cmd(run_config);
    if (rep->parsed()) return report_cmd(rep_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
