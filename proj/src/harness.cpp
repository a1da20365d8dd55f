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

#include "dact/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "dact/array_store.hpp"
#include "dact/cdim.hpp"
#include "dact/code_reassignment.hpp"
#include "dact/metrics.hpp"
#include "dact/plot.hpp"

namespace dact::harness {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void log(const std::string& msg) { std::cerr << "[dact] " << msg << std::endl; }

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error("stage '" + name + "' failed: " + e.what());
  }
}

std::string period_dir(int p) { return "period_" + std::to_string(p); }

std::string report_name(int p, const std::string& mode) {
  return "period_" + std::to_string(p) + "_" + mode + ".json";
}

std::vector<ItemId> sorted_items(const std::set<ItemId>& s) { return {s.begin(), s.end()}; }

bool same_identifiers(const rq::IdentifierMap& a, const rq::IdentifierMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, seq] : a) {
    const auto it = b.find(id);
    if (it == b.end() || !seq.same_identifier(it->second)) return false;
  }
  return true;
}

void save_tokenizer(const rq::Tokenizer& tok, const cdim::PatternMemory* mem, const fs::path& dir) {
  auto bundle = tok.to_bundle();
  if (mem != nullptr) mem->add_to_bundle(bundle);
  bundle.save(dir);
}

void load_tokenizer(const fs::path& dir, rq::Tokenizer& tok, std::optional<cdim::PatternMemory>& mem) {
  const auto bundle = ArrayBundle::load(dir);
  tok = rq::Tokenizer::from_bundle(bundle);
  if (bundle.contains("cdim.keys")) {
    mem = cdim::PatternMemory::from_bundle(bundle);
  } else {
    mem.reset();
  }
}

void write_identifiers(const fs::path& path, const rq::IdentifierMap& ids) {
  write_text_atomic(path, rq::identifiers_to_tsv(ids));
}

rq::IdentifierMap read_identifiers(const fs::path& path) { return rq::identifiers_from_tsv(read_text(path)); }

void write_report(const fs::path& path, const PeriodReport& r) { write_text_atomic(path, r.to_json().dump(2) + "\n"); }

PeriodReport read_report(const fs::path& path) { return PeriodReport::from_json(nlohmann::json::parse(read_text(path))); }

struct ModeState {
  rq::Tokenizer tok;
  std::optional<cdim::PatternMemory> mem;
  grm::Grm model;
  rq::IdentifierMap ids;
};

struct SeedContext {
  const RunConfig* config = nullptr;
  std::uint64_t seed = 0;
  fs::path dir;
  data::Corpus corpus;
  std::vector<ItemTable> cf_tables;
  std::vector<double> cf_seconds;
};

data::Corpus obtain_corpus(const RunConfig& c, std::uint64_t seed, const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    data::Corpus corpus;
    if (c.source == "synthetic") {
      auto spec = c.spec;
      spec.seed = seed;
      corpus = data::generate_synthetic(spec);
    } else if (c.source == "corpus") {
      corpus = data::load_corpus(c.data_path);
    } else {
      corpus = data::ingest_tsv(c.data_path, c.min_count);
    }
    data::save_corpus(corpus, dir);
  }
  // Always read back, so fresh and resumed runs see the same float32 values.
  auto corpus = data::load_corpus(dir);
  if (corpus.semantic.empty()) throw Error("corpus at " + dir.string() + " has no semantic embeddings");
  return corpus;
}

void fill_eval(PeriodReport& r, const grm::EvalResult& ev) {
  r.metrics = ev.metrics;
  r.users = ev.users;
  r.warm_users = ev.warm_users;
  r.cold_users = ev.cold_users;
}

grm::EvalResult evaluate_period(const SeedContext& ctx, const ModeState& st, int p) {
  const auto& c = *ctx.config;
  return grm::evaluate(st.model, st.ids, data::test_windows(ctx.corpus.periods[p], c.grm.max_items), c.ks,
                       c.beam_width, ctx.corpus.warm_items());
}

void add_backward_transfer(PeriodReport& r, const SeedContext& ctx, const ModeState& st, int p) {
  const auto& c = *ctx.config;
  for (int q = 0; q < p; ++q) {
    const auto ev = grm::evaluate(st.model, st.ids, data::test_windows(ctx.corpus.periods[q], c.grm.max_items), c.ks,
                                  c.beam_width, ctx.corpus.warm_items());
    for (int k : c.ks) {
      r.backward_transfer[period_dir(q) + "/H@" + std::to_string(k)] = ev.metrics.at("H@" + std::to_string(k));
    }
  }
}

std::optional<double> confidence_auc(const SeedContext& ctx, const std::map<ItemId, double>& conf, int p) {
  if (!ctx.corpus.has_drift_labels()) return std::nullopt;
  // Items that already had a representation before this period.
  const auto& prev_items = ctx.corpus.periods[p - 1].item_set;
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& [id, d] : conf) {
    if (!prev_items.count(id)) continue;
    scores.push_back(d);
    labels.push_back(ctx.corpus.drifting_items.count(id) > 0);
  }
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == static_cast<long>(labels.size())) return std::nullopt;
  return metrics::ranking_auc(scores, labels);
}

PeriodReport run_period(const SeedContext& ctx, const std::string& mode, int p, ModeState& st, const fs::path& md) {
  const auto& c = *ctx.config;
  const auto& pd = ctx.corpus.periods[p];
  const auto& semantic = ctx.corpus.semantic;
  const auto& cfp = ctx.cf_tables[p];
  const auto items = sorted_items(pd.item_set);
  const std::string tag = mode + ".period" + std::to_string(p);
  fs::create_directories(md);

  PeriodReport r;
  r.seed = ctx.seed;
  r.period = p;
  r.mode = mode;
  r.seconds["cf"] = ctx.cf_seconds[p];
  r.seconds["tokenizer"] = 0.0;
  r.seconds["grm"] = 0.0;

  rq::IdentifierMap next_ids;
  reassign::ReassignmentReport change;
  if (mode == "dact") {
    auto opts = c.adapt;
    opts.seed = derive_seed(ctx.seed, "adapt." + tag);
    auto t0 = Clock::now();
    auto res = stage("adapt", [&] {
      return adapt::adapt_period(st.tok, st.mem ? &*st.mem : nullptr, semantic, cfp, items, c.weights, opts);
    });
    r.seconds["tokenizer"] = seconds_since(t0);
    r.drift_auc = confidence_auc(ctx, res.confidences, p);
    save_tokenizer(res.tokenizer, &res.memory, md / "tokenizer");
    load_tokenizer(md / "tokenizer", st.tok, st.mem);
    t0 = Clock::now();
    auto rr = stage("reassign", [&] { return reassign::reassign(st.tok, st.ids, semantic, items); });
    r.seconds["reassign"] = seconds_since(t0);
    const auto again = reassign::reassign(st.tok, rr.identifiers, semantic, items);
    r.reassign_idempotent = same_identifiers(again.identifiers, rr.identifiers);
    next_ids = std::move(rr.identifiers);
    change = std::move(rr.report);
  } else if (updates_tokenizer(mode)) {
    auto opts = c.pretrain;
    opts.steps = c.finetune_steps;
    opts.lr = c.finetune_lr;
    opts.kmeans_init = false;
    opts.reseed_dead_codes = c.finetune_reseed;
    opts.seed = derive_seed(ctx.seed, "finetune." + tag);
    auto t0 = Clock::now();
    stage("tokenizer fine-tune", [&] { return rq::pretrain(st.tok, semantic, &cfp, items, opts); });
    r.seconds["tokenizer"] = seconds_since(t0);
    save_tokenizer(st.tok, nullptr, md / "tokenizer");
    load_tokenizer(md / "tokenizer", st.tok, st.mem);
    t0 = Clock::now();
    next_ids = stage("re-tokenize", [&] { return rq::assign_identifiers(st.tok, semantic, items); });
    r.seconds["reassign"] = seconds_since(t0);
    change = reassign::compare_identifiers(st.ids, next_ids);
  } else {
    const auto t0 = Clock::now();
    auto rr = stage("reassign", [&] { return reassign::reassign(st.tok, st.ids, semantic, items); });
    r.seconds["reassign"] = seconds_since(t0);
    next_ids = std::move(rr.identifiers);
    change = std::move(rr.report);
  }
  st.ids = std::move(next_ids);
  write_identifiers(md / "identifiers.tsv", st.ids);

  if (updates_grm(mode)) {
    auto opts = c.grm_finetune;
    opts.seed = derive_seed(ctx.seed, "grm." + tag);
    const auto t0 = Clock::now();
    stage("grm fine-tune", [&] {
      return grm::train_grm(st.model, data::build_training_windows(pd, c.grm.max_items), st.ids, opts);
    });
    r.seconds["grm"] = seconds_since(t0);
    st.model.period_index = p;
    st.model.save(md / "grm");
    st.model = grm::Grm::load(md / "grm");
  }
  r.seconds["update"] = r.seconds["tokenizer"] + r.seconds["reassign"] + r.seconds["grm"];

  const auto t0 = Clock::now();
  fill_eval(r, stage("evaluate", [&] { return evaluate_period(ctx, st, p); }));
  r.seconds["eval"] = seconds_since(t0);
  r.layer_change_rate = change.layer_change_rate;
  r.overall_change_rate = change.overall_change_rate;
  r.compared_items = change.compared_items;
  r.new_items = change.new_items;
  r.collision_rate = rq::collision_rate(st.ids);
  r.mean_cosine = mean_cosine(st.tok, semantic, cfp, items);
  if (ctx.corpus.has_drift_labels() && !ctx.corpus.drifting_items.empty()) {
    r.cf_drift_auc = cf::drift_ground_truth_check(cfp, ctx.cf_tables[p - 1], ctx.corpus.drifting_items);
  }
  if (c.backward_transfer) add_backward_transfer(r, ctx, st, p);
  return r;
}

int mode_rank(const std::string& mode) {
  const auto& m = all_modes();
  const auto it = std::find(m.begin(), m.end(), mode);
  return it == m.end() ? static_cast<int>(m.size()) : static_cast<int>(it - m.begin());
}

// Orders metric names as H@k, N@k by k, then the _warm and _cold variants.
bool metric_less(const std::string& a, const std::string& b) {
  auto key = [](const std::string& s) {
    int group = 0;
    if (s.ends_with("_warm")) group = 1;
    if (s.ends_with("_cold")) group = 2;
    const auto at = s.find('@');
    const int k = at == std::string::npos ? 0 : std::atoi(s.c_str() + at + 1);
    return std::make_tuple(group, s.substr(0, at), k, s);
  };
  return key(a) < key(b);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_opt(const std::vector<double>& v) {
  if (v.empty()) return "";
  return fmt(metrics::mean_std(v).mean);
}

std::string fmt_opt_std(const std::vector<double>& v) {
  if (v.empty()) return "";
  return fmt(metrics::mean_std(v).stddev);
}

nlohmann::json summarize(const std::vector<double>& v) {
  const auto ms = metrics::mean_std(v);
  return {{"mean", ms.mean}, {"std", ms.stddev}, {"n", v.size()}};
}

using GroupKey = std::tuple<int, std::string, int>;  // (mode rank, mode, period)

struct Group {
  std::string mode;
  int period = 0;
  std::vector<const PeriodReport*> runs;
};

std::vector<Group> group_reports(const std::vector<PeriodReport>& reports) {
  std::map<GroupKey, Group> groups;
  for (const auto& r : reports) {
    auto& g = groups[{mode_rank(r.mode), r.mode, r.period}];
    g.mode = r.mode;
    g.period = r.period;
    g.runs.push_back(&r);
  }
  std::vector<Group> out;
  for (auto& [k, g] : groups) {
    std::sort(g.runs.begin(), g.runs.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
    out.push_back(std::move(g));
  }
  return out;
}

// Per-report update time relative to ft-grm on the same seed and period.
std::map<const PeriodReport*, double> time_ratios(const std::vector<PeriodReport>& reports) {
  std::map<std::pair<std::uint64_t, int>, double> base;
  for (const auto& r : reports) {
    if (r.mode == "ft-grm" && r.period > 0 && r.seconds.count("update")) base[{r.seed, r.period}] = r.seconds.at("update");
  }
  std::map<const PeriodReport*, double> out;
  for (const auto& r : reports) {
    const auto it = base.find({r.seed, r.period});
    if (r.period == 0 || it == base.end() || it->second <= 0.0 || !r.seconds.count("update")) continue;
    out[&r] = r.seconds.at("update") / it->second;
  }
  return out;
}

template <class F>
std::vector<double> collect(const Group& g, F&& f) {
  std::vector<double> out;
  for (const auto* r : g.runs) {
    if (auto v = f(*r)) out.push_back(*v);
  }
  return out;
}

void write_plots(const std::vector<Group>& groups, const std::map<const PeriodReport*, double>& ratios,
                 const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> modes;
  int max_period = 0;
  for (const auto& g : groups) {
    if (std::find(modes.begin(), modes.end(), g.mode) == modes.end()) modes.push_back(g.mode);
    max_period = std::max(max_period, g.period);
  }
  auto lookup = [&](const std::string& mode, int p) -> const Group* {
    for (const auto& g : groups) {
      if (g.mode == mode && g.period == p) return &g;
    }
    return nullptr;
  };
  auto series_over = [&](int first, auto&& value) {
    std::vector<plot::Series> out;
    for (const auto& m : modes) {
      plot::Series s{m, {}};
      for (int p = first; p <= max_period; ++p) {
        const Group* g = lookup(m, p);
        const auto v = g ? collect(*g, value) : std::vector<double>{};
        s.values.push_back(v.empty() ? std::nan("") : metrics::mean_std(v).mean);
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  auto labels = [&](int first) {
    std::vector<std::string> l;
    for (int p = first; p <= max_period; ++p) l.push_back("P" + std::to_string(p));
    return l;
  };

  plot::line_chart("mean cos(quantized, CF)", labels(0),
                   series_over(0, [](const PeriodReport& r) { return std::optional<double>(r.mean_cosine); }),
                   dir / "drift_curves.png");
  if (max_period < 1) return;
  auto metric = [](const std::string& name) {
    return [name](const PeriodReport& r) -> std::optional<double> {
      const auto it = r.metrics.find(name);
      if (it == r.metrics.end()) return std::nullopt;
      return it->second;
    };
  };
  plot::bar_chart("H@10 per period", labels(1), series_over(1, metric("H@10")), dir / "hit10_by_period.png");
  plot::bar_chart("N@10 per period", labels(1), series_over(1, metric("N@10")), dir / "ndcg10_by_period.png");
  plot::bar_chart("H@10 warm items", labels(1), series_over(1, metric("H@10_warm")), dir / "hit10_warm.png");
  plot::bar_chart("H@10 cold items", labels(1), series_over(1, metric("H@10_cold")), dir / "hit10_cold.png");
  plot::bar_chart("overall identifier change rate", labels(1),
                  series_over(1, [](const PeriodReport& r) { return std::optional<double>(r.overall_change_rate); }),
                  dir / "change_rates.png");
  plot::bar_chart("update time / ft-grm", labels(1), series_over(1, [&](const PeriodReport& r) -> std::optional<double> {
                    const auto it = ratios.find(&r);
                    if (it == ratios.end()) return std::nullopt;
                    return it->second;
                  }),
                  dir / "time_ratio.png");
  if (std::find(modes.begin(), modes.end(), "dact") != modes.end()) {
    auto s = series_over(1, [](const PeriodReport& r) { return r.drift_auc; });
    s.erase(std::remove_if(s.begin(), s.end(), [](const plot::Series& x) { return x.name != "dact"; }), s.end());
    s.front().name = "drift AUC";
    plot::line_chart("drift identification AUC", labels(1), s, dir / "drift_auc.png");
  }
}

}  // namespace

const std::vector<std::string>& all_modes() {
  static const std::vector<std::string> modes = {"frozen", "ft-tok", "ft-grm", "ft-both", "dact"};
  return modes;
}

bool updates_tokenizer(const std::string& mode) { return mode == "ft-tok" || mode == "ft-both" || mode == "dact"; }
bool updates_grm(const std::string& mode) { return mode == "ft-grm" || mode == "ft-both" || mode == "dact"; }

void RunConfig::validate() const {
  if (source != "synthetic" && source != "corpus" && source != "tsv") {
    throw std::invalid_argument("data source must be synthetic, corpus or tsv");
  }
  if (source != "synthetic" && data_path.empty()) throw std::invalid_argument("data path required for source " + source);
  if (source == "synthetic") spec.validate();
  if (modes.empty()) throw std::invalid_argument("at least one mode required");
  for (const auto& m : modes) {
    if (mode_rank(m) == static_cast<int>(all_modes().size())) throw std::invalid_argument("unknown mode: " + m);
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed required");
  tokenizer.validate();
  weights.validate();
  adapt.cdim.validate();
  grm.validate();
  if (grm.vocab.levels != tokenizer.levels || grm.vocab.codes != tokenizer.codes) {
    throw std::invalid_argument("GRM vocabulary must match the tokenizer's levels and codebook size");
  }
  if (adapt.cdim.code_dim != tokenizer.code_dim) throw std::invalid_argument("pattern memory code_dim must match the tokenizer");
  if (tokenizer.cf_dim != cf.dim) throw std::invalid_argument("tokenizer cf_dim must match the CF dimension");
  if (std::find(modes.begin(), modes.end(), "dact") != modes.end() && cf.dim != tokenizer.code_dim) {
    // Drift queries multiply latents and CF vectors elementwise.
    throw std::invalid_argument("dact mode needs cf.dim equal to tokenizer.code_dim");
  }
  if (ks.empty() || beam_width < 1) throw std::invalid_argument("need cutoffs and a positive beam width");
  for (int k : ks) {
    if (k < 1 || k > beam_width) throw std::invalid_argument("cutoffs must lie in [1, beam_width]");
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["source"] = source;
  j["data_path"] = data_path.string();
  j["min_count"] = min_count;
  j["spec"] = {{"n_users", spec.n_users},
               {"n_items", spec.n_items},
               {"n_clusters", spec.n_clusters},
               {"drift_fraction", spec.drift_fraction},
               {"drift_period", spec.drift_period},
               {"popularity_shift", spec.popularity_shift},
               {"events_per_user", spec.events_per_user},
               {"semantic_dim", spec.semantic_dim}};
  j["modes"] = modes;
  j["seeds"] = seeds;
  j["out_dir"] = out_dir.string();
  j["cf"] = {{"dim", cf.dim}, {"epochs", cf.epochs}, {"lr", cf.lr}, {"window", cf.window},
             {"negatives", cf.negatives}, {"retrain", cf.retrain}};
  j["tokenizer"] = tokenizer.to_json();
  j["pretrain"] = {{"lambda", pretrain.lambda}, {"mu", pretrain.mu}, {"steps", pretrain.steps},
                   {"batch_size", pretrain.batch_size}, {"lr", pretrain.lr}};
  j["finetune"] = {{"steps", finetune_steps}, {"lr", finetune_lr}, {"reseed_dead_codes", finetune_reseed}};
  j["weights"] = weights.to_json();
  j["adapt"] = {{"steps", adapt.steps}, {"batch_size", adapt.batch_size}, {"lr", adapt.lr},
                {"cdim", adapt.cdim.to_json()}};
  j["grm"] = grm.to_json();
  j["grm_train"] = {{"pretrain_epochs", grm_pretrain.epochs}, {"finetune_epochs", grm_finetune.epochs},
                    {"batch_size", grm_pretrain.batch_size}, {"lr", grm_pretrain.lr}};
  j["beam_width"] = beam_width;
  j["ks"] = ks;
  j["backward_transfer"] = backward_transfer;
  return j;
}

data::DriftSpec drift_spec_from(const KeyValueConfig& kv) {
  data::DriftSpec s;
  s.n_users = static_cast<int>(kv.get_int("data.n_users", s.n_users));
  s.n_items = static_cast<int>(kv.get_int("data.n_items", s.n_items));
  s.n_clusters = static_cast<int>(kv.get_int("data.n_clusters", s.n_clusters));
  s.drift_fraction = kv.get_double("data.drift_fraction", s.drift_fraction);
  s.drift_period = static_cast<int>(kv.get_int("data.drift_period", s.drift_period));
  s.popularity_shift = kv.get_double("data.popularity_shift", s.popularity_shift);
  s.events_per_user = static_cast<int>(kv.get_int("data.events_per_user", s.events_per_user));
  s.semantic_dim = static_cast<int>(kv.get_int("data.semantic_dim", s.semantic_dim));
  s.seed = static_cast<std::uint64_t>(kv.get_int("data.seed", 0));
  s.validate();
  return s;
}

RunConfig RunConfig::from_config(const KeyValueConfig& kv) {
  RunConfig c;
  c.source = kv.get_string("data.source", c.source);
  c.data_path = kv.get_string("data.path", "");
  c.min_count = static_cast<int>(kv.get_int("data.min_count", c.min_count));
  c.spec = drift_spec_from(kv);
  const auto& s = c.spec;

  c.modes = kv.get_string_list("run.modes", c.modes);
  std::vector<long> seed_fallback(c.seeds.begin(), c.seeds.end());
  std::vector<long> seeds = kv.get_int_list("run.seeds", seed_fallback);
  if (const char* env = std::getenv("DACT_SEED"); env != nullptr && *env != '\0') {
    KeyValueConfig tmp;
    tmp.set("seeds", env);
    seeds = tmp.get_int_list("seeds", {});
  }
  c.seeds.assign(seeds.begin(), seeds.end());
  c.out_dir = kv.get_string("run.out", c.out_dir.string());
  c.backward_transfer = kv.get_bool("run.backward_transfer", c.backward_transfer);
  c.plots = kv.get_bool("run.plots", c.plots);

  c.cf.dim = static_cast<int>(kv.get_int("cf.dim", c.cf.dim));
  c.cf.epochs = static_cast<int>(kv.get_int("cf.epochs", c.cf.epochs));
  c.cf.lr = kv.get_double("cf.lr", c.cf.lr);
  c.cf.window = static_cast<int>(kv.get_int("cf.window", c.cf.window));
  c.cf.negatives = static_cast<int>(kv.get_int("cf.negatives", c.cf.negatives));
  c.cf.retrain = kv.get_bool("cf.retrain", c.cf.retrain);

  auto& t = c.tokenizer;
  t.semantic_dim = s.semantic_dim;
  t.levels = static_cast<int>(kv.get_int("tokenizer.levels", t.levels));
  t.codes = static_cast<int>(kv.get_int("tokenizer.codes", t.codes));
  t.code_dim = static_cast<int>(kv.get_int("tokenizer.code_dim", t.code_dim));
  {
    std::vector<long> fallback(t.hidden.begin(), t.hidden.end());
    const auto hidden = kv.get_int_list("tokenizer.hidden", fallback);
    t.hidden.assign(hidden.begin(), hidden.end());
  }
  t.temperature = kv.get_double("tokenizer.temperature", t.temperature);
  t.cf_dim = c.cf.dim;

  auto& w = c.weights;
  w.lambda = kv.get_double("loss.lambda", w.lambda);
  w.mu = kv.get_double("loss.mu", w.mu);
  w.alpha_anchor = kv.get_double("loss.alpha", w.alpha_anchor);
  w.theta = kv.get_double("loss.theta", w.theta);
  w.beta = kv.get_double("loss.beta", w.beta);
  w.zeta = kv.get_double("loss.zeta", w.zeta);
  w.k_ratio = kv.get_double("loss.k_ratio", w.k_ratio);
  w.t_global = kv.get_double("loss.t_global", w.t_global);

  c.pretrain.lambda = w.lambda;
  c.pretrain.mu = w.mu;
  c.pretrain.steps = static_cast<int>(kv.get_int("tokenizer.pretrain_steps", c.pretrain.steps));
  c.pretrain.batch_size = static_cast<int>(kv.get_int("tokenizer.batch_size", c.pretrain.batch_size));
  c.pretrain.lr = kv.get_double("tokenizer.lr", c.pretrain.lr);
  c.finetune_steps = static_cast<int>(kv.get_int("tokenizer.finetune_steps", c.finetune_steps));
  c.finetune_lr = kv.get_double("tokenizer.finetune_lr", c.finetune_lr);
  c.finetune_reseed = kv.get_bool("tokenizer.finetune_reseed", c.finetune_reseed);

  c.adapt.steps = static_cast<int>(kv.get_int("adapt.steps", c.adapt.steps));
  c.adapt.batch_size = static_cast<int>(kv.get_int("adapt.batch_size", c.adapt.batch_size));
  c.adapt.lr = kv.get_double("adapt.lr", c.adapt.lr);
  c.adapt.cdim.slots = static_cast<int>(kv.get_int("adapt.slots", c.adapt.cdim.slots));
  c.adapt.cdim.head_hidden = static_cast<int>(kv.get_int("adapt.head_hidden", c.adapt.cdim.head_hidden));
  c.adapt.cdim.temperature = kv.get_double("adapt.attention_temperature", c.adapt.cdim.temperature);
  c.adapt.cdim.code_dim = t.code_dim;

  auto& g = c.grm;
  g.d_model = static_cast<int>(kv.get_int("grm.d_model", g.d_model));
  g.heads = static_cast<int>(kv.get_int("grm.heads", g.heads));
  g.layers = static_cast<int>(kv.get_int("grm.layers", g.layers));
  g.ffn_dim = static_cast<int>(kv.get_int("grm.ffn_dim", g.ffn_dim));
  g.max_items = static_cast<int>(kv.get_int("grm.max_items", g.max_items));
  g.vocab.levels = t.levels;
  g.vocab.codes = t.codes;
  g.vocab.max_suffix = static_cast<int>(kv.get_int("grm.max_suffix", g.vocab.max_suffix));
  c.grm_pretrain.epochs = static_cast<int>(kv.get_int("grm.pretrain_epochs", c.grm_pretrain.epochs));
  c.grm_finetune.epochs = static_cast<int>(kv.get_int("grm.finetune_epochs", 5));
  c.grm_pretrain.batch_size = c.grm_finetune.batch_size =
      static_cast<int>(kv.get_int("grm.batch_size", c.grm_pretrain.batch_size));
  c.grm_pretrain.lr = c.grm_finetune.lr = kv.get_double("grm.lr", c.grm_pretrain.lr);
  c.beam_width = static_cast<int>(kv.get_int("grm.beam_width", c.beam_width));
  {
    std::vector<long> fallback(c.ks.begin(), c.ks.end());
    const auto ks = kv.get_int_list("eval.ks", fallback);
    c.ks.assign(ks.begin(), ks.end());
  }
  c.validate();
  return c;
}

nlohmann::json PeriodReport::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["period"] = period;
  j["mode"] = mode;
  j["metrics"] = metrics;
  j["users"] = users;
  j["warm_users"] = warm_users;
  j["cold_users"] = cold_users;
  j["layer_change_rate"] = layer_change_rate;
  j["overall_change_rate"] = overall_change_rate;
  j["compared_items"] = compared_items;
  j["new_items"] = new_items;
  j["reassign_idempotent"] = reassign_idempotent ? nlohmann::json(*reassign_idempotent) : nlohmann::json();
  j["collision_rate"] = collision_rate;
  j["mean_cosine"] = mean_cosine;
  j["drift_auc"] = drift_auc ? nlohmann::json(*drift_auc) : nlohmann::json();
  j["cf_drift_auc"] = cf_drift_auc ? nlohmann::json(*cf_drift_auc) : nlohmann::json();
  j["seconds"] = seconds;
  j["backward_transfer_extra"] = backward_transfer;
  return j;
}

PeriodReport PeriodReport::from_json(const nlohmann::json& j) {
  PeriodReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.period = j.at("period").get<int>();
  r.mode = j.at("mode").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.users = j.at("users").get<std::size_t>();
  r.warm_users = j.at("warm_users").get<std::size_t>();
  r.cold_users = j.at("cold_users").get<std::size_t>();
  r.layer_change_rate = j.at("layer_change_rate").get<std::vector<double>>();
  r.overall_change_rate = j.at("overall_change_rate").get<double>();
  r.compared_items = j.at("compared_items").get<std::size_t>();
  r.new_items = j.at("new_items").get<std::size_t>();
  if (!j.at("reassign_idempotent").is_null()) r.reassign_idempotent = j.at("reassign_idempotent").get<bool>();
  r.collision_rate = j.at("collision_rate").get<double>();
  r.mean_cosine = j.at("mean_cosine").get<double>();
  if (!j.at("drift_auc").is_null()) r.drift_auc = j.at("drift_auc").get<double>();
  if (!j.at("cf_drift_auc").is_null()) r.cf_drift_auc = j.at("cf_drift_auc").get<double>();
  r.seconds = j.at("seconds").get<std::map<std::string, double>>();
  r.backward_transfer = j.at("backward_transfer_extra").get<std::map<std::string, double>>();
  return r;
}

double mean_cosine(const rq::Tokenizer& tok, const ItemTable& semantic, const ItemTable& cf,
                   const std::vector<ItemId>& items) {
  std::vector<ItemId> kept;
  for (ItemId id : items) {
    if (cf.contains(id) && semantic.contains(id)) kept.push_back(id);
  }
  if (kept.empty()) throw std::invalid_argument("mean_cosine: no item has both embeddings");
  Matrix q = tok.quantize_batch(semantic.gather(kept));
  if (tok.cf_projection) q = tok.cf_projection->forward(q);
  const Matrix h = cf.gather(kept);
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double denom = q.row(i).norm() * h.row(i).norm();
    total += denom > 0.0 ? q.row(i).dot(h.row(i)) / denom : 0.0;
  }
  return total / static_cast<double>(q.rows());
}

CosineDriftReport cosine_drift_report(const rq::Tokenizer& initial, const std::vector<rq::Tokenizer>& adapted,
                                      const std::vector<ItemTable>& cf_tables, const ItemTable& semantic,
                                      const std::vector<std::vector<ItemId>>& items) {
  if (adapted.size() != cf_tables.size() || items.size() != cf_tables.size()) {
    throw std::invalid_argument("cosine_drift_report: one tokenizer, CF table and item list per period");
  }
  CosineDriftReport out;
  for (std::size_t p = 0; p < cf_tables.size(); ++p) {
    out.frozen.push_back(mean_cosine(initial, semantic, cf_tables[p], items[p]));
    out.adapted.push_back(mean_cosine(adapted[p], semantic, cf_tables[p], items[p]));
  }
  return out;
}

std::vector<PeriodReport> run_seed(const RunConfig& config, std::uint64_t seed) {
  config.validate();
  SeedContext ctx;
  ctx.config = &config;
  ctx.seed = seed;
  ctx.dir = config.out_dir / ("seed_" + std::to_string(seed));
  fs::create_directories(ctx.dir / "reports");
  ctx.corpus = stage("data", [&] { return obtain_corpus(config, seed, ctx.dir / "data"); });
  const auto& semantic = ctx.corpus.semantic;

  std::optional<cf::CfModel> prev_cf;
  for (int p = 0; p < data::kNumPeriods; ++p) {
    const auto path = ctx.dir / "cf" / period_dir(p);
    double secs = 0.0;
    if (!ArrayBundle::exists(path)) {
      auto opts = config.cf;
      opts.seed = derive_seed(seed, "cf.period" + std::to_string(p));
      const auto t0 = Clock::now();
      const auto model = stage("cf period " + std::to_string(p), [&] {
        return cf::train_cf(ctx.corpus.periods[p], prev_cf ? &*prev_cf : nullptr, opts);
      });
      secs = seconds_since(t0);
      model.save(path);
    }
    prev_cf = cf::CfModel::load(path);
    ctx.cf_tables.push_back(prev_cf->embeddings());
    ctx.cf_seconds.push_back(secs);
  }

  auto tcfg = config.tokenizer;
  tcfg.semantic_dim = semantic.dim();
  const auto p0 = ctx.dir / "checkpoints" / "p0";
  const auto& pd0 = ctx.corpus.periods.front();
  const auto items0 = sorted_items(pd0.item_set);
  double tok_secs = 0.0, grm_secs = 0.0;
  if (!ArrayBundle::exists(p0 / "tokenizer")) {
    Rng rng(derive_seed(seed, "tokenizer.init"));
    rq::Tokenizer tok(tcfg, rng);
    auto opts = config.pretrain;
    opts.seed = derive_seed(seed, "tokenizer.pretrain");
    const auto t0 = Clock::now();
    stage("tokenizer pretrain", [&] { return rq::pretrain(tok, semantic, &ctx.cf_tables[0], items0, opts); });
    tok_secs = seconds_since(t0);
    tok.save(p0 / "tokenizer");
  }
  ModeState initial;
  load_tokenizer(p0 / "tokenizer", initial.tok, initial.mem);
  if (!fs::exists(p0 / "identifiers.tsv")) {
    write_identifiers(p0 / "identifiers.tsv", rq::assign_identifiers(initial.tok, semantic, items0));
  }
  initial.ids = read_identifiers(p0 / "identifiers.tsv");
  if (!ArrayBundle::exists(p0 / "grm")) {
    Rng rng(derive_seed(seed, "grm.init"));
    grm::Grm model(config.grm, rng);
    auto opts = config.grm_pretrain;
    opts.seed = derive_seed(seed, "grm.pretrain");
    const auto t0 = Clock::now();
    stage("grm pretrain", [&] {
      return grm::train_grm(model, data::build_training_windows(pd0, config.grm.max_items), initial.ids, opts);
    });
    grm_secs = seconds_since(t0);
    model.save(p0 / "grm");
  }
  initial.model = grm::Grm::load(p0 / "grm");

  std::vector<PeriodReport> reports;
  std::optional<PeriodReport> r0;
  for (const auto& mode : config.modes) {
    const auto path = ctx.dir / "reports" / report_name(0, mode);
    if (fs::exists(path)) {
      reports.push_back(read_report(path));
      continue;
    }
    if (!r0) {
      PeriodReport r;
      r.seed = seed;
      r.period = 0;
      r.seconds = {{"cf", ctx.cf_seconds[0]}, {"tokenizer", tok_secs}, {"grm", grm_secs}};
      const auto t0 = Clock::now();
      fill_eval(r, stage("evaluate", [&] { return evaluate_period(ctx, initial, 0); }));
      r.seconds["eval"] = seconds_since(t0);
      r.layer_change_rate.assign(tcfg.levels, 0.0);
      r.new_items = initial.ids.size();
      r.collision_rate = rq::collision_rate(initial.ids);
      r.mean_cosine = mean_cosine(initial.tok, semantic, ctx.cf_tables[0], items0);
      r0 = r;
      log("seed " + std::to_string(seed) + " P0: H@10=" + fmt(r.metrics.at("H@10")) + " cos=" + fmt(r.mean_cosine));
    }
    r0->mode = mode;
    write_report(path, *r0);
    reports.push_back(*r0);
  }

  for (const auto& mode : config.modes) {
    ModeState st = initial;
    for (int p = 1; p < data::kNumPeriods; ++p) {
      const auto md = ctx.dir / "checkpoints" / mode / period_dir(p);
      const auto path = ctx.dir / "reports" / report_name(p, mode);
      const bool done = fs::exists(path) && fs::exists(md / "identifiers.tsv") &&
                        (!updates_tokenizer(mode) || ArrayBundle::exists(md / "tokenizer")) &&
                        (!updates_grm(mode) || ArrayBundle::exists(md / "grm"));
      if (done) {
        if (updates_tokenizer(mode)) load_tokenizer(md / "tokenizer", st.tok, st.mem);
        if (updates_grm(mode)) st.model = grm::Grm::load(md / "grm");
        st.ids = read_identifiers(md / "identifiers.tsv");
        reports.push_back(read_report(path));
        continue;
      }
      PeriodReport r;
      try {
        r = run_period(ctx, mode, p, st, md);
      } catch (const std::exception& e) {
        throw Error("seed " + std::to_string(seed) + " period " + std::to_string(p) + " mode " + mode + ": " + e.what());
      }
      write_report(path, r);
      std::ostringstream msg;
      msg << "seed " << seed << " P" << p << " " << mode << ": H@10=" << fmt(r.metrics.at("H@10"))
          << " change=" << fmt(r.overall_change_rate) << " cos=" << fmt(r.mean_cosine);
      if (r.drift_auc) msg << " auc=" << fmt(*r.drift_auc);
      msg << " update=" << fmt(r.seconds.at("update")) << "s";
      log(msg.str());
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

std::vector<PeriodReport> run_pipeline(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  write_text_atomic(config.out_dir / "run_config.json", config.to_json().dump(2) + "\n");
  std::vector<PeriodReport> all;
  for (auto seed : config.seeds) {
    auto r = run_seed(config, seed);
    all.insert(all.end(), r.begin(), r.end());
  }
  emit_reports(all, config.out_dir, config.plots);
  return all;
}

std::vector<PeriodReport> collect_reports(const fs::path& out_dir) {
  std::vector<fs::path> files;
  if (!fs::exists(out_dir)) throw Error("no such directory: " + out_dir.string());
  for (const auto& seed_dir : fs::directory_iterator(out_dir)) {
    if (!seed_dir.is_directory() || !seed_dir.path().filename().string().starts_with("seed_")) continue;
    const auto rdir = seed_dir.path() / "reports";
    if (!fs::exists(rdir)) continue;
    for (const auto& f : fs::directory_iterator(rdir)) {
      if (f.path().extension() == ".json") files.push_back(f.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<PeriodReport> out;
  for (const auto& f : files) out.push_back(read_report(f));
  return out;
}

void emit_reports(const std::vector<PeriodReport>& reports, const fs::path& out_dir, bool plots) {
  try {
    fs::create_directories(out_dir / "reports");
    fs::create_directories(out_dir / "tables");
  } catch (const fs::filesystem_error& e) {
    throw Error("cannot create report directories under " + out_dir.string() + ": " + e.what());
  }
  const auto groups = group_reports(reports);
  const auto ratios = time_ratios(reports);

  std::vector<std::string> metric_names;
  std::size_t levels = 0;
  for (const auto& r : reports) {
    for (const auto& [name, v] : r.metrics) {
      if (std::find(metric_names.begin(), metric_names.end(), name) == metric_names.end()) metric_names.push_back(name);
    }
    levels = std::max(levels, r.layer_change_rate.size());
  }
  if (metric_names.empty()) metric_names = {"H@5", "H@10", "N@5", "N@10"};
  if (levels == 0) levels = 3;
  std::sort(metric_names.begin(), metric_names.end(), metric_less);

  std::ostringstream mcsv, ccsv, acsv;
  mcsv << "mode,period,n_seeds";
  for (const auto& m : metric_names) mcsv << ',' << m << "_mean," << m << "_std";
  mcsv << ",backward_H@10_mean_extra\n";
  ccsv << "mode,period,n_seeds";
  for (std::size_t l = 0; l < levels; ++l) ccsv << ",layer" << (l + 1) << "_mean";
  ccsv << ",overall_mean,overall_std,new_items_mean\n";
  acsv << "mode,period,n_seeds,mean_cosine_mean,mean_cosine_std,drift_auc_mean,drift_auc_std,cf_drift_auc_mean,"
          "time_ratio_mean,time_ratio_std,update_seconds_mean\n";

  for (const auto& g : groups) {
    nlohmann::json agg;
    agg["period"] = g.period;
    agg["mode"] = g.mode;
    agg["seeds"] = nlohmann::json::array();
    agg["runs"] = nlohmann::json::array();
    for (const auto* r : g.runs) {
      agg["seeds"].push_back(r->seed);
      agg["runs"].push_back(r->to_json());
    }
    nlohmann::json summary;
    for (const auto& m : metric_names) {
      const auto v = collect(g, [&](const PeriodReport& r) -> std::optional<double> {
        const auto it = r.metrics.find(m);
        if (it == r.metrics.end()) return std::nullopt;
        return it->second;
      });
      if (!v.empty()) summary[m] = summarize(v);
    }
    const auto overall = collect(g, [](const PeriodReport& r) { return std::optional<double>(r.overall_change_rate); });
    const auto cosine = collect(g, [](const PeriodReport& r) { return std::optional<double>(r.mean_cosine); });
    const auto auc = collect(g, [](const PeriodReport& r) { return r.drift_auc; });
    const auto cf_auc = collect(g, [](const PeriodReport& r) { return r.cf_drift_auc; });
    const auto ratio = collect(g, [&](const PeriodReport& r) -> std::optional<double> {
      const auto it = ratios.find(&r);
      if (it == ratios.end()) return std::nullopt;
      return it->second;
    });
    const auto update = collect(g, [](const PeriodReport& r) -> std::optional<double> {
      const auto it = r.seconds.find("update");
      if (it == r.seconds.end()) return std::nullopt;
      return it->second;
    });
    const auto backward = collect(g, [](const PeriodReport& r) -> std::optional<double> {
      std::vector<double> v;
      for (const auto& [k, x] : r.backward_transfer) {
        if (k.ends_with("/H@10")) v.push_back(x);
      }
      if (v.empty()) return std::nullopt;
      return metrics::mean_std(v).mean;
    });
    summary["overall_change_rate"] = summarize(overall);
    summary["mean_cosine"] = summarize(cosine);
    if (!auc.empty()) summary["drift_auc"] = summarize(auc);
    if (!cf_auc.empty()) summary["cf_drift_auc"] = summarize(cf_auc);
    if (!ratio.empty()) summary["time_ratio"] = summarize(ratio);
    agg["summary"] = summary;
    write_text_atomic(out_dir / "reports" / report_name(g.period, g.mode), agg.dump(2) + "\n");

    const auto n = std::to_string(g.runs.size());
    acsv << g.mode << ',' << g.period << ',' << n << ',' << fmt_opt(cosine) << ',' << fmt_opt_std(cosine) << ','
         << fmt_opt(auc) << ',' << fmt_opt_std(auc) << ',' << fmt_opt(cf_auc) << ',' << fmt_opt(ratio) << ','
         << fmt_opt_std(ratio) << ',' << fmt_opt(update) << '\n';
    if (g.period == 0) continue;
    mcsv << g.mode << ',' << g.period << ',' << n;
    for (const auto& m : metric_names) {
      const auto v = collect(g, [&](const PeriodReport& r) -> std::optional<double> {
        const auto it = r.metrics.find(m);
        if (it == r.metrics.end()) return std::nullopt;
        return it->second;
      });
      mcsv << ',' << fmt_opt(v) << ',' << fmt_opt_std(v);
    }
    mcsv << ',' << fmt_opt(backward) << '\n';
    ccsv << g.mode << ',' << g.period << ',' << n;
    for (std::size_t l = 0; l < levels; ++l) {
      ccsv << ',' << fmt_opt(collect(g, [l](const PeriodReport& r) -> std::optional<double> {
        if (l >= r.layer_change_rate.size()) return std::nullopt;
        return r.layer_change_rate[l];
      }));
    }
    ccsv << ',' << fmt_opt(overall) << ',' << fmt_opt_std(overall) << ','
         << fmt_opt(collect(g, [](const PeriodReport& r) { return std::optional<double>(r.new_items); })) << '\n';
  }
  write_text_atomic(out_dir / "tables" / "metrics.csv", mcsv.str());
  write_text_atomic(out_dir / "tables" / "change_rates.csv", ccsv.str());
  write_text_atomic(out_dir / "tables" / "analysis.csv", acsv.str());

  if (!plots || groups.empty()) return;
  write_plots(groups, ratios, out_dir / "plots");

  // Embedding scatter from the lowest seed's last period, preferring dact.
  const auto seed = std::min_element(reports.begin(), reports.end(), [](auto& a, auto& b) { return a.seed < b.seed; })->seed;
  int last = 0;
  std::string mode;
  for (const auto& g : groups) {
    if (g.period > last || (g.period == last && g.mode == "dact")) {
      last = g.period;
      mode = g.mode;
    }
  }
  const auto sdir = out_dir / ("seed_" + std::to_string(seed));
  const auto ids_path = last == 0 ? sdir / "checkpoints" / "p0" / "identifiers.tsv"
                                  : sdir / "checkpoints" / mode / period_dir(last) / "identifiers.tsv";
  const auto cf_path = sdir / "cf" / period_dir(last);
  if (fs::exists(ids_path) && ArrayBundle::exists(cf_path)) {
    write_code_scatter(cf::CfModel::load(cf_path).embeddings(), read_identifiers(ids_path),
                       out_dir / "plots" / "cf_pca_layer1.png");
  }
}

void write_code_scatter(const ItemTable& cf, const rq::IdentifierMap& ids, const fs::path& path) {
  std::vector<ItemId> kept;
  for (const auto& [id, seq] : ids) {
    if (cf.contains(id) && !seq.codes.empty()) kept.push_back(id);
  }
  if (kept.size() < 3) throw std::invalid_argument("write_code_scatter: need at least three items");
  Matrix x = cf.gather(kept);
  const RowVector mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Matrix cov = (x.transpose() * x) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Eigen::Index d = cov.cols();
  const Matrix basis = eig.eigenvectors().rightCols(2);
  const Matrix proj = x * basis;

  // The most frequent layer-1 codes get their own color; the rest share grey.
  std::map<int, int> counts;
  for (ItemId id : kept) ++counts[ids.at(id).codes[0]];
  std::vector<std::pair<int, int>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  const int grey = 7;
  std::map<int, int> category;
  int next = 0;
  for (const auto& [code, n] : order) {
    if (next == grey) ++next;
    if (next >= 10) break;
    category[code] = next++;
  }
  std::vector<plot::Point> points;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int code = ids.at(kept[i]).codes[0];
    const auto it = category.find(code);
    points.push_back({proj(static_cast<Eigen::Index>(i), d > 1 ? 1 : 0), proj(static_cast<Eigen::Index>(i), 0),
                      it == category.end() ? grey : it->second});
  }
  fs::create_directories(path.parent_path());
  plot::scatter_plot("CF embeddings (PCA) by layer-1 code", points, path);
}

}  // namespace dact::harness
