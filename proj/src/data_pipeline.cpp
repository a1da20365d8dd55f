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

#include "dact/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dact/array_store.hpp"
#include "json.hpp"

namespace dact::data {

namespace fs = std::filesystem;

std::set<ItemId> PeriodDataset::period_items() const {
  std::set<ItemId> out;
  for (const auto& e : events) out.insert(e.item_id);
  return out;
}

std::size_t PeriodDataset::held_out_users() const {
  std::size_t n = 0;
  for (const auto& [u, s] : splits) n += s.held_out ? 1 : 0;
  return n;
}

void DriftSpec::validate() const {
  if (drift_fraction < 0.0 || drift_fraction > 1.0) {
    throw std::invalid_argument("drift_fraction must lie in [0, 1]");
  }
  if (n_items <= 0 || n_users <= 0 || n_clusters <= 0) {
    throw std::invalid_argument("n_users, n_items and n_clusters must be positive");
  }
  if (n_clusters > n_items) throw std::invalid_argument("n_clusters must not exceed n_items");
  if (drift_fraction > 0.0 && n_clusters < 2) {
    throw std::invalid_argument("drift needs at least two clusters to migrate between");
  }
  if (drift_period < 1 || drift_period >= kNumPeriods) {
    throw std::invalid_argument("drift_period must be one of the update periods 1..4");
  }
  if (popularity_shift < 0.0) throw std::invalid_argument("popularity_shift must be non-negative");
  if (events_per_user < 3) throw std::invalid_argument("events_per_user must be at least 3");
  if (noise_rate < 0.0 || noise_rate > 1.0) throw std::invalid_argument("noise_rate must lie in [0, 1]");
  if (late_item_fraction < 0.0 || late_item_fraction + drift_fraction > 1.0) {
    throw std::invalid_argument("late_item_fraction must be non-negative and leave room for drifting items");
  }
  if (late_user_fraction < 0.0 || late_user_fraction >= 1.0) {
    throw std::invalid_argument("late_user_fraction must lie in [0, 1)");
  }
  if (favorite_clusters < 1 || favorite_clusters > n_clusters) {
    throw std::invalid_argument("favorite_clusters must lie in [1, n_clusters]");
  }
  if (semantic_dim <= 0 || semantic_noise < 0.0 || session_mean < 1.0) {
    throw std::invalid_argument("semantic_dim, semantic_noise and session_mean out of range");
  }
}

std::array<std::size_t, kNumPeriods + 1> period_boundaries(std::size_t n) {
  // Cumulative tenths: 6, 7, 8, 9, 10.
  std::array<std::size_t, kNumPeriods + 1> b{};
  b[0] = 0;
  for (int p = 1; p <= kNumPeriods; ++p) b[p] = n * static_cast<std::size_t>(5 + p) / 10;
  return b;
}

std::vector<PeriodDataset> split_periods(const std::vector<InteractionEvent>& stream) {
  if (!std::is_sorted(stream.begin(), stream.end())) {
    throw std::invalid_argument("split_periods: stream must be chronologically sorted");
  }
  const auto bounds = period_boundaries(stream.size());
  std::vector<PeriodDataset> periods(kNumPeriods);
  std::unordered_map<UserId, std::vector<ItemId>> history;
  std::set<ItemId> seen;
  for (int p = 0; p < kNumPeriods; ++p) {
    PeriodDataset& pd = periods[p];
    pd.period_index = p;
    std::map<UserId, std::size_t> start;
    for (std::size_t k = bounds[p]; k < bounds[p + 1]; ++k) {
      const auto& e = stream[k];
      pd.events.push_back(e);
      auto& h = history[e.user_id];
      start.emplace(e.user_id, h.size());
      h.push_back(e.item_id);
      if (seen.insert(e.item_id).second) pd.new_items.insert(e.item_id);
    }
    pd.item_set = seen;
    for (const auto& [u, s] : start) {
      const auto& seq = history[u];
      pd.user_sequences[u] = seq;
      UserSplit split;
      split.period_start = s;
      const std::size_t n_period = seq.size() - s;
      // The validation target needs at least one earlier item as context.
      split.held_out = n_period >= 2 && seq.size() >= 3;
      split.train_end = split.held_out ? seq.size() - 2 : seq.size();
      pd.splits[u] = split;
    }
  }
  return periods;
}

namespace {

double drift_progress(int period, int drift_period) {
  if (period < drift_period) return 0.0;
  const double span = std::max(1, kNumPeriods - 1 - drift_period);
  return std::min(1.0, 0.6 + 0.4 * static_cast<double>(period - drift_period) / span);
}

}  // namespace

Corpus generate_synthetic(const DriftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n_items = spec.n_items;

  // Balanced random cluster assignment.
  std::vector<int> order(n_items);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> cluster(n_items);
  for (int i = 0; i < n_items; ++i) cluster[order[i]] = i % spec.n_clusters;

  // Drifting items are drawn first; late releases come from the rest.
  std::vector<int> candidates(n_items);
  std::iota(candidates.begin(), candidates.end(), 0);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto n_drift = static_cast<std::size_t>(std::llround(spec.drift_fraction * n_items));
  const auto n_late = static_cast<std::size_t>(std::llround(spec.late_item_fraction * n_items));
  std::vector<int> new_cluster(n_items, -1);
  std::vector<int> release(n_items, 0);
  std::uniform_int_distribution<int> other_cluster(0, std::max(0, spec.n_clusters - 2));
  std::uniform_int_distribution<int> late_period(1, kNumPeriods - 1);
  for (std::size_t k = 0; k < n_drift; ++k) {
    const int i = candidates[k];
    int c = other_cluster(rng);
    if (c >= cluster[i]) ++c;
    new_cluster[i] = c;
  }
  for (std::size_t k = n_drift; k < n_drift + n_late; ++k) release[candidates[k]] = late_period(rng);

  // Mild Zipf popularity inside each cluster.
  std::vector<double> base_pop(n_items);
  for (int i = 0; i < n_items; ++i) base_pop[i] = 1.0 / std::pow(1.0 + 20.0 * unif(rng), 0.6);

  // Static content: cluster centroid plus item-specific noise.
  Matrix centroids = gaussian_matrix(spec.n_clusters, spec.semantic_dim, spec.centroid_scale, rng);
  Matrix noise = gaussian_matrix(n_items, spec.semantic_dim, spec.semantic_noise, rng);
  std::vector<ItemId> ids(n_items);
  Matrix sem(n_items, spec.semantic_dim);
  for (int i = 0; i < n_items; ++i) {
    ids[i] = i;
    sem.row(i) = centroids.row(cluster[i]) + noise.row(i);
  }

  // Users: a few favourite clusters plus a uniform floor.
  struct UserState {
    std::vector<double> pref;
    int start = 0;
    int session_cluster = -1;
    int remaining = 0;
    std::unordered_set<int> consumed;
  };
  std::vector<UserState> users(spec.n_users);
  const auto n_late_users = static_cast<int>(std::llround(spec.late_user_fraction * spec.n_users));
  for (int u = 0; u < spec.n_users; ++u) {
    auto& us = users[u];
    us.pref.assign(spec.n_clusters, 0.1 / spec.n_clusters);
    std::vector<int> cl(spec.n_clusters);
    std::iota(cl.begin(), cl.end(), 0);
    std::shuffle(cl.begin(), cl.end(), rng);
    for (int f = 0; f < spec.favorite_clusters; ++f) us.pref[cl[f]] += 0.9 / spec.favorite_clusters;
    us.start = u >= spec.n_users - n_late_users ? late_period(rng) : 0;
  }

  const std::size_t total = static_cast<std::size_t>(spec.n_users) * spec.events_per_user;
  const auto bounds = period_boundaries(total);
  std::geometric_distribution<int> session_len(1.0 / spec.session_mean);
  std::vector<double> weights(n_items);
  Corpus corpus;
  corpus.stream.reserve(total);
  int period = 0;
  std::vector<int> active;
  for (std::size_t k = 0; k < total; ++k) {
    while (k >= bounds[period + 1]) ++period;
    active.clear();
    for (int u = 0; u < spec.n_users; ++u) {
      if (users[u].start <= period) active.push_back(u);
    }
    const int u = active[std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)];
    auto& us = users[u];
    if (us.remaining == 0) {
      us.session_cluster = std::discrete_distribution<int>(us.pref.begin(), us.pref.end())(rng);
      us.remaining = 1 + session_len(rng);
    }
    --us.remaining;

    const double progress = drift_progress(period, spec.drift_period);
    const bool noisy = unif(rng) < spec.noise_rate;
    double total_w = 0.0;
    for (int i = 0; i < n_items; ++i) {
      double w = 0.0;
      if (release[i] <= period && !us.consumed.count(i)) {
        if (noisy) {
          w = 1.0;
        } else if (new_cluster[i] >= 0 && progress > 0.0) {
          if (cluster[i] == us.session_cluster) w += (1.0 - progress) * base_pop[i];
          if (new_cluster[i] == us.session_cluster) {
            w += progress * (1.0 + spec.popularity_shift) * base_pop[i];
          }
        } else if (cluster[i] == us.session_cluster) {
          w = base_pop[i];
        }
      }
      weights[i] = w;
      total_w += w;
    }
    if (total_w <= 0.0) {
      // Session pool exhausted for this user: any unconsumed released item.
      for (int i = 0; i < n_items; ++i) {
        weights[i] = (release[i] <= period && !us.consumed.count(i)) ? 1.0 : 0.0;
        total_w += weights[i];
      }
    }
    if (total_w <= 0.0) {
      for (int i = 0; i < n_items; ++i) weights[i] = release[i] <= period ? 1.0 : 0.0;
    }
    const int item = std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
    us.consumed.insert(item);
    corpus.stream.push_back({u, item, 1'600'000'000LL + static_cast<std::int64_t>(k) * 60});
  }

  corpus.periods = split_periods(corpus.stream);
  for (int i = 0; i < n_items; ++i) {
    corpus.original_cluster[i] = cluster[i];
    if (new_cluster[i] >= 0) {
      corpus.drifting_items.insert(i);
      corpus.drift_target_cluster[i] = new_cluster[i];
    }
  }
  corpus.semantic = ItemTable(std::move(ids), std::move(sem));
  return corpus;
}

std::vector<InteractionEvent> kcore_filter(std::vector<InteractionEvent> events, int min_count) {
  if (min_count <= 1) return events;
  while (true) {
    std::unordered_map<UserId, int> user_count;
    std::unordered_map<ItemId, int> item_count;
    for (const auto& e : events) {
      ++user_count[e.user_id];
      ++item_count[e.item_id];
    }
    const auto before = events.size();
    std::erase_if(events, [&](const InteractionEvent& e) {
      return user_count[e.user_id] < min_count || item_count[e.item_id] < min_count;
    });
    if (events.size() == before) return events;
  }
}

namespace {

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::vector<InteractionEvent> read_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<InteractionEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<std::string_view, 3> fields;
    std::string_view rest(line);
    std::size_t n = 0;
    bool ok = true;
    while (ok) {
      const auto tab = rest.find('\t');
      if (n == 3) {
        ok = false;
        break;
      }
      fields[n++] = rest.substr(0, tab);
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    InteractionEvent e;
    ok = ok && n == 3 && parse_int(fields[0], e.user_id) && parse_int(fields[1], e.item_id) &&
         parse_int(fields[2], e.timestamp) && e.user_id >= 0 && e.item_id >= 0;
    if (!ok) {
      throw Error(path.string() + ":" + std::to_string(line_no) +
                  ": expected 'user_id<TAB>item_id<TAB>timestamp' with non-negative integers");
    }
    events.push_back(e);
  }
  return events;
}

Corpus ingest_tsv(const fs::path& path, int min_count) {
  auto events = kcore_filter(read_tsv(path), min_count);
  if (events.empty()) {
    throw Error("corpus is empty after " + std::to_string(min_count) + "-core filtering: " + path.string());
  }
  std::sort(events.begin(), events.end());
  Corpus corpus;
  corpus.stream = std::move(events);
  corpus.periods = split_periods(corpus.stream);
  return corpus;
}

namespace {

std::vector<ItemId> context_before(const std::vector<ItemId>& seq, std::size_t t, int max_len) {
  const std::size_t begin = t > static_cast<std::size_t>(max_len) ? t - max_len : 0;
  return {seq.begin() + static_cast<std::ptrdiff_t>(begin), seq.begin() + static_cast<std::ptrdiff_t>(t)};
}

void check_max_len(int max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must be at least 2");
}

}  // namespace

std::vector<Window> build_training_windows(const PeriodDataset& pd, int max_len) {
  check_max_len(max_len);
  std::vector<Window> out;
  for (const auto& [u, seq] : pd.user_sequences) {
    const auto& split = pd.splits.at(u);
    for (std::size_t t = std::max<std::size_t>(split.period_start, 1); t < split.train_end; ++t) {
      out.push_back({u, context_before(seq, t, max_len), seq[t]});
    }
  }
  return out;
}

std::vector<Window> validation_windows(const PeriodDataset& pd, int max_len) {
  check_max_len(max_len);
  std::vector<Window> out;
  for (const auto& [u, seq] : pd.user_sequences) {
    const auto& split = pd.splits.at(u);
    if (!split.held_out) continue;
    out.push_back({u, context_before(seq, split.train_end, max_len), seq[split.train_end]});
  }
  return out;
}

std::vector<Window> test_windows(const PeriodDataset& pd, int max_len) {
  check_max_len(max_len);
  std::vector<Window> out;
  for (const auto& [u, seq] : pd.user_sequences) {
    const auto& split = pd.splits.at(u);
    if (!split.held_out) continue;
    out.push_back({u, context_before(seq, split.train_end + 1, max_len), seq[split.train_end + 1]});
  }
  return out;
}

std::string events_to_tsv(const std::vector<InteractionEvent>& events) {
  std::string out;
  out.reserve(events.size() * 24);
  for (const auto& e : events) {
    out += std::to_string(e.user_id);
    out += '\t';
    out += std::to_string(e.item_id);
    out += '\t';
    out += std::to_string(e.timestamp);
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  const auto bounds = period_boundaries(corpus.stream.size());
  manifest["n_interactions"] = corpus.stream.size();
  manifest["boundaries"] = bounds;
  std::set<UserId> users;
  for (const auto& e : corpus.stream) users.insert(e.user_id);
  manifest["n_users"] = users.size();
  manifest["n_items"] = corpus.periods.empty() ? 0 : corpus.periods.back().item_set.size();
  manifest["periods"] = nlohmann::json::array();
  for (const auto& pd : corpus.periods) {
    const std::string file = "period_" + std::to_string(pd.period_index) + ".tsv";
    write_text_atomic(dir / file, events_to_tsv(pd.events));
    manifest["periods"].push_back({{"period", pd.period_index},
                                   {"file", file},
                                   {"n_events", pd.events.size()},
                                   {"n_users", pd.user_sequences.size()},
                                   {"n_held_out_users", pd.held_out_users()},
                                   {"n_live_items", pd.item_set.size()},
                                   {"new_items", pd.new_items}});
  }
  if (corpus.has_drift_labels()) {
    manifest["drifting_items"] = corpus.drifting_items;
    nlohmann::json clusters = nlohmann::json::object();
    for (const auto& [item, c] : corpus.original_cluster) clusters[std::to_string(item)] = c;
    manifest["original_cluster"] = clusters;
    nlohmann::json targets = nlohmann::json::object();
    for (const auto& [item, c] : corpus.drift_target_cluster) targets[std::to_string(item)] = c;
    manifest["drift_target_cluster"] = targets;
  }
  manifest["has_semantic"] = !corpus.semantic.empty();
  if (!corpus.semantic.empty()) corpus.semantic.save(dir / "embeddings");
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const fs::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  Corpus corpus;
  for (const auto& p : manifest.at("periods")) {
    auto events = read_tsv(dir / p.at("file").get<std::string>());
    corpus.stream.insert(corpus.stream.end(), events.begin(), events.end());
  }
  if (!std::is_sorted(corpus.stream.begin(), corpus.stream.end())) {
    throw Error("corpus at " + dir.string() + " is not chronologically ordered");
  }
  corpus.periods = split_periods(corpus.stream);
  if (manifest.contains("drifting_items")) {
    corpus.drifting_items = manifest.at("drifting_items").get<std::set<ItemId>>();
    for (const auto& [k, v] : manifest.at("original_cluster").items()) {
      corpus.original_cluster[std::stoll(k)] = v.get<int>();
    }
    for (const auto& [k, v] : manifest.at("drift_target_cluster").items()) {
      corpus.drift_target_cluster[std::stoll(k)] = v.get<int>();
    }
  }
  if (manifest.value("has_semantic", false)) corpus.semantic = ItemTable::load(dir / "embeddings");
  return corpus;
}

}  // namespace dact::data
