#include "rhythm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rhythm/semantic.hpp"

namespace rhythm::metrics {

std::vector<int> top_k_ranking(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int keep = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(keep);
  return idx;
}

namespace {

int observed_count(std::span<const SlotPrediction> predictions) {
  int n = 0;
  for (const SlotPrediction& p : predictions) n += (p.true_location != data::kMissing);
  return n;
}

}  // namespace

double accuracy_at_k(std::span<const SlotPrediction> predictions, int k) {
  require(k >= 1, ErrorCode::ConfigError, "k must be at least 1");
  int observed = 0, hits = 0;
  for (const SlotPrediction& p : predictions) {
    if (p.true_location == data::kMissing) continue;
    ++observed;
    const int depth = std::min<int>(k, static_cast<int>(p.ranking.size()));
    for (int i = 0; i < depth; ++i) {
      if (p.ranking[i] == p.true_location) {
        ++hits;
        break;
      }
    }
  }
  require(observed > 0, ErrorCode::NoObservedTargets, "no observed targets to score");
  return static_cast<double>(hits) / observed;
}

double mrr(std::span<const SlotPrediction> predictions) {
  int observed = 0;
  double total = 0.0;
  for (const SlotPrediction& p : predictions) {
    if (p.true_location == data::kMissing) continue;
    ++observed;
    for (std::size_t i = 0; i < p.ranking.size(); ++i) {
      if (p.ranking[i] == p.true_location) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  require(observed > 0, ErrorCode::NoObservedTargets, "no observed targets to score");
  return total / observed;
}

double dtw(std::span<const Cell> a, std::span<const Cell> b) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptySequence, "dtw needs nonempty sequences");
  const std::size_t n = a.size(), m = b.size();
  auto dist = [&](std::size_t i, std::size_t j) {
    const double dx = a[i].x - b[j].x;
    const double dy = a[i].y - b[j].y;
    return std::sqrt(dx * dx + dy * dy);
  };
  std::vector<double> prev(m), cur(m);
  prev[0] = dist(0, 0);
  for (std::size_t j = 1; j < m; ++j) prev[j] = prev[j - 1] + dist(0, j);
  for (std::size_t i = 1; i < n; ++i) {
    cur[0] = prev[0] + dist(i, 0);
    for (std::size_t j = 1; j < m; ++j) {
      cur[j] = dist(i, j) + std::min({prev[j], prev[j - 1], cur[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

double bleu(std::span<const int> reference, std::span<const int> hypothesis, int max_n) {
  require(!reference.empty() && !hypothesis.empty(), ErrorCode::EmptySequence,
          "bleu needs nonempty sequences");
  require(max_n >= 1, ErrorCode::ConfigError, "max_n must be at least 1");

  double log_precision = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const int hyp_total = static_cast<int>(hypothesis.size()) - n + 1;
    if (hyp_total <= 0) break;  // shorter orders only; weights renormalize
    std::map<std::vector<int>, int> ref_counts;
    const int ref_total = static_cast<int>(reference.size()) - n + 1;
    for (int i = 0; i < ref_total; ++i) {
      ref_counts[std::vector<int>(reference.begin() + i, reference.begin() + i + n)]++;
    }
    int matches = 0;
    std::map<std::vector<int>, int> used;
    for (int i = 0; i < hyp_total; ++i) {
      std::vector<int> gram(hypothesis.begin() + i, hypothesis.begin() + i + n);
      auto it = ref_counts.find(gram);
      if (it == ref_counts.end()) continue;
      if (used[gram] < it->second) {
        ++used[gram];
        ++matches;
      }
    }
    if (matches == 0) return 0.0;  // no smoothing
    log_precision += std::log(static_cast<double>(matches) / hyp_total);
    ++used_orders;
  }
  const double bp =
      hypothesis.size() >= reference.size()
          ? 1.0
          : std::exp(1.0 - static_cast<double>(reference.size()) / hypothesis.size());
  return bp * std::exp(log_precision / used_orders);
}

TemporalBreakdown temporal_breakdown(std::span<const SlotPrediction> predictions) {
  TemporalBreakdown out;
  for (const SlotPrediction& p : predictions) {
    if (p.true_location == data::kMissing) continue;
    const bool hit = !p.ranking.empty() && p.ranking[0] == p.true_location;
    BreakdownBin& slot_bin = out.by_slot[p.slot_of_day];
    ++slot_bin.count;
    slot_bin.hits += hit;
    BreakdownBin& dow_bin = out.by_dow[p.day_of_week];
    ++dow_bin.count;
    dow_bin.hits += hit;
  }
  return out;
}

FrequencyBaseline FrequencyBaseline::fit(const std::vector<data::Trajectory>& trajectories,
                                         const data::GridSpec& grid, data::DayRange train_days) {
  FrequencyBaseline baseline;
  for (const data::Trajectory& traj : trajectories) {
    for (const data::Observation& o : traj.observations) {
      if (!train_days.contains(o.day)) continue;
      const int cell = data::location_id(grid, o.x, o.y);
      const int dow_class = data::is_weekend(data::day_of_week(o.day)) ? 1 : 0;
      baseline.by_user_slot_class_[{traj.user_id, o.slot, dow_class}][cell]++;
      baseline.by_user_slot_[{traj.user_id, o.slot}][cell]++;
      baseline.by_user_[traj.user_id][cell]++;
      baseline.global_[cell]++;
    }
  }
  return baseline;
}

namespace {

// Appends cells by descending frequency (ties ascending id), skipping ones
// already ranked.
void append_by_frequency(const std::map<int, int>& counts, std::vector<int>& out, int k) {
  std::vector<std::pair<int, int>> cells(counts.begin(), counts.end());
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [cell, count] : cells) {
    if (static_cast<int>(out.size()) >= k) return;
    if (std::find(out.begin(), out.end(), cell) == out.end()) out.push_back(cell);
  }
}

}  // namespace

std::vector<int> FrequencyBaseline::ranking(std::int64_t user, int slot, int dow, int k) const {
  std::vector<int> out;
  const int dow_class = data::is_weekend(dow) ? 1 : 0;
  if (auto it = by_user_slot_class_.find({user, slot, dow_class});
      it != by_user_slot_class_.end()) {
    append_by_frequency(it->second, out, k);
  }
  if (static_cast<int>(out.size()) < k) {
    if (auto it = by_user_slot_.find({user, slot}); it != by_user_slot_.end()) {
      append_by_frequency(it->second, out, k);
    }
  }
  if (static_cast<int>(out.size()) < k) {
    if (auto it = by_user_.find(user); it != by_user_.end()) {
      append_by_frequency(it->second, out, k);
    }
  }
  if (static_cast<int>(out.size()) < k) append_by_frequency(global_, out, k);
  return out;
}

PredictionReport summarize(std::span<const EvaluatedSample> samples, const data::GridSpec& grid,
                           int top_k, const std::string& split_name) {
  require(!samples.empty(), ErrorCode::EmptySplit, "no samples to evaluate");
  std::vector<SlotPrediction> pooled;
  double dtw_total = 0.0, bleu_total = 0.0;
  std::size_t sequence_samples = 0;
  for (const EvaluatedSample& sample : samples) {
    pooled.insert(pooled.end(), sample.slots.begin(), sample.slots.end());
    std::vector<Cell> truth, predicted;
    std::vector<int> truth_ids, predicted_ids;
    for (const SlotPrediction& p : sample.slots) {
      if (p.true_location == data::kMissing || p.ranking.empty()) continue;
      auto [tx, ty] = data::inverse_location_id(grid, p.true_location);
      auto [px, py] = data::inverse_location_id(grid, p.ranking[0]);
      truth.push_back({tx, ty});
      predicted.push_back({px, py});
      truth_ids.push_back(p.true_location);
      predicted_ids.push_back(p.ranking[0]);
    }
    if (truth.empty()) continue;
    ++sequence_samples;
    dtw_total += dtw(truth, predicted);
    bleu_total += bleu(truth_ids, predicted_ids);
  }

  PredictionReport report;
  report.split = split_name;
  report.samples = samples.size();
  report.observed_slots = static_cast<std::size_t>(observed_count(pooled));
  report.top_k = top_k;
  report.metrics.acc1 = accuracy_at_k(pooled, 1);
  report.metrics.acc3 = accuracy_at_k(pooled, 3);
  report.metrics.acc5 = accuracy_at_k(pooled, 5);
  report.metrics.mrr = mrr(pooled);
  report.metrics.dtw_mean = sequence_samples == 0 ? 0.0 : dtw_total / sequence_samples;
  report.metrics.bleu_mean = sequence_samples == 0 ? 0.0 : bleu_total / sequence_samples;
  report.breakdown = temporal_breakdown(pooled);
  return report;
}

std::string PredictionReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["samples"] = samples;
  j["observed_slots"] = observed_slots;
  j["top_k"] = top_k;
  j["bleu_averaging"] = bleu_averaging;
  j["metrics"] = {{"acc1", metrics.acc1},         {"acc3", metrics.acc3},
                  {"acc5", metrics.acc5},         {"mrr", metrics.mrr},
                  {"dtw_mean", metrics.dtw_mean}, {"bleu_mean", metrics.bleu_mean}};
  auto by_slot = nlohmann::ordered_json::array();
  for (int s = 0; s < data::kSlotsPerDay; ++s) {
    const BreakdownBin& bin = breakdown.by_slot[s];
    nlohmann::ordered_json entry{{"slot", s}, {"count", bin.count}, {"hits", bin.hits}};
    if (bin.empty()) {
      entry["acc1"] = nullptr;
    } else {
      entry["acc1"] = bin.acc1();
    }
    by_slot.push_back(entry);
  }
  j["by_slot"] = by_slot;
  auto by_dow = nlohmann::ordered_json::array();
  for (int d = 0; d < 7; ++d) {
    const BreakdownBin& bin = breakdown.by_dow[d];
    nlohmann::ordered_json entry{
        {"dow", d}, {"name", semantic::weekday_name(d)}, {"count", bin.count}, {"hits", bin.hits}};
    if (bin.empty()) {
      entry["acc1"] = nullptr;
    } else {
      entry["acc1"] = bin.acc1();
    }
    by_dow.push_back(entry);
  }
  j["by_dow"] = by_dow;
  j["config"] = config_echo;
  j["data_fingerprint"] = data_fingerprint;
  return j.dump(2) + "\n";
}

PredictionReport PredictionReport::from_json(const std::string& text) {
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
  PredictionReport report;
  report.split = j.at("split").get<std::string>();
  report.samples = j.at("samples").get<std::size_t>();
  report.observed_slots = j.at("observed_slots").get<std::size_t>();
  report.top_k = j.at("top_k").get<int>();
  report.bleu_averaging = j.at("bleu_averaging").get<std::string>();
  const auto& m = j.at("metrics");
  report.metrics.acc1 = m.at("acc1").get<double>();
  report.metrics.acc3 = m.at("acc3").get<double>();
  report.metrics.acc5 = m.at("acc5").get<double>();
  report.metrics.mrr = m.at("mrr").get<double>();
  report.metrics.dtw_mean = m.at("dtw_mean").get<double>();
  report.metrics.bleu_mean = m.at("bleu_mean").get<double>();
  for (const auto& entry : j.at("by_slot")) {
    BreakdownBin& bin = report.breakdown.by_slot.at(entry.at("slot").get<int>());
    bin.count = entry.at("count").get<int>();
    bin.hits = entry.at("hits").get<int>();
  }
  for (const auto& entry : j.at("by_dow")) {
    BreakdownBin& bin = report.breakdown.by_dow.at(entry.at("dow").get<int>());
    bin.count = entry.at("count").get<int>();
    bin.hits = entry.at("hits").get<int>();
  }
  report.config_echo = j.at("config");
  report.data_fingerprint = j.at("data_fingerprint").get<std::string>();
  return report;
}

}  // namespace rhythm::metrics
