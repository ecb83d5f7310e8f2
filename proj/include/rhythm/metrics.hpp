#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rhythm/data.hpp"

#include "json.hpp"

namespace rhythm::metrics {

// One future slot: ground truth (or kMissing) plus the stored top-K ranking
// (descending probability, ties broken by ascending location id).
struct SlotPrediction {
  int true_location = data::kMissing;
  int slot_of_day = 0;
  int day_of_week = 0;
  std::vector<int> ranking;
};

// Indices 0..n-1 ordered by descending score, ties by ascending index.
std::vector<int> top_k_ranking(std::span<const double> scores, int k);

double accuracy_at_k(std::span<const SlotPrediction> predictions, int k);

// Mean reciprocal rank over observed slots. A true location absent from the
// stored top-K contributes zero (truncated MRR).
double mrr(std::span<const SlotPrediction> predictions);

struct Cell {
  int x = 0;
  int y = 0;
};

// Classic full-lattice dynamic program with Euclidean cell-center distance in
// grid units; boundary-anchored monotone alignments.
double dtw(std::span<const Cell> a, std::span<const Cell> b);

// Uniform-weight BLEU over n = 1..max_n with clipped precisions and brevity
// penalty; no smoothing, so any zero precision yields 0. Orders longer than
// the hypothesis are dropped and the weights renormalized.
double bleu(std::span<const int> reference, std::span<const int> hypothesis, int max_n = 4);

struct BreakdownBin {
  int count = 0;
  int hits = 0;
  bool empty() const { return count == 0; }
  double acc1() const { return count == 0 ? 0.0 : static_cast<double>(hits) / count; }
};

struct TemporalBreakdown {
  std::array<BreakdownBin, data::kSlotsPerDay> by_slot{};
  std::array<BreakdownBin, 7> by_dow{};
};

TemporalBreakdown temporal_breakdown(std::span<const SlotPrediction> predictions);

// Modal-location predictor with fallback chain:
// (user, slot, weekday/weekend class) -> (user, slot) -> user -> global.
class FrequencyBaseline {
 public:
  static FrequencyBaseline fit(const std::vector<data::Trajectory>& trajectories,
                               const data::GridSpec& grid, data::DayRange train_days);

  std::vector<int> ranking(std::int64_t user, int slot, int dow, int k) const;

 private:
  using Counts = std::map<int, int>;  // cell id -> frequency
  std::map<std::tuple<std::int64_t, int, int>, Counts> by_user_slot_class_;
  std::map<std::pair<std::int64_t, int>, Counts> by_user_slot_;
  std::map<std::int64_t, Counts> by_user_;
  Counts global_;
};

struct ReportMetrics {
  double acc1 = 0.0;
  double acc3 = 0.0;
  double acc5 = 0.0;
  double mrr = 0.0;
  double dtw_mean = 0.0;
  double bleu_mean = 0.0;
};

struct EvaluatedSample {
  std::vector<SlotPrediction> slots;
};

struct PredictionReport {
  std::string split;
  std::size_t samples = 0;
  std::size_t observed_slots = 0;
  int top_k = 10;
  std::string bleu_averaging = "per_trajectory";
  ReportMetrics metrics;
  TemporalBreakdown breakdown;
  nlohmann::ordered_json config_echo = nlohmann::ordered_json::object();
  std::string data_fingerprint;

  std::string to_json() const;
  static PredictionReport from_json(const std::string& text);
};

PredictionReport summarize(std::span<const EvaluatedSample> samples, const data::GridSpec& grid,
                           int top_k, const std::string& split_name);

}  // namespace rhythm::metrics
