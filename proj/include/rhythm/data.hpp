#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rhythm/error.hpp"
#include "rhythm/rng.hpp"

namespace rhythm::data {

inline constexpr int kSlotsPerDay = 48;
inline constexpr int kHistoryDays = 7;
inline constexpr int kHistorySlots = kHistoryDays * kSlotsPerDay;  // 336
inline constexpr int kHorizonSlots = kSlotsPerDay;                 // 48
inline constexpr int kMissing = -1;

// Day 0 is anchored to Monday; weekends are dow 5 and 6.
inline int day_of_week(int day) { return day % 7; }
inline bool is_weekend(int dow) { return dow >= 5; }

struct GridSpec {
  int width = 200;
  int height = 200;

  int vocabulary_size() const { return width * height; }
  static GridSpec parse(const std::string& spec);  // "WxH"
};

// Flattening: id = (x-1)*height + (y-1). Bijective over the grid.
int location_id(const GridSpec& grid, int x, int y);
std::pair<int, int> inverse_location_id(const GridSpec& grid, int id);

struct Observation {
  int day = 0;
  int slot = 0;
  int x = 1;
  int y = 1;
};

struct Trajectory {
  std::int64_t user_id = 0;
  std::vector<Observation> observations;  // strictly increasing by (day, slot)

  int span_days() const {
    return observations.empty() ? 0 : observations.back().day + 1;
  }
};

// CSV schema: header `uid,d,t,x,y`, integer fields, LF newlines.
std::vector<Trajectory> parse_trajectory_csv_text(std::string_view text, const GridSpec& grid);
std::vector<Trajectory> parse_trajectory_csv(const std::string& path, const GridSpec& grid);
std::string trajectory_csv_text(const std::vector<Trajectory>& trajectories);
void write_trajectory_csv(const std::string& path, const std::vector<Trajectory>& trajectories);

// Hex SHA-256 of the canonical CSV serialization; echoed into reports.
std::string dataset_fingerprint(const std::vector<Trajectory>& trajectories);

int total_days(const std::vector<Trajectory>& trajectories);

struct DayRange {
  int begin = 0;
  int end = 0;  // half-open
  bool contains(int day) const { return day >= begin && day < end; }
  int size() const { return end - begin; }
};

struct ChronoSplit {
  DayRange train, val, test;
};

// Splits day indices [0, total_days) chronologically. A sample belongs to the
// split that contains its future day.
ChronoSplit chronological_split(int total_days,
                                std::array<double, 3> ratios = {0.7, 0.2, 0.1});

// One training/eval unit: a 7-day history window plus the next day's targets.
struct PredictionSample {
  std::int64_t user_id = 0;
  int target_day = 0;
  std::array<int, kHistorySlots> history{};  // location id or kMissing
  std::array<int, kHorizonSlots> targets{};  // location id or kMissing

  int history_day(int t) const { return target_day - kHistoryDays + t / kSlotsPerDay; }
  int history_slot(int t) const { return t % kSlotsPerDay; }
  int history_dow(int t) const { return day_of_week(history_day(t)); }
  int future_dow() const { return day_of_week(target_day); }
  int observed_target_count() const;
};

// One sample per target day d in [7, span); unobserved slots become kMissing.
std::vector<PredictionSample> build_samples(const Trajectory& trajectory, const GridSpec& grid);

struct SampleSplits {
  std::vector<PredictionSample> train, val, test;
};

SampleSplits split_samples(const std::vector<Trajectory>& trajectories, const GridSpec& grid,
                           const ChronoSplit& split);

// --- synthetic traces ---------------------------------------------------------

struct SynthConfig {
  int users = 20;
  int days = 30;
  double noise = 0.0;    // per-slot probability of a Chebyshev-radius-5 detour
  double dropout = 0.3;  // per-slot probability of an unobserved slot
  std::uint64_t seed = 7;
  GridSpec grid;
};

// Weekday routine: work 09:00-17:00 (slots 18..33), home otherwise.
// Weekend routine: leisure 10:00-20:00 (slots 20..39), home otherwise.
inline constexpr int kWorkBeginSlot = 18;
inline constexpr int kWorkEndSlot = 34;
inline constexpr int kLeisureBeginSlot = 20;
inline constexpr int kLeisureEndSlot = 40;

struct UserRoutine {
  std::int64_t user_id = 0;
  int home_x = 1, home_y = 1;
  int work_x = 1, work_y = 1;
  int leisure_x = 1, leisure_y = 1;

  std::pair<int, int> cell(int dow, int slot) const;
  int cell_id(const GridSpec& grid, int dow, int slot) const;
};

struct SyntheticDataset {
  SynthConfig config;
  std::vector<Trajectory> trajectories;
  std::vector<UserRoutine> routines;
};

SyntheticDataset generate_synthetic(const SynthConfig& config);

// JSON sidecar with the generator config and per-user routine tables.
std::string generator_sidecar_json(const SyntheticDataset& dataset);
void write_generator_sidecar(const std::string& path, const SyntheticDataset& dataset);

}  // namespace rhythm::data
