#include "rhythm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rhythm/digest.hpp"
#include "rhythm/serialize.hpp"

#include "json.hpp"

namespace rhythm::data {

GridSpec GridSpec::parse(const std::string& spec) {
  auto x = spec.find('x');
  require(x != std::string::npos, ErrorCode::ConfigError, "grid spec must look like WxH: " + spec);
  GridSpec grid;
  try {
    grid.width = std::stoi(spec.substr(0, x));
    grid.height = std::stoi(spec.substr(x + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::ConfigError, "grid spec must look like WxH: " + spec);
  }
  require(grid.width >= 1 && grid.height >= 1, ErrorCode::ConfigError,
          "grid extents must be positive: " + spec);
  return grid;
}

int location_id(const GridSpec& grid, int x, int y) {
  require(x >= 1 && x <= grid.width && y >= 1 && y <= grid.height, ErrorCode::OutOfGrid,
          "cell (" + std::to_string(x) + "," + std::to_string(y) + ") outside " +
              std::to_string(grid.width) + "x" + std::to_string(grid.height) + " grid");
  return (x - 1) * grid.height + (y - 1);
}

std::pair<int, int> inverse_location_id(const GridSpec& grid, int id) {
  require(id >= 0 && id < grid.vocabulary_size(), ErrorCode::OutOfGrid,
          "location id " + std::to_string(id) + " outside vocabulary");
  return {id / grid.height + 1, id % grid.height + 1};
}

namespace {

long long parse_int_field(std::string_view field, int line_no) {
  long long value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  require(ec == std::errc() && ptr == end && !field.empty(), ErrorCode::MalformedRow,
          "line " + std::to_string(line_no) + ": not an integer: '" + std::string(field) + "'");
  return value;
}

}  // namespace

std::vector<Trajectory> parse_trajectory_csv_text(std::string_view text, const GridSpec& grid) {
  std::map<std::int64_t, std::vector<Observation>> by_user;
  std::size_t pos = 0;
  int line_no = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                           : eol - pos);
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!saw_header) {
      require(line == "uid,d,t,x,y", ErrorCode::MalformedRow,
              "line 1: expected header 'uid,d,t,x,y', got '" + std::string(line) + "'");
      saw_header = true;
      continue;
    }
    std::array<std::string_view, 5> fields;
    int n_fields = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        require(n_fields < 5, ErrorCode::MalformedRow,
                "line " + std::to_string(line_no) + ": expected 5 fields");
        fields[n_fields++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    require(n_fields == 5, ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": expected 5 fields, got " +
                std::to_string(n_fields));
    const long long uid = parse_int_field(fields[0], line_no);
    const long long day = parse_int_field(fields[1], line_no);
    const long long slot = parse_int_field(fields[2], line_no);
    const long long x = parse_int_field(fields[3], line_no);
    const long long y = parse_int_field(fields[4], line_no);
    require(day >= 0, ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": negative day");
    require(slot >= 0 && slot < kSlotsPerDay, ErrorCode::MalformedRow,
            "line " + std::to_string(line_no) + ": slot " + std::to_string(slot) +
                " outside [0,48)");
    require(x >= 1 && x <= grid.width && y >= 1 && y <= grid.height, ErrorCode::OutOfGrid,
            "line " + std::to_string(line_no) + ": cell (" + std::to_string(x) + "," +
                std::to_string(y) + ") outside grid");
    by_user[uid].push_back(Observation{static_cast<int>(day), static_cast<int>(slot),
                                       static_cast<int>(x), static_cast<int>(y)});
  }
  require(saw_header, ErrorCode::MalformedRow, "empty file: missing 'uid,d,t,x,y' header");

  std::vector<Trajectory> out;
  out.reserve(by_user.size());
  for (auto& [uid, obs] : by_user) {
    std::stable_sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
      return std::pair(a.day, a.slot) < std::pair(b.day, b.slot);
    });
    for (std::size_t i = 1; i < obs.size(); ++i) {
      require(obs[i - 1].day != obs[i].day || obs[i - 1].slot != obs[i].slot,
              ErrorCode::DuplicateObservation,
              "uid " + std::to_string(uid) + " day " + std::to_string(obs[i].day) + " slot " +
                  std::to_string(obs[i].slot));
    }
    out.push_back(Trajectory{uid, std::move(obs)});
  }
  return out;
}

std::vector<Trajectory> parse_trajectory_csv(const std::string& path, const GridSpec& grid) {
  return parse_trajectory_csv_text(read_file(path), grid);
}

std::string trajectory_csv_text(const std::vector<Trajectory>& trajectories) {
  std::string out = "uid,d,t,x,y\n";
  for (const Trajectory& traj : trajectories) {
    for (const Observation& o : traj.observations) {
      out += std::to_string(traj.user_id);
      out += ',';
      out += std::to_string(o.day);
      out += ',';
      out += std::to_string(o.slot);
      out += ',';
      out += std::to_string(o.x);
      out += ',';
      out += std::to_string(o.y);
      out += '\n';
    }
  }
  return out;
}

void write_trajectory_csv(const std::string& path, const std::vector<Trajectory>& trajectories) {
  write_file(path, trajectory_csv_text(trajectories));
}

std::string dataset_fingerprint(const std::vector<Trajectory>& trajectories) {
  return to_hex(sha256(trajectory_csv_text(trajectories)));
}

int total_days(const std::vector<Trajectory>& trajectories) {
  int days = 0;
  for (const Trajectory& t : trajectories) days = std::max(days, t.span_days());
  return days;
}

ChronoSplit chronological_split(int total_days, std::array<double, 3> ratios) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::abs(sum - 1.0) < 1e-9, ErrorCode::ConfigError, "split ratios must sum to 1");
  // The epsilon guards floor() against 0.7*30 = 20.999... style rounding.
  const int n_train = static_cast<int>(std::floor(ratios[0] * total_days + 1e-9));
  const int n_val = static_cast<int>(std::floor(ratios[1] * total_days + 1e-9));
  const int n_test = total_days - n_train - n_val;
  require(n_train > 0 && n_val > 0 && n_test > 0, ErrorCode::EmptySplit,
          "split over " + std::to_string(total_days) + " days leaves an empty split");
  ChronoSplit split;
  split.train = {0, n_train};
  split.val = {n_train, n_train + n_val};
  split.test = {n_train + n_val, total_days};
  return split;
}

int PredictionSample::observed_target_count() const {
  int n = 0;
  for (int t : targets) n += (t != kMissing);
  return n;
}

std::vector<PredictionSample> build_samples(const Trajectory& trajectory, const GridSpec& grid) {
  std::vector<PredictionSample> samples;
  const int span = trajectory.span_days();
  if (span < kHistoryDays + 1) return samples;

  std::map<std::pair<int, int>, int> at;  // (day, slot) -> location id
  for (const Observation& o : trajectory.observations) {
    at[{o.day, o.slot}] = location_id(grid, o.x, o.y);
  }
  auto lookup = [&](int day, int slot) {
    auto it = at.find({day, slot});
    return it == at.end() ? kMissing : it->second;
  };

  for (int d = kHistoryDays; d < span; ++d) {
    PredictionSample s;
    s.user_id = trajectory.user_id;
    s.target_day = d;
    for (int t = 0; t < kHistorySlots; ++t) {
      s.history[t] = lookup(d - kHistoryDays + t / kSlotsPerDay, t % kSlotsPerDay);
    }
    for (int j = 0; j < kHorizonSlots; ++j) s.targets[j] = lookup(d, j);
    samples.push_back(s);
  }
  return samples;
}

SampleSplits split_samples(const std::vector<Trajectory>& trajectories, const GridSpec& grid,
                           const ChronoSplit& split) {
  SampleSplits out;
  for (const Trajectory& traj : trajectories) {
    for (PredictionSample& s : build_samples(traj, grid)) {
      if (split.train.contains(s.target_day)) {
        out.train.push_back(std::move(s));
      } else if (split.val.contains(s.target_day)) {
        out.val.push_back(std::move(s));
      } else if (split.test.contains(s.target_day)) {
        out.test.push_back(std::move(s));
      }
    }
  }
  return out;
}

// --- synthetic traces ---------------------------------------------------------

std::pair<int, int> UserRoutine::cell(int dow, int slot) const {
  if (is_weekend(dow)) {
    if (slot >= kLeisureBeginSlot && slot < kLeisureEndSlot) return {leisure_x, leisure_y};
    return {home_x, home_y};
  }
  if (slot >= kWorkBeginSlot && slot < kWorkEndSlot) return {work_x, work_y};
  return {home_x, home_y};
}

int UserRoutine::cell_id(const GridSpec& grid, int dow, int slot) const {
  auto [x, y] = cell(dow, slot);
  return location_id(grid, x, y);
}

namespace {

std::pair<int, int> draw_cell(rng::SplitMix64& gen, const GridSpec& grid) {
  int x = 1 + static_cast<int>(gen.next_below(static_cast<std::uint64_t>(grid.width)));
  int y = 1 + static_cast<int>(gen.next_below(static_cast<std::uint64_t>(grid.height)));
  return {x, y};
}

// Uniform over in-grid cells within Chebyshev radius 5 of (x, y), excluding
// (x, y) itself.
std::pair<int, int> draw_neighbor(rng::SplitMix64& gen, const GridSpec& grid, int x, int y) {
  const int radius = 5;
  std::vector<std::pair<int, int>> candidates;
  candidates.reserve(120);
  for (int nx = std::max(1, x - radius); nx <= std::min(grid.width, x + radius); ++nx) {
    for (int ny = std::max(1, y - radius); ny <= std::min(grid.height, y + radius); ++ny) {
      if (nx == x && ny == y) continue;
      candidates.emplace_back(nx, ny);
    }
  }
  return candidates[gen.next_below(candidates.size())];
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& config) {
  require(config.noise >= 0.0 && config.noise <= 1.0, ErrorCode::InvalidNoise,
          "noise must be in [0,1], got " + std::to_string(config.noise));
  require(config.dropout >= 0.0 && config.dropout < 1.0, ErrorCode::ConfigError,
          "dropout must be in [0,1)");
  require(config.users >= 1, ErrorCode::ConfigError, "need at least one user");
  require(config.days >= kHistoryDays + 1, ErrorCode::ConfigError,
          "need at least " + std::to_string(kHistoryDays + 1) + " days");
  require(config.grid.vocabulary_size() >= 3, ErrorCode::ConfigError,
          "grid too small for distinct home/work/leisure cells");

  SyntheticDataset out;
  out.config = config;
  for (int u = 0; u < config.users; ++u) {
    rng::SplitMix64 gen(rng::mix(config.seed, static_cast<std::uint64_t>(u)));
    UserRoutine routine;
    routine.user_id = u;
    std::tie(routine.home_x, routine.home_y) = draw_cell(gen, config.grid);
    do {
      std::tie(routine.work_x, routine.work_y) = draw_cell(gen, config.grid);
    } while (routine.work_x == routine.home_x && routine.work_y == routine.home_y);
    do {
      std::tie(routine.leisure_x, routine.leisure_y) = draw_cell(gen, config.grid);
    } while ((routine.leisure_x == routine.home_x && routine.leisure_y == routine.home_y) ||
             (routine.leisure_x == routine.work_x && routine.leisure_y == routine.work_y));

    Trajectory traj;
    traj.user_id = u;
    for (int day = 0; day < config.days; ++day) {
      const int dow = day_of_week(day);
      for (int slot = 0; slot < kSlotsPerDay; ++slot) {
        if (config.dropout > 0.0 && gen.next_unit() < config.dropout) continue;
        auto [x, y] = routine.cell(dow, slot);
        if (config.noise > 0.0 && gen.next_unit() < config.noise) {
          std::tie(x, y) = draw_neighbor(gen, config.grid, x, y);
        }
        traj.observations.push_back(Observation{day, slot, x, y});
      }
    }
    out.trajectories.push_back(std::move(traj));
    out.routines.push_back(routine);
  }
  return out;
}

std::string generator_sidecar_json(const SyntheticDataset& dataset) {
  nlohmann::ordered_json j;
  j["users"] = dataset.config.users;
  j["days"] = dataset.config.days;
  j["noise"] = dataset.config.noise;
  j["dropout"] = dataset.config.dropout;
  j["seed"] = dataset.config.seed;
  j["grid"] = {{"width", dataset.config.grid.width}, {"height", dataset.config.grid.height}};
  j["slots_per_day"] = kSlotsPerDay;
  j["weekday_work_slots"] = {kWorkBeginSlot, kWorkEndSlot};
  j["weekend_leisure_slots"] = {kLeisureBeginSlot, kLeisureEndSlot};
  j["routines"] = nlohmann::ordered_json::array();
  for (const UserRoutine& r : dataset.routines) {
    nlohmann::ordered_json entry;
    entry["user_id"] = r.user_id;
    entry["home"] = {r.home_x, r.home_y};
    entry["work"] = {r.work_x, r.work_y};
    entry["leisure"] = {r.leisure_x, r.leisure_y};
    auto table = nlohmann::ordered_json::array();
    for (int dow = 0; dow < 7; ++dow) {
      auto row = nlohmann::ordered_json::array();
      for (int slot = 0; slot < kSlotsPerDay; ++slot) {
        row.push_back(r.cell_id(dataset.config.grid, dow, slot));
      }
      table.push_back(row);
    }
    entry["table"] = table;
    j["routines"].push_back(entry);
  }
  return j.dump(2) + "\n";
}

void write_generator_sidecar(const std::string& path, const SyntheticDataset& dataset) {
  write_file(path, generator_sidecar_json(dataset));
}

}  // namespace rhythm::data
