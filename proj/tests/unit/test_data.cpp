#include <algorithm>
#include <map>
#include <set>

#include "rhythm/data.hpp"

#include "doctest.h"

using namespace rhythm;
using data::GridSpec;
using data::Observation;
using data::Trajectory;

TEST_CASE("location ids: corners, errors, bijection") {
  GridSpec grid;  // 200x200
  CHECK(data::location_id(grid, 1, 1) == 0);
  CHECK(data::location_id(grid, 200, 200) == 39999);
  CHECK_THROWS_AS(data::location_id(grid, 0, 1), Error);
  CHECK_THROWS_AS(data::location_id(grid, 1, 201), Error);

  rng::SplitMix64 gen(21);
  for (int i = 0; i < 1000; ++i) {
    const int x = 1 + static_cast<int>(gen.next_below(200));
    const int y = 1 + static_cast<int>(gen.next_below(200));
    auto [rx, ry] = data::inverse_location_id(grid, data::location_id(grid, x, y));
    CHECK(rx == x);
    CHECK(ry == y);
  }
}

TEST_CASE("csv parsing: valid rows, bounds, duplicates") {
  GridSpec grid;
  auto parsed = data::parse_trajectory_csv_text("uid,d,t,x,y\n3,0,5,10,20\n3,0,6,10,20\n3,1,0,11,21\n", grid);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].user_id == 3);
  REQUIRE(parsed[0].observations.size() == 3);
  CHECK(parsed[0].observations[2].day == 1);

  CHECK_THROWS_AS(data::parse_trajectory_csv_text("uid,d,t,x,y\n1,0,48,5,5\n", grid), Error);
  CHECK_THROWS_WITH_AS(data::parse_trajectory_csv_text("uid,d,t,x,y\n1,0,0,0,5\n", grid),
                       doctest::Contains("outside grid"), Error);
  CHECK_THROWS_WITH_AS(
      data::parse_trajectory_csv_text("uid,d,t,x,y\n1,0,3,5,5\n1,0,3,6,6\n", grid),
      doctest::Contains("uid 1"), Error);
  CHECK_THROWS_AS(data::parse_trajectory_csv_text("uid,d,t,x,y\n1,0,abc,5,5\n", grid), Error);
  CHECK_THROWS_AS(data::parse_trajectory_csv_text("wrong,header\n", grid), Error);
}

TEST_CASE("csv parsing groups and sorts interleaved users") {
  GridSpec grid;
  const std::string text =
      "uid,d,t,x,y\n"
      "2,1,5,9,9\n"
      "1,0,7,3,3\n"
      "2,0,2,8,8\n"
      "1,0,3,2,2\n";
  auto parsed = data::parse_trajectory_csv_text(text, grid);
  REQUIRE(parsed.size() == 2);

  // Oracle: sort-and-group done independently.
  std::map<std::int64_t, std::vector<std::pair<int, int>>> expected{
      {1, {{0, 3}, {0, 7}}},
      {2, {{0, 2}, {1, 5}}},
  };
  for (const Trajectory& traj : parsed) {
    const auto& want = expected.at(traj.user_id);
    REQUIRE(traj.observations.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(traj.observations[i].day == want[i].first);
      CHECK(traj.observations[i].slot == want[i].second);
    }
    for (std::size_t i = 1; i < traj.observations.size(); ++i) {
      const auto& a = traj.observations[i - 1];
      const auto& b = traj.observations[i];
      CHECK(std::pair(a.day, a.slot) < std::pair(b.day, b.slot));
    }
  }
}

TEST_CASE("csv roundtrip preserves the observation multiset") {
  data::SynthConfig config;
  config.users = 4;
  config.days = 10;
  config.noise = 0.2;
  config.dropout = 0.3;
  config.seed = 99;
  config.grid = GridSpec{30, 30};
  auto dataset = data::generate_synthetic(config);

  const std::string text = data::trajectory_csv_text(dataset.trajectories);
  auto reparsed = data::parse_trajectory_csv_text(text, config.grid);

  auto flatten = [](const std::vector<Trajectory>& trajs) {
    std::multiset<std::tuple<std::int64_t, int, int, int, int>> out;
    for (const auto& t : trajs) {
      for (const auto& o : t.observations) out.insert({t.user_id, o.day, o.slot, o.x, o.y});
    }
    return out;
  };
  CHECK(flatten(dataset.trajectories) == flatten(reparsed));
}

TEST_CASE("chronological split day arithmetic") {
  const data::ChronoSplit s75 = data::chronological_split(75);
  CHECK(s75.train.begin == 0);
  CHECK(s75.train.end == 52);  // days 0..51
  CHECK(s75.val.end == 67);    // days 52..66
  CHECK(s75.test.end == 75);   // days 67..74

  const data::ChronoSplit s10 = data::chronological_split(10);
  CHECK(s10.train.size() == 7);
  CHECK(s10.val.size() == 2);
  CHECK(s10.test.size() == 1);

  const data::ChronoSplit s30 = data::chronological_split(30);
  CHECK(s30.train.size() == 21);
  CHECK(s30.val.size() == 6);
  CHECK(s30.test.size() == 3);

  CHECK_THROWS_AS(data::chronological_split(3), Error);
}

TEST_CASE("split ordering: train futures < val futures < test futures") {
  data::SynthConfig config;
  config.users = 3;
  config.days = 20;
  config.dropout = 0.0;
  config.grid = GridSpec{15, 15};
  auto dataset = data::generate_synthetic(config);
  const auto split = data::chronological_split(20);
  const auto samples = data::split_samples(dataset.trajectories, config.grid, split);

  int max_train = -1, min_val = 1 << 20, max_val = -1, min_test = 1 << 20;
  for (const auto& s : samples.train) max_train = std::max(max_train, s.target_day);
  for (const auto& s : samples.val) {
    min_val = std::min(min_val, s.target_day);
    max_val = std::max(max_val, s.target_day);
  }
  for (const auto& s : samples.test) min_test = std::min(min_test, s.target_day);
  CHECK(max_train < min_val);
  CHECK(max_val < min_test);

  // Union of eligible future days is covered.
  std::set<int> future_days;
  for (const auto* list : {&samples.train, &samples.val, &samples.test}) {
    for (const auto& s : *list) future_days.insert(s.target_day);
  }
  CHECK(static_cast<int>(future_days.size()) == 20 - data::kHistoryDays);
}

TEST_CASE("sample construction: counts and missing slots") {
  GridSpec grid{20, 20};
  Trajectory full;
  full.user_id = 1;
  for (int day = 0; day < 8; ++day) {
    for (int slot = 0; slot < 48; ++slot) {
      full.observations.push_back(Observation{day, slot, 2, 3});
    }
  }
  auto samples = data::build_samples(full, grid);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].target_day == 7);
  CHECK(samples[0].observed_target_count() == 48);
  for (int t = 0; t < data::kHistorySlots; ++t) CHECK(samples[0].history[t] != data::kMissing);

  Trajectory sparse = full;
  // Remove one history observation: day 2, slot 10.
  sparse.observations.erase(
      std::remove_if(sparse.observations.begin(), sparse.observations.end(),
                     [](const Observation& o) { return o.day == 2 && o.slot == 10; }),
      sparse.observations.end());
  auto sparse_samples = data::build_samples(sparse, grid);
  REQUIRE(sparse_samples.size() == 1);
  CHECK(sparse_samples[0].history[2 * 48 + 10] == data::kMissing);
  CHECK(sparse_samples[0].history[2 * 48 + 11] != data::kMissing);

  Trajectory short_traj;
  short_traj.user_id = 2;
  short_traj.observations.push_back(Observation{0, 0, 1, 1});
  short_traj.observations.push_back(Observation{6, 47, 1, 1});
  CHECK(data::build_samples(short_traj, grid).empty());
}

TEST_CASE("75-day trajectory yields 68 samples") {
  data::SynthConfig config;
  config.users = 1;
  config.days = 75;
  config.dropout = 0.0;
  config.grid = GridSpec{10, 10};
  auto dataset = data::generate_synthetic(config);
  CHECK(data::build_samples(dataset.trajectories[0], config.grid).size() == 68);
}

TEST_CASE("synthetic: weekly periodicity and determinism when noiseless") {
  data::SynthConfig config;
  config.users = 5;
  config.days = 21;
  config.noise = 0.0;
  config.dropout = 0.0;
  config.seed = 31;
  config.grid = GridSpec{25, 25};
  auto a = data::generate_synthetic(config);
  auto b = data::generate_synthetic(config);
  CHECK(data::trajectory_csv_text(a.trajectories) == data::trajectory_csv_text(b.trajectories));

  for (const Trajectory& traj : a.trajectories) {
    std::map<std::pair<int, int>, std::pair<int, int>> cells;
    for (const Observation& o : traj.observations) cells[{o.day, o.slot}] = {o.x, o.y};
    for (const Observation& o : traj.observations) {
      if (o.day + 7 >= config.days) continue;
      auto it = cells.find({o.day + 7, o.slot});
      REQUIRE(it != cells.end());
      CHECK(it->second == std::pair(o.x, o.y));
    }
  }
}

TEST_CASE("synthetic: noise rate matches the routine mismatch rate") {
  data::SynthConfig config;
  config.users = 20;
  config.days = 30;
  config.noise = 0.3;
  config.dropout = 0.0;
  config.seed = 17;
  config.grid = GridSpec{40, 40};
  auto dataset = data::generate_synthetic(config);

  std::size_t total = 0, matches = 0;
  for (std::size_t u = 0; u < dataset.trajectories.size(); ++u) {
    const data::UserRoutine& routine = dataset.routines[u];
    for (const Observation& o : dataset.trajectories[u].observations) {
      ++total;
      matches += routine.cell(data::day_of_week(o.day), o.slot) == std::pair(o.x, o.y);
    }
  }
  REQUIRE(total >= 10000);
  const double match_rate = static_cast<double>(matches) / total;
  CHECK(match_rate == doctest::Approx(0.7).epsilon(0.03));

  // Noisy cells stay within the Chebyshev-5 ball of the routine cell.
  for (std::size_t u = 0; u < dataset.trajectories.size(); ++u) {
    const data::UserRoutine& routine = dataset.routines[u];
    for (const Observation& o : dataset.trajectories[u].observations) {
      auto [rx, ry] = routine.cell(data::day_of_week(o.day), o.slot);
      CHECK(std::max(std::abs(o.x - rx), std::abs(o.y - ry)) <= 5);
    }
  }
}

TEST_CASE("synthetic: dropout controls observation density") {
  data::SynthConfig config;
  config.users = 10;
  config.days = 20;
  config.noise = 0.0;
  config.dropout = 0.3;
  config.seed = 11;
  config.grid = GridSpec{20, 20};
  auto dataset = data::generate_synthetic(config);
  std::size_t observed = 0;
  for (const auto& t : dataset.trajectories) observed += t.observations.size();
  const double density =
      static_cast<double>(observed) / (config.users * config.days * data::kSlotsPerDay);
  CHECK(density == doctest::Approx(0.7).epsilon(0.03));
}

TEST_CASE("synthetic: invalid noise and undersized inputs are rejected") {
  data::SynthConfig config;
  config.noise = 1.5;
  CHECK_THROWS_AS(data::generate_synthetic(config), Error);
  config.noise = -0.1;
  CHECK_THROWS_AS(data::generate_synthetic(config), Error);
  config.noise = 0.0;
  config.days = 5;
  CHECK_THROWS_AS(data::generate_synthetic(config), Error);
}

TEST_CASE("generator sidecar lists config and routine tables") {
  data::SynthConfig config;
  config.users = 2;
  config.days = 8;
  config.grid = GridSpec{12, 12};
  config.seed = 5;
  auto dataset = data::generate_synthetic(config);
  const std::string json = data::generator_sidecar_json(dataset);
  CHECK(json.find("\"users\": 2") != std::string::npos);
  CHECK(json.find("\"routines\"") != std::string::npos);
  CHECK(json.find("\"table\"") != std::string::npos);
  CHECK(json.find("\"seed\": 5") != std::string::npos);
}
