#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "rhythm/semantic.hpp"
#include "rhythm/serialize.hpp"

#include "doctest.h"

using namespace rhythm;
using data::Observation;

namespace {

std::vector<Observation> appendix_example_day() {
  // 08:30 through 13:00, half-hour slots 17..26.
  return {
      {12, 17, 136, 42}, {12, 18, 136, 42}, {12, 19, 137, 41}, {12, 20, 146, 37},
      {12, 21, 145, 38}, {12, 22, 144, 38}, {12, 23, 135, 41}, {12, 24, 135, 42},
      {12, 25, 135, 42}, {12, 26, 135, 42},
  };
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("history prompt reproduces the example day's record list") {
  const auto day = appendix_example_day();
  const semantic::PromptText prompt = semantic::render_history_prompt(31, 12, 5, day);

  const std::string records =
      "08:30: (X=136, Y=42); 09:00: (X=136, Y=42); 09:30: (X=137, Y=41); "
      "10:00: (X=146, Y=37); 10:30: (X=145, Y=38); 11:00: (X=144, Y=38); "
      "11:30: (X=135, Y=41); 12:00: (X=135, Y=42); 12:30: (X=135, Y=42); "
      "13:00: (X=135, Y=42).";
  CHECK(prompt.text.find(records) != std::string::npos);
  CHECK(prompt.text.find("The trajectory consists of 10 records") != std::string::npos);
  CHECK(prompt.text.find("Key transitions") != std::string::npos);
  CHECK(prompt.text.find("Main stay locations") != std::string::npos);

  // Chebyshev >= 2 picks out exactly the two large jumps, labelled by arrival.
  const std::string transitions =
      "Key transitions: At 10:00: (X=137, Y=41) → (X=146, Y=37); "
      "At 11:30: (X=144, Y=38) → (X=135, Y=41).";
  CHECK(prompt.text.find(transitions) != std::string::npos);

  // Longest stay: (135,42) over three records.
  CHECK(prompt.text.find("(X=135, Y=42) from 12:00 to 13:00 (1.5 hours)") != std::string::npos);
  CHECK(prompt.text.find("which is a Saturday") != std::string::npos);
}

TEST_CASE("history prompt degenerate days") {
  std::vector<Observation> single{{3, 17, 5, 9}};
  const auto prompt = semantic::render_history_prompt(1, 3, 3, single);
  CHECK(prompt.text.find("consists of 1 records") != std::string::npos);
  CHECK(prompt.text.find("Key transitions: none.") != std::string::npos);
  CHECK(prompt.text.find("(X=5, Y=9) from 08:30 to 08:30 (0.5 hours)") != std::string::npos);

  // Constant-location day: zero transitions, one stay spanning the day.
  std::vector<Observation> constant;
  for (int slot = 0; slot < 48; ++slot) constant.push_back({4, slot, 7, 7});
  const auto full = semantic::render_history_prompt(1, 4, 4, constant);
  CHECK(full.text.find("Key transitions: none.") != std::string::npos);
  CHECK(full.text.find("(X=7, Y=7) from 00:00 to 23:30 (24.0 hours).") != std::string::npos);
  // Oracle: run-length scan says exactly one stay entry.
  const auto stays_pos = full.text.find("Main stay locations: ");
  const std::string stays = full.text.substr(stays_pos);
  CHECK(stays.find(';') == std::string::npos);

  const auto empty = semantic::render_history_prompt(1, 5, 5, {});
  CHECK(empty.text.find("consists of 0 records") != std::string::npos);
}

TEST_CASE("task prompt: deterministic, literal phrasing, weekday naming") {
  data::GridSpec grid;
  const auto a = semantic::render_task_prompt(42, 12, data::day_of_week(12), grid);
  const auto b = semantic::render_task_prompt(42, 12, data::day_of_week(12), grid);
  CHECK(a.text == b.text);
  CHECK(a.kind == semantic::PromptKind::Task);

  CHECK(a.text.find("200 x 200 grid") != std::string::npos);
  CHECK(a.text.find("30-minute intervals throughout the day (48 time slots)") !=
        std::string::npos);
  CHECK(a.text.find("predict their locations for Day 12 (Saturday)") != std::string::npos);
  CHECK(a.text.find("You are a mobility prediction assistant") != std::string::npos);
  CHECK(a.text.find("weekend vs. weekday differences") != std::string::npos);
}

TEST_CASE("stub embedder: determinism, sensitivity, norm concentration") {
  semantic::StubEmbedder a(64, 7);
  semantic::StubEmbedder b(64, 7);
  semantic::PromptText p{semantic::PromptKind::Task, "hello world"};
  CHECK(a.embed(p) == b.embed(p));

  // One-byte change produces a different vector; no collisions over 10^4.
  std::set<std::vector<float>> seen;
  for (int i = 0; i < 10000; ++i) {
    semantic::PromptText q{semantic::PromptKind::Task, "prompt #" + std::to_string(i)};
    seen.insert(a.embed(q));
  }
  CHECK(seen.size() == 10000);

  double norm_sum = 0.0;
  for (int i = 0; i < 1000; ++i) {
    semantic::PromptText q{semantic::PromptKind::Task, "norm probe " + std::to_string(i)};
    double sq = 0.0;
    for (float v : a.embed(q)) sq += static_cast<double>(v) * v;
    norm_sum += std::sqrt(sq);
  }
  const double mean_norm = norm_sum / 1000.0;
  CHECK(mean_norm > 0.9);
  CHECK(mean_norm < 1.1);
}

TEST_CASE("cache file: header layout, roundtrip, miss behaviour") {
  const std::string path = temp_path("rhythm_test_cache.rhyc");
  semantic::StubEmbedder stub(8, 21);
  semantic::PromptText p1{semantic::PromptKind::Task, "alpha"};
  semantic::PromptText p2{semantic::PromptKind::HistorySegment, "beta"};
  std::map<Digest256, std::vector<float>> entries;
  entries[semantic::prompt_digest(p1)] = stub.embed(p1);
  entries[semantic::prompt_digest(p2)] = stub.embed(p2);
  semantic::write_cache(path, 8, entries);

  const std::string blob = read_file(path);
  REQUIRE(blob.size() == 4 + 2 + 4 + 8 + 2 * (32 + 8 * 4));
  CHECK(blob.substr(0, 4) == "RHYC");

  auto [dim, loaded] = semantic::read_cache(path);
  CHECK(dim == 8);
  CHECK(loaded == entries);

  semantic::CacheEmbedder cache(path);
  CHECK(cache.dim() == 8);
  CHECK(cache.embed(p1) == entries[semantic::prompt_digest(p1)]);
  CHECK(cache.producer_invocations() == 0);
  CHECK(cache.lookups() == 1);

  semantic::PromptText unknown{semantic::PromptKind::Task, "never cached"};
  CHECK_THROWS_AS(cache.embed(unknown), Error);
}

TEST_CASE("precompute: prompt enumeration counts and idempotent output") {
  data::SynthConfig config;
  config.users = 2;
  config.days = 8;
  config.noise = 0.0;
  config.dropout = 0.2;
  config.seed = 13;
  config.grid = data::GridSpec{16, 16};
  auto dataset = data::generate_synthetic(config);

  const std::string path = temp_path("rhythm_test_precompute.rhyc");
  semantic::StubEmbedder producer(16, 5);
  const auto stats =
      semantic::precompute_cache(dataset.trajectories, config.grid, producer, path);
  CHECK(stats.history_prompts == 2 * 8);
  CHECK(stats.task_prompts == 2 * 1);
  CHECK(stats.unique_entries == 18);

  const std::string first = read_file(path);
  semantic::StubEmbedder producer2(16, 5);
  semantic::precompute_cache(dataset.trajectories, config.grid, producer2, path);
  CHECK(read_file(path) == first);

  // Read-back vectors are bit-equal to freshly produced ones (f32 rounding
  // happens inside the embedder, not at serialization time).
  semantic::CacheEmbedder cache(path);
  semantic::StubEmbedder fresh(16, 5);
  const auto prompts = semantic::sample_history_prompts(
      data::build_samples(dataset.trajectories[0], config.grid)[0], config.grid);
  for (const auto& prompt : prompts) {
    CHECK(cache.embed(prompt) == fresh.embed(prompt));
  }
}

TEST_CASE("sample prompts match trajectory-rendered prompts byte for byte") {
  data::SynthConfig config;
  config.users = 1;
  config.days = 9;
  config.noise = 0.3;
  config.dropout = 0.4;
  config.seed = 77;
  config.grid = data::GridSpec{18, 18};
  auto dataset = data::generate_synthetic(config);
  const auto& traj = dataset.trajectories[0];
  auto samples = data::build_samples(traj, config.grid);
  REQUIRE(!samples.empty());
  const auto& sample = samples[0];

  std::vector<std::vector<Observation>> by_day(traj.span_days());
  for (const Observation& o : traj.observations) by_day[o.day].push_back(o);

  const auto from_sample = semantic::sample_history_prompts(sample, config.grid);
  for (int d = 0; d < data::kHistoryDays; ++d) {
    const int day = sample.target_day - data::kHistoryDays + d;
    const auto from_traj =
        semantic::render_history_prompt(traj.user_id, day, data::day_of_week(day), by_day[day]);
    CHECK(from_sample[d].text == from_traj.text);
  }
}

TEST_CASE("embedder spec parsing") {
  const auto stub = semantic::EmbedderSpec::parse("stub", 32, 9);
  CHECK(stub.kind == semantic::EmbedderSpec::Kind::Stub);
  CHECK(stub.dim == 32);

  const auto cache = semantic::EmbedderSpec::parse("cache:/tmp/foo.rhyc", 32, 9);
  CHECK(cache.kind == semantic::EmbedderSpec::Kind::Cache);
  CHECK(cache.path == "/tmp/foo.rhyc");

  CHECK_THROWS_AS(semantic::EmbedderSpec::parse("llm", 32, 9), Error);
  CHECK_THROWS_AS(semantic::EmbedderSpec::parse("cache:", 32, 9), Error);
}
