#include "rhythm/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "rhythm/rng.hpp"
#include "rhythm/serialize.hpp"

namespace rhythm::semantic {

const char* weekday_name(int dow) {
  static const char* kNames[7] = {"Monday", "Tuesday",  "Wednesday", "Thursday",
                                  "Friday", "Saturday", "Sunday"};
  require(dow >= 0 && dow < 7, ErrorCode::IndexOutOfRange, "day of week outside [0,7)");
  return kNames[dow];
}

namespace {

std::string slot_time(int slot) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", slot / 2, (slot % 2) * 30);
  return buf;
}

std::string cell_text(int x, int y) {
  return "(X=" + std::to_string(x) + ", Y=" + std::to_string(y) + ")";
}

std::string hours_text(double hours) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f hours", hours);
  return buf;
}

int chebyshev(const data::Observation& a, const data::Observation& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

}  // namespace

PromptText render_history_prompt(std::int64_t user_id, int day, int dow,
                                 std::span<const data::Observation> day_observations) {
  std::string text = "This is the trajectory of user " + std::to_string(user_id) + " of day " +
                     std::to_string(day) + " which is a " + weekday_name(dow) + ". ";
  if (day_observations.empty()) {
    text += "The trajectory consists of 0 records.";
    text += "\n\nKey transitions: none.";
    text += "\n\nMain stay locations: none.";
    return PromptText{PromptKind::HistorySegment, std::move(text)};
  }

  text += "The trajectory consists of " + std::to_string(day_observations.size()) +
          " records, each record of coordinate is as follows: ";
  for (std::size_t i = 0; i < day_observations.size(); ++i) {
    const data::Observation& o = day_observations[i];
    if (i > 0) text += "; ";
    text += slot_time(o.slot) + ": " + cell_text(o.x, o.y);
  }
  text += ".";

  // Transitions: consecutive records whose cells are Chebyshev distance >= 2
  // apart, labelled with the arrival time.
  std::string transitions;
  for (std::size_t i = 1; i < day_observations.size(); ++i) {
    const data::Observation& prev = day_observations[i - 1];
    const data::Observation& cur = day_observations[i];
    if (chebyshev(prev, cur) < 2) continue;
    if (!transitions.empty()) transitions += "; ";
    transitions += "At " + slot_time(cur.slot) + ": " + cell_text(prev.x, prev.y) + " → " +
                   cell_text(cur.x, cur.y);
  }
  text += "\n\nKey transitions: " + (transitions.empty() ? "none" : transitions) + ".";

  // Stays: maximal runs of an identical cell; duration = run length * 0.5 h.
  std::string stays;
  std::size_t run_begin = 0;
  for (std::size_t i = 1; i <= day_observations.size(); ++i) {
    const bool run_ends = i == day_observations.size() ||
                          day_observations[i].x != day_observations[run_begin].x ||
                          day_observations[i].y != day_observations[run_begin].y;
    if (!run_ends) continue;
    const data::Observation& first = day_observations[run_begin];
    const data::Observation& last = day_observations[i - 1];
    if (!stays.empty()) stays += "; ";
    stays += cell_text(first.x, first.y) + " from " + slot_time(first.slot) + " to " +
             slot_time(last.slot) + " (" + hours_text(0.5 * static_cast<double>(i - run_begin)) +
             ")";
    run_begin = i;
  }
  text += "\n\nMain stay locations: " + stays + ".";
  return PromptText{PromptKind::HistorySegment, std::move(text)};
}

PromptText render_task_prompt(std::int64_t user_id, int target_day, int dow,
                              const data::GridSpec& grid) {
  std::string text =
      "You are a mobility prediction assistant that forecasts human movement patterns in urban "
      "environments. The city is represented as a " +
      std::to_string(grid.width) + " x " + std::to_string(grid.height) +
      " grid of cells, where each cell is identified by coordinates (X,Y). The X coordinate "
      "increases from left (0) to right (" +
      std::to_string(grid.width - 1) +
      "), and the Y coordinate increases from top (0) to bottom (" +
      std::to_string(grid.height - 1) + ").";
  text += "\n\nTASK: Based on User " + std::to_string(user_id) +
          "'s historical movement patterns, predict their locations for Day " +
          std::to_string(target_day) + " (" + weekday_name(dow) +
          "). The predictions should capture expected locations at 30-minute intervals throughout "
          "the day (48 time slots). The model should analyze patterns like frequent locations, "
          "typical daily routines, and time-dependent behaviors to generate accurate predictions "
          "of where this user is likely to be throughout the next day.";
  text +=
      "\n\nThe previous days' trajectory data contains information about the user's typical "
      "movement patterns, regular visited locations, transition times, and duration of stays. Key "
      "patterns to consider include: home and work locations, morning and evening routines, "
      "lunch-time behaviors, weekend vs. weekday differences, and recurring visit patterns.";
  return PromptText{PromptKind::Task, std::move(text)};
}

std::vector<PromptText> sample_history_prompts(const data::PredictionSample& sample,
                                               const data::GridSpec& grid) {
  std::vector<PromptText> out;
  out.reserve(data::kHistoryDays);
  for (int d = 0; d < data::kHistoryDays; ++d) {
    std::vector<data::Observation> day_obs;
    for (int s = 0; s < data::kSlotsPerDay; ++s) {
      const int t = d * data::kSlotsPerDay + s;
      if (sample.history[t] == data::kMissing) continue;
      auto [x, y] = data::inverse_location_id(grid, sample.history[t]);
      day_obs.push_back(data::Observation{sample.history_day(t), s, x, y});
    }
    const int day = sample.target_day - data::kHistoryDays + d;
    out.push_back(render_history_prompt(sample.user_id, day, data::day_of_week(day), day_obs));
  }
  return out;
}

PromptText sample_task_prompt(const data::PredictionSample& sample, const data::GridSpec& grid) {
  return render_task_prompt(sample.user_id, sample.target_day, sample.future_dow(), grid);
}

Digest256 prompt_digest(const PromptText& prompt) { return sha256(prompt.text); }

std::vector<float> Embedder::embed(const PromptText& prompt) {
  ++lookups_;
  return fetch(prompt, prompt_digest(prompt));
}

std::vector<float> StubEmbedder::fetch(const PromptText&, const Digest256& digest) {
  ++producer_invocations_;
  rng::SplitMix64 gen(seed_ ^ fold_to_u64(digest));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim()));
  std::vector<float> out(dim());
  for (float& v : out) v = static_cast<float>(scale * gen.next_normal());
  return out;
}

CacheEmbedder::CacheEmbedder(const std::string& path) : CacheEmbedder(read_cache(path)) {}

CacheEmbedder::CacheEmbedder(std::pair<int, std::map<Digest256, std::vector<float>>> loaded)
    : Embedder(loaded.first), entries_(std::move(loaded.second)) {}

std::vector<float> CacheEmbedder::fetch(const PromptText&, const Digest256& digest) {
  auto it = entries_.find(digest);
  require(it != entries_.end(), ErrorCode::CacheMiss,
          "prompt digest " + to_hex(digest) + " not present in cache");
  return it->second;
}

EmbedderSpec EmbedderSpec::parse(const std::string& text, int dim, std::uint64_t seed) {
  EmbedderSpec spec;
  spec.dim = dim;
  spec.seed = seed;
  if (text == "stub") {
    spec.kind = Kind::Stub;
    return spec;
  }
  if (text.rfind("cache:", 0) == 0) {
    spec.kind = Kind::Cache;
    spec.path = text.substr(6);
    require(!spec.path.empty(), ErrorCode::ConfigError, "cache embedder needs a path");
    return spec;
  }
  fail(ErrorCode::ConfigError, "unknown embedder spec: " + text + " (want stub or cache:PATH)");
}

std::string EmbedderSpec::to_string() const {
  return kind == Kind::Stub ? "stub" : "cache:" + path;
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == EmbedderSpec::Kind::Stub) {
    return std::make_unique<StubEmbedder>(spec.dim, spec.seed);
  }
  auto embedder = std::make_unique<CacheEmbedder>(spec.path);
  require(embedder->dim() == spec.dim, ErrorCode::DimMismatch,
          "cache dimension " + std::to_string(embedder->dim()) + " does not match configured " +
              std::to_string(spec.dim));
  return embedder;
}

void write_cache(const std::string& path, int dim,
                 const std::map<Digest256, std::vector<float>>& entries) {
  ByteWriter w;
  w.bytes(kCacheMagic, 4);
  w.u16(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u64(entries.size());
  for (const auto& [digest, vec] : entries) {
    require(static_cast<int>(vec.size()) == dim, ErrorCode::DimMismatch,
            "cache entry dimension mismatch");
    w.bytes(digest.data(), digest.size());
    for (float v : vec) w.f32(v);
  }
  write_file(path, w.buffer());
}

std::pair<int, std::map<Digest256, std::vector<float>>> read_cache(const std::string& path) {
  const std::string blob = read_file(path);
  ByteReader r(blob);
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kCacheMagic, 4) == 0, ErrorCode::IoError,
          "not an embedding cache file: " + path);
  const std::uint16_t version = r.u16();
  require(version == kCacheVersion, ErrorCode::IoError,
          "unsupported cache version " + std::to_string(version));
  const int dim = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  std::map<Digest256, std::vector<float>> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    Digest256 digest;
    r.bytes(digest.data(), digest.size());
    std::vector<float> vec(dim);
    for (float& v : vec) v = r.f32();
    entries.emplace(digest, std::move(vec));
  }
  require(r.exhausted(), ErrorCode::IoError, "trailing bytes in cache file: " + path);
  return {dim, std::move(entries)};
}

PrecomputeStats precompute_cache(const std::vector<data::Trajectory>& trajectories,
                                 const data::GridSpec& grid, Embedder& producer,
                                 const std::string& out_path, const std::string& dump_dir) {
  PrecomputeStats stats;
  std::map<Digest256, std::vector<float>> entries;
  std::map<Digest256, std::string> texts;

  auto add = [&](const PromptText& prompt) {
    const Digest256 digest = prompt_digest(prompt);
    if (!entries.contains(digest)) {
      entries.emplace(digest, producer.embed(prompt));
      if (!dump_dir.empty()) texts.emplace(digest, prompt.text);
    }
  };

  for (const data::Trajectory& traj : trajectories) {
    const int span = traj.span_days();
    std::vector<std::vector<data::Observation>> by_day(span);
    for (const data::Observation& o : traj.observations) by_day[o.day].push_back(o);
    for (int day = 0; day < span; ++day) {
      add(render_history_prompt(traj.user_id, day, data::day_of_week(day), by_day[day]));
      ++stats.history_prompts;
    }
    for (int target = data::kHistoryDays; target < span; ++target) {
      add(render_task_prompt(traj.user_id, target, data::day_of_week(target), grid));
      ++stats.task_prompts;
    }
  }
  stats.unique_entries = entries.size();
  write_cache(out_path, producer.dim(), entries);
  if (!dump_dir.empty()) {
    std::filesystem::create_directories(dump_dir);
    for (const auto& [digest, text] : texts) {
      write_file((std::filesystem::path(dump_dir) / (to_hex(digest) + ".txt")).string(), text);
    }
  }
  return stats;
}

}  // namespace rhythm::semantic
