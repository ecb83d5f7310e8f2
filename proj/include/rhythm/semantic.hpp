#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rhythm/data.hpp"
#include "rhythm/digest.hpp"

namespace rhythm::semantic {

enum class PromptKind { HistorySegment, Task };

struct PromptText {
  PromptKind kind = PromptKind::HistorySegment;
  std::string text;
};

const char* weekday_name(int dow);

// Byte-deterministic rendering of one day's trajectory: the record list, the
// transitions whose consecutive cells are at Chebyshev distance >= 2, and the
// maximal identical-cell runs (duration = run length * 0.5 hours).
PromptText render_history_prompt(std::int64_t user_id, int day, int dow,
                                 std::span<const data::Observation> day_observations);

PromptText render_task_prompt(std::int64_t user_id, int target_day, int dow,
                              const data::GridSpec& grid);

// Per-sample prompt views; byte-identical to rendering from the raw trajectory.
std::vector<PromptText> sample_history_prompts(const data::PredictionSample& sample,
                                               const data::GridSpec& grid);
PromptText sample_task_prompt(const data::PredictionSample& sample, const data::GridSpec& grid);

Digest256 prompt_digest(const PromptText& prompt);

// Produces one length-D vector per prompt. Cache entries hold 32-bit floats,
// so every embedder emits values that round-trip through float exactly.
class Embedder {
 public:
  virtual ~Embedder() = default;
  int dim() const { return dim_; }
  std::vector<float> embed(const PromptText& prompt);

  std::uint64_t lookups() const { return lookups_; }
  // Number of times an embedding was actually computed by a producer model
  // (the stub here). Zero for cache-backed embedders.
  std::uint64_t producer_invocations() const { return producer_invocations_; }

 protected:
  explicit Embedder(int dim) : dim_(dim) {}
  virtual std::vector<float> fetch(const PromptText& prompt, const Digest256& digest) = 0;
  std::uint64_t producer_invocations_ = 0;

 private:
  int dim_;
  std::uint64_t lookups_ = 0;
};

// Deterministic content-keyed stand-in for a frozen LLM: unit-expected-norm
// Gaussian vector seeded by (seed XOR digest).
class StubEmbedder final : public Embedder {
 public:
  StubEmbedder(int dim, std::uint64_t seed) : Embedder(dim), seed_(seed) {}

 protected:
  std::vector<float> fetch(const PromptText& prompt, const Digest256& digest) override;

 private:
  std::uint64_t seed_;
};

// Read-only view of a precomputed cache file; every requested digest must be
// present.
class CacheEmbedder final : public Embedder {
 public:
  explicit CacheEmbedder(const std::string& path);

 protected:
  std::vector<float> fetch(const PromptText& prompt, const Digest256& digest) override;

 private:
  explicit CacheEmbedder(std::pair<int, std::map<Digest256, std::vector<float>>> loaded);
  std::map<Digest256, std::vector<float>> entries_;
};

struct EmbedderSpec {
  enum class Kind { Stub, Cache };
  Kind kind = Kind::Stub;
  std::uint64_t seed = 0;
  std::string path;
  int dim = 64;

  // "stub" or "cache:PATH"
  static EmbedderSpec parse(const std::string& text, int dim, std::uint64_t seed);
  std::string to_string() const;
};

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

// Cache file: magic RHYC, version u16, dim u32, count u64, then per entry a
// 32-byte digest and dim little-endian f32 values, sorted by digest.
inline constexpr char kCacheMagic[4] = {'R', 'H', 'Y', 'C'};
inline constexpr std::uint16_t kCacheVersion = 1;

void write_cache(const std::string& path, int dim,
                 const std::map<Digest256, std::vector<float>>& entries);
std::pair<int, std::map<Digest256, std::vector<float>>> read_cache(const std::string& path);

struct PrecomputeStats {
  std::size_t history_prompts = 0;
  std::size_t task_prompts = 0;
  std::size_t unique_entries = 0;
};

// Renders every history prompt (one per user-day) and every task prompt (one
// per eligible target day) for the dataset, embeds them with `producer`, and
// writes the cache. Re-running yields a byte-identical file. When dump_dir is
// nonempty, writes each prompt as <digest>.txt there.
PrecomputeStats precompute_cache(const std::vector<data::Trajectory>& trajectories,
                                 const data::GridSpec& grid, Embedder& producer,
                                 const std::string& out_path, const std::string& dump_dir = "");

}  // namespace rhythm::semantic
