#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rhythm/data.hpp"
#include "rhythm/metrics.hpp"
#include "rhythm/model.hpp"
#include "rhythm/semantic.hpp"

#include "json.hpp"

namespace rhythm::training {

struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 3e-4;  // per the search grid {1e-4, 3e-4, 5e-4}
  double weight_decay = 0.01;   // per the search grid {0, 0.001, 0.01}
  double gradient_clip = 1.0;
  data::GridSpec grid{20, 20};
  int dim = 64;
  int heads = 4;
  int intra_layers = 2;
  int inter_layers = 2;
  double dropout = 0.1;
  std::string pool = "attention";
  std::string backbone = "frozen-random:2:4";
  std::string embedder = "stub";
  model::AblationFlags ablation;
  int top_k = 10;

  void validate() const;
  model::ModelConfig model_config() const;
  semantic::EmbedderSpec embedder_spec() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// Decoupled weight decay (applied multiplicatively before the moment update).
// Frozen tensors are rejected at construction.
class AdamW {
 public:
  AdamW(std::vector<nn::Tensor> params, double learning_rate, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  std::uint64_t step_count() const { return t_; }
  std::span<const nn::Tensor> params() const { return params_; }
  std::span<const std::vector<double>> first_moments() const { return m_; }
  std::span<const std::vector<double>> second_moments() const { return v_; }
  void restore_state(std::uint64_t step, std::vector<std::vector<double>> m,
                     std::vector<std::vector<double>> v);

 private:
  std::vector<nn::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
  double lr_, wd_, beta1_, beta2_, eps_;
};

void fisher_yates_shuffle(std::vector<std::size_t>& order, rng::SplitMix64& gen);

// Checkpoint file: magic RHYK, versioned; config snapshot, trainable
// parameters with names, optimizer moments, backbone checksum, epoch counters
// and validation history.
void save_checkpoint(const std::string& path, const TrainConfig& config,
                     const model::RhythmModel& m, const AdamW& optimizer, int epochs_completed,
                     int best_epoch, double best_val_acc1, std::span<const double> val_history);

struct LoadedCheckpoint {
  TrainConfig config;
  model::RhythmModel model;
  AdamW optimizer;
  int epochs_completed = 0;
  int best_epoch = -1;
  double best_val_acc1 = 0.0;
  std::vector<double> val_history;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

struct TrainOutcome {
  TrainConfig config;
  model::RhythmModel model;  // parameters restored to the best-validation epoch
  std::vector<double> loss_trace;
  std::vector<double> val_acc1_history;
  int best_epoch = -1;
  double best_val_acc1 = 0.0;
  std::string best_checkpoint_path;
  std::string latest_checkpoint_path;
  std::string metrics_log_path;
  std::string data_fingerprint;
};

// Trains on the chronological split of `trajectories`. When out_dir is given,
// writes checkpoint_best.rhyk / checkpoint_latest.rhyk / metrics.jsonl there.
// resume_path continues from a latest-checkpoint file.
TrainOutcome train(const TrainConfig& config, const std::vector<data::Trajectory>& trajectories,
                   const std::string& out_dir = "", const std::string& resume_path = "");

metrics::PredictionReport evaluate(const model::RhythmModel& m, semantic::Embedder& embedder,
                                   std::span<const data::PredictionSample> samples, int top_k,
                                   const std::string& split_name);

metrics::PredictionReport evaluate_baseline(const metrics::FrequencyBaseline& baseline,
                                            std::span<const data::PredictionSample> samples,
                                            const data::GridSpec& grid, int top_k,
                                            const std::string& split_name);

struct GradCheckSpec {
  int dim = 16;
  data::GridSpec grid{10, 10};
  int users = 2;
  int days = 9;
  std::uint64_t seed = 7;
  double h = 1e-5;
  std::size_t coords_per_tensor = 24;  // sampled per parameter tensor
  std::string backbone = "frozen-random:2:4";
  int max_samples = 2;
};

// Reverse-mode vs central differences through the full
// encoder->tokenizer->fusion->frozen backbone->head pipeline.
double end_to_end_gradcheck(const GradCheckSpec& spec);

}  // namespace rhythm::training
