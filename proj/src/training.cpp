#include "rhythm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "rhythm/serialize.hpp"

namespace rhythm::training {

using nn::Tensor;

namespace {

bool in_grid_of(double value, std::initializer_list<double> grid) {
  for (double g : grid) {
    if (value == g) return true;
  }
  return false;
}

}  // namespace

void TrainConfig::validate() const {
  require(in_grid_of(learning_rate, {1e-4, 3e-4, 5e-4}), ErrorCode::ConfigError,
          "learning_rate must be one of {1e-4, 3e-4, 5e-4}");
  require(in_grid_of(weight_decay, {0.0, 0.001, 0.01}), ErrorCode::ConfigError,
          "weight_decay must be one of {0, 0.001, 0.01}");
  require(epochs >= 1, ErrorCode::ConfigError, "epochs must be positive");
  require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be positive");
  require(dim >= 1 && heads >= 1 && dim % heads == 0, ErrorCode::ConfigError,
          "heads must divide the model dimension");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::ConfigError, "dropout must be in [0,1)");
  require(top_k >= 5, ErrorCode::ConfigError, "top_k must be at least 5 for Acc@5");
  model::BackboneSpec::parse(backbone);
  semantic::EmbedderSpec::parse(embedder, dim, seed);
  tokenizer::pool_mode_from_string(pool);
}

model::ModelConfig TrainConfig::model_config() const {
  model::ModelConfig mc;
  mc.dim = dim;
  mc.grid = grid;
  mc.heads = heads;
  mc.intra_layers = intra_layers;
  mc.inter_layers = inter_layers;
  mc.dropout = dropout;
  mc.pool = tokenizer::pool_mode_from_string(pool);
  mc.backbone = model::BackboneSpec::parse(backbone);
  mc.ablation = ablation;
  return mc;
}

semantic::EmbedderSpec TrainConfig::embedder_spec() const {
  return semantic::EmbedderSpec::parse(embedder, dim, seed);
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["gradient_clip"] = gradient_clip;
  j["grid"] = {{"width", grid.width}, {"height", grid.height}};
  j["dim"] = dim;
  j["heads"] = heads;
  j["intra_layers"] = intra_layers;
  j["inter_layers"] = inter_layers;
  j["dropout"] = dropout;
  j["pool"] = pool;
  j["backbone"] = backbone;
  j["embedder"] = embedder;
  j["ablation"] = {{"no_hierarchical_attention", ablation.no_hierarchical_attention},
                   {"no_tokenization", ablation.no_tokenization},
                   {"no_traj_info", ablation.no_traj_info},
                   {"no_task_desc", ablation.no_task_desc}};
  j["top_k"] = top_k;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.gradient_clip = j.value("gradient_clip", c.gradient_clip);
  if (j.contains("grid")) {
    c.grid.width = j["grid"].value("width", c.grid.width);
    c.grid.height = j["grid"].value("height", c.grid.height);
  }
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.intra_layers = j.value("intra_layers", c.intra_layers);
  c.inter_layers = j.value("inter_layers", c.inter_layers);
  c.dropout = j.value("dropout", c.dropout);
  c.pool = j.value("pool", c.pool);
  c.backbone = j.value("backbone", c.backbone);
  c.embedder = j.value("embedder", c.embedder);
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    c.ablation.no_hierarchical_attention =
        a.value("no_hierarchical_attention", c.ablation.no_hierarchical_attention);
    c.ablation.no_tokenization = a.value("no_tokenization", c.ablation.no_tokenization);
    c.ablation.no_traj_info = a.value("no_traj_info", c.ablation.no_traj_info);
    c.ablation.no_task_desc = a.value("no_task_desc", c.ablation.no_task_desc);
  }
  c.top_k = j.value("top_k", c.top_k);
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  return from_json(nlohmann::ordered_json::parse(read_file(path)));
}

void TrainConfig::save(const std::string& path) const {
  write_file(path, to_json().dump(2) + "\n");
}

// --- AdamW ---------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, double learning_rate, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), wd_(weight_decay), beta1_(beta1),
      beta2_(beta2), eps_(eps) {
  for (const Tensor& p : params_) {
    require(!p.frozen(), ErrorCode::ConfigError,
            "frozen tensor '" + p.name() + "' registered with the optimizer");
    require(p.requires_grad(), ErrorCode::ConfigError,
            "non-trainable tensor '" + p.name() + "' registered with the optimizer");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr_ * wd_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::span<double> values = p.mutable_values();
    std::span<double> grad = p.mutable_grad();  // zeros when never populated
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (wd_ != 0.0) values[k] *= decay;
      const double g = grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      values[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamW::restore_state(std::uint64_t step, std::vector<std::vector<double>> m,
                          std::vector<std::vector<double>> v) {
  require(m.size() == params_.size() && v.size() == params_.size(), ErrorCode::DimMismatch,
          "optimizer state cardinality mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(m[i].size() == params_[i].size() && v[i].size() == params_[i].size(),
            ErrorCode::DimMismatch, "optimizer moment shape mismatch");
  }
  t_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void fisher_yates_shuffle(std::vector<std::size_t>& order, rng::SplitMix64& gen) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = gen.next_below(i);
    std::swap(order[i - 1], order[j]);
  }
}

// --- checkpointing ----------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'H', 'Y', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& config,
                     const model::RhythmModel& m, const AdamW& optimizer, int epochs_completed,
                     int best_epoch, double best_val_acc1, std::span<const double> val_history) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.str(config.to_json().dump());
  w.u32(static_cast<std::uint32_t>(epochs_completed));
  w.u32(static_cast<std::uint32_t>(best_epoch + 1));  // 0 encodes "none yet"
  w.f64(best_val_acc1);
  const Digest256 checksum = m.backbone().checksum();
  w.bytes(checksum.data(), checksum.size());

  const std::vector<Tensor> params = m.trainable_parameters();
  w.u64(params.size());
  for (const Tensor& p : params) {
    w.str(p.name());
    w.u64(static_cast<std::uint64_t>(p.rows()));
    w.u64(static_cast<std::uint64_t>(p.cols()));
    for (double v : p.values()) w.f64(v);
  }
  w.u64(optimizer.step_count());
  require(optimizer.params().size() == params.size(), ErrorCode::DimMismatch,
          "optimizer does not cover the trainable parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.u64(optimizer.first_moments()[i].size());
    for (double v : optimizer.first_moments()[i]) w.f64(v);
    for (double v : optimizer.second_moments()[i]) w.f64(v);
  }
  w.u64(val_history.size());
  for (double v : val_history) w.f64(v);
  write_file(path, w.buffer());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const std::string blob = read_file(path);
  ByteReader r(blob);
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kCheckpointMagic, 4) == 0, ErrorCode::IoError,
          "not a checkpoint file: " + path);
  require(r.u16() == kCheckpointVersion, ErrorCode::IoError, "unsupported checkpoint version");
  TrainConfig config = TrainConfig::from_json(nlohmann::ordered_json::parse(r.str()));
  const int epochs_completed = static_cast<int>(r.u32());
  const int best_epoch = static_cast<int>(r.u32()) - 1;
  const double best_val_acc1 = r.f64();
  Digest256 stored_checksum;
  r.bytes(stored_checksum.data(), stored_checksum.size());

  model::RhythmModel m = model::RhythmModel::create(config.model_config(), config.seed);
  std::vector<Tensor> params = m.trainable_parameters();
  const std::uint64_t n_params = r.u64();
  require(n_params == params.size(), ErrorCode::DimMismatch,
          "checkpoint parameter count mismatch");
  for (Tensor& p : params) {
    const std::string name = r.str();
    require(name == p.name(), ErrorCode::DimMismatch,
            "checkpoint parameter order mismatch: expected " + p.name() + ", found " + name);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    require(rows == static_cast<std::uint64_t>(p.rows()) &&
                cols == static_cast<std::uint64_t>(p.cols()),
            ErrorCode::DimMismatch, "checkpoint parameter shape mismatch for " + name);
    for (double& v : p.mutable_values()) v = r.f64();
  }
  const Digest256 actual = m.backbone().checksum();
  require(actual == stored_checksum, ErrorCode::ChecksumMismatch,
          "backbone checksum in checkpoint does not match the reconstructed backbone");

  AdamW optimizer(m.trainable_parameters(), config.learning_rate, config.weight_decay);
  const std::uint64_t step = r.u64();
  std::vector<std::vector<double>> ms, vs;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint64_t size = r.u64();
    require(size == params[i].size(), ErrorCode::DimMismatch, "optimizer moment size mismatch");
    std::vector<double> mv(size), vv(size);
    for (double& v : mv) v = r.f64();
    for (double& v : vv) v = r.f64();
    ms.push_back(std::move(mv));
    vs.push_back(std::move(vv));
  }
  optimizer.restore_state(step, std::move(ms), std::move(vs));

  std::vector<double> val_history(r.u64());
  for (double& v : val_history) v = r.f64();
  require(r.exhausted(), ErrorCode::IoError, "trailing bytes in checkpoint: " + path);

  return LoadedCheckpoint{std::move(config), std::move(m),   std::move(optimizer),
                          epochs_completed,  best_epoch,     best_val_acc1,
                          std::move(val_history)};
}

// --- evaluation -------------------------------------------------------------------

namespace {

metrics::EvaluatedSample evaluate_sample(const model::RhythmModel& m,
                                         const data::PredictionSample& sample,
                                         const model::SampleEmbeddings& embeddings, int top_k) {
  nn::ExecContext ctx;  // no tape, eval mode
  Tensor logits = m.forward_logits(ctx, sample, embeddings);
  metrics::EvaluatedSample out;
  out.slots.reserve(data::kHorizonSlots);
  const int v = logits.cols();
  for (int j = 0; j < data::kHorizonSlots; ++j) {
    metrics::SlotPrediction p;
    p.true_location = sample.targets[j];
    p.slot_of_day = j;
    p.day_of_week = sample.future_dow();
    if (p.true_location != data::kMissing) {
      std::span<const double> row = logits.values().subspan(static_cast<std::size_t>(j) * v, v);
      p.ranking = metrics::top_k_ranking(row, top_k);
    }
    out.slots.push_back(std::move(p));
  }
  return out;
}

}  // namespace

metrics::PredictionReport evaluate(const model::RhythmModel& m, semantic::Embedder& embedder,
                                   std::span<const data::PredictionSample> samples, int top_k,
                                   const std::string& split_name) {
  require(!samples.empty(), ErrorCode::EmptySplit, "no samples in split '" + split_name + "'");
  std::vector<metrics::EvaluatedSample> evaluated;
  evaluated.reserve(samples.size());
  for (const data::PredictionSample& sample : samples) {
    const model::SampleEmbeddings embeddings =
        model::embeddings_for_sample(embedder, sample, m.config().grid);
    evaluated.push_back(evaluate_sample(m, sample, embeddings, top_k));
  }
  return metrics::summarize(evaluated, m.config().grid, top_k, split_name);
}

metrics::PredictionReport evaluate_baseline(const metrics::FrequencyBaseline& baseline,
                                            std::span<const data::PredictionSample> samples,
                                            const data::GridSpec& grid, int top_k,
                                            const std::string& split_name) {
  require(!samples.empty(), ErrorCode::EmptySplit, "no samples in split '" + split_name + "'");
  std::vector<metrics::EvaluatedSample> evaluated;
  evaluated.reserve(samples.size());
  for (const data::PredictionSample& sample : samples) {
    metrics::EvaluatedSample es;
    for (int j = 0; j < data::kHorizonSlots; ++j) {
      metrics::SlotPrediction p;
      p.true_location = sample.targets[j];
      p.slot_of_day = j;
      p.day_of_week = sample.future_dow();
      if (p.true_location != data::kMissing) {
        p.ranking = baseline.ranking(sample.user_id, j, sample.future_dow(), top_k);
      }
      es.slots.push_back(std::move(p));
    }
    evaluated.push_back(std::move(es));
  }
  return metrics::summarize(evaluated, grid, top_k, split_name);
}

// --- training loop ----------------------------------------------------------------

namespace {

struct ParamSnapshot {
  std::vector<std::vector<double>> values;

  static ParamSnapshot take(const std::vector<Tensor>& params) {
    ParamSnapshot snap;
    snap.values.reserve(params.size());
    for (const Tensor& p : params) {
      snap.values.emplace_back(p.values().begin(), p.values().end());
    }
    return snap;
  }

  void restore(std::vector<Tensor>& params) const {
    require(values.size() == params.size(), ErrorCode::DimMismatch, "snapshot mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(values[i].begin(), values[i].end(), params[i].mutable_values().begin());
    }
  }
};

double clip_gradients(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace

TrainOutcome train(const TrainConfig& config_in, const std::vector<data::Trajectory>& trajectories,
                   const std::string& out_dir, const std::string& resume_path) {
  TrainConfig config = config_in;
  config.validate();

  const int days = data::total_days(trajectories);
  const data::ChronoSplit split = data::chronological_split(days);
  data::SampleSplits samples = data::split_samples(trajectories, config.grid, split);
  require(!samples.train.empty(), ErrorCode::EmptySplit, "no training samples");
  require(!samples.val.empty(), ErrorCode::EmptySplit, "no validation samples");

  std::unique_ptr<semantic::Embedder> embedder = semantic::make_embedder(config.embedder_spec());

  int start_epoch = 0;
  int best_epoch = -1;
  double best_val_acc1 = -1.0;
  std::vector<double> val_history;
  std::optional<LoadedCheckpoint> resumed;
  if (!resume_path.empty()) {
    resumed = load_checkpoint(resume_path);
    // The checkpoint snapshot wins everywhere except the epoch budget, which
    // the caller extends.
    const int epoch_budget = config.epochs;
    config = resumed->config;
    config.epochs = epoch_budget;
    start_epoch = resumed->epochs_completed;
    best_epoch = resumed->best_epoch;
    best_val_acc1 = resumed->best_epoch >= 0 ? resumed->best_val_acc1 : -1.0;
    val_history = resumed->val_history;
  }
  model::RhythmModel m = resumed ? std::move(resumed->model)
                                 : model::RhythmModel::create(config.model_config(), config.seed);
  std::vector<Tensor> trainable = m.trainable_parameters();
  std::vector<Tensor> frozen = m.backbone().parameters();
  AdamW optimizer = resumed ? std::move(resumed->optimizer)
                            : AdamW(trainable, config.learning_rate, config.weight_decay);
  const Digest256 initial_checksum = m.backbone().checksum();

  // Offline step: all prompt embeddings are assembled once up front; training
  // touches no embedding producer afterwards.
  std::vector<model::SampleEmbeddings> train_embeddings;
  train_embeddings.reserve(samples.train.size());
  for (const data::PredictionSample& s : samples.train) {
    train_embeddings.push_back(model::embeddings_for_sample(*embedder, s, config.grid));
  }

  std::ofstream log;
  TrainOutcome outcome;
  outcome.data_fingerprint = data::dataset_fingerprint(trajectories);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    outcome.best_checkpoint_path =
        (std::filesystem::path(out_dir) / "checkpoint_best.rhyk").string();
    outcome.latest_checkpoint_path =
        (std::filesystem::path(out_dir) / "checkpoint_latest.rhyk").string();
    outcome.metrics_log_path = (std::filesystem::path(out_dir) / "metrics.jsonl").string();
    log.open(outcome.metrics_log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
    require(log.good(), ErrorCode::IoError, "cannot open metrics log");
  }

  std::optional<ParamSnapshot> best_params;  // set when a best epoch occurs in this run

  std::uint64_t global_step = optimizer.step_count();
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(samples.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::SplitMix64 shuffle_gen(rng::mix(config.seed, 0x5A11ULL + static_cast<std::uint64_t>(epoch)));
    fisher_yates_shuffle(order, shuffle_gen);

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      rng::SplitMix64 dropout_gen(rng::mix(
          rng::mix(config.seed, 0xD209ULL), (static_cast<std::uint64_t>(epoch) << 32) | begin));
      nn::Tape tape;
      nn::ExecContext ctx{&tape, /*training=*/true, &dropout_gen, nullptr};

      std::vector<Tensor> gathered;
      std::vector<int> batch_targets;
      for (std::size_t i = begin; i < end; ++i) {
        const data::PredictionSample& sample = samples.train[order[i]];
        if (sample.observed_target_count() == 0) continue;
        Tensor logits = m.forward_logits(ctx, sample, train_embeddings[order[i]]);
        std::vector<int> rows, targets;
        for (int j = 0; j < data::kHorizonSlots; ++j) {
          if (sample.targets[j] == data::kMissing) continue;
          rows.push_back(j);
          targets.push_back(sample.targets[j]);
        }
        gathered.push_back(nn::gather_rows(&tape, logits, rows));
        batch_targets.insert(batch_targets.end(), targets.begin(), targets.end());
      }
      if (gathered.empty()) continue;
      Tensor all_logits = nn::concat_rows(&tape, gathered);
      Tensor loss = nn::cross_entropy(&tape, all_logits, batch_targets);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        fail(ErrorCode::NonFiniteLoss, "loss diverged at epoch " + std::to_string(epoch) +
                                           " step " + std::to_string(global_step));
      }
      nn::zero_grads(trainable);
      nn::zero_grads(frozen);
      tape.backward(loss);
      clip_gradients(trainable, config.gradient_clip);
      optimizer.step();

      outcome.loss_trace.push_back(loss_value);
      if (log.is_open()) {
        nlohmann::ordered_json rec{{"step", global_step}, {"loss", loss_value}};
        log << rec.dump() << "\n";
      }
      ++global_step;
    }

    metrics::PredictionReport val_report =
        evaluate(m, *embedder, samples.val, config.top_k, "val");
    val_history.push_back(val_report.metrics.acc1);
    if (log.is_open()) {
      nlohmann::ordered_json rec{{"epoch", epoch},
                                 {"val_acc1", val_report.metrics.acc1},
                                 {"val_acc3", val_report.metrics.acc3},
                                 {"val_acc5", val_report.metrics.acc5},
                                 {"val_mrr", val_report.metrics.mrr},
                                 {"val_dtw", val_report.metrics.dtw_mean},
                                 {"val_bleu", val_report.metrics.bleu_mean}};
      log << rec.dump() << "\n";
      log.flush();
    }

    if (val_report.metrics.acc1 > best_val_acc1) {
      best_val_acc1 = val_report.metrics.acc1;
      best_epoch = epoch;
      best_params = ParamSnapshot::take(trainable);
      if (!out_dir.empty()) {
        save_checkpoint(outcome.best_checkpoint_path, config, m, optimizer, epoch + 1, best_epoch,
                        best_val_acc1, val_history);
      }
    }
    if (!out_dir.empty()) {
      save_checkpoint(outcome.latest_checkpoint_path, config, m, optimizer, epoch + 1, best_epoch,
                      best_val_acc1, val_history);
    }
  }

  require(m.backbone().checksum() == initial_checksum, ErrorCode::ChecksumMismatch,
          "frozen backbone drifted during training");

  // Reported metrics always come from the best-validation parameters. When the
  // best epoch predates a resume, the best-checkpoint file is authoritative.
  if (best_params) {
    best_params->restore(trainable);
  } else if (best_epoch >= 0 && !outcome.best_checkpoint_path.empty() &&
             std::filesystem::exists(outcome.best_checkpoint_path)) {
    LoadedCheckpoint best = load_checkpoint(outcome.best_checkpoint_path);
    std::vector<Tensor> best_values = best.model.trainable_parameters();
    require(best_values.size() == trainable.size(), ErrorCode::DimMismatch,
            "best checkpoint does not match the live model");
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      std::copy(best_values[i].values().begin(), best_values[i].values().end(),
                trainable[i].mutable_values().begin());
    }
  }
  outcome.config = config;
  outcome.model = std::move(m);
  outcome.val_acc1_history = std::move(val_history);
  outcome.best_epoch = best_epoch;
  outcome.best_val_acc1 = best_val_acc1;
  return outcome;
}

// --- gradient check harness ---------------------------------------------------------

double end_to_end_gradcheck(const GradCheckSpec& spec) {
  data::SynthConfig synth;
  synth.users = spec.users;
  synth.days = spec.days;
  synth.noise = 0.1;
  synth.dropout = 0.2;
  synth.seed = spec.seed;
  synth.grid = spec.grid;
  data::SyntheticDataset dataset = data::generate_synthetic(synth);

  std::vector<data::PredictionSample> batch;
  for (const data::Trajectory& traj : dataset.trajectories) {
    for (data::PredictionSample& s : data::build_samples(traj, spec.grid)) {
      if (static_cast<int>(batch.size()) < spec.max_samples &&
          s.observed_target_count() > 0) {
        batch.push_back(std::move(s));
      }
    }
  }
  require(!batch.empty(), ErrorCode::EmptySplit, "gradcheck produced no samples");

  model::ModelConfig mc;
  mc.dim = spec.dim;
  mc.grid = spec.grid;
  mc.backbone = model::BackboneSpec::parse(spec.backbone);
  model::RhythmModel m = model::RhythmModel::create(mc, spec.seed);

  semantic::StubEmbedder embedder(spec.dim, spec.seed);
  std::vector<model::SampleEmbeddings> embeddings;
  for (const data::PredictionSample& s : batch) {
    embeddings.push_back(model::embeddings_for_sample(embedder, s, spec.grid));
  }

  auto forward = [&](nn::Tape* tape) {
    nn::ExecContext ctx{tape, /*training=*/false, nullptr, nullptr};
    std::vector<Tensor> gathered;
    std::vector<int> targets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor logits = m.forward_logits(ctx, batch[i], embeddings[i]);
      std::vector<int> rows;
      for (int j = 0; j < data::kHorizonSlots; ++j) {
        if (batch[i].targets[j] == data::kMissing) continue;
        rows.push_back(j);
        targets.push_back(batch[i].targets[j]);
      }
      gathered.push_back(nn::gather_rows(tape, logits, rows));
    }
    Tensor all_logits = nn::concat_rows(tape, gathered);
    return nn::cross_entropy(tape, all_logits, targets);
  };

  std::vector<Tensor> params = m.trainable_parameters();
  return nn::finite_diff_check(forward, params, spec.h, spec.coords_per_tensor,
                               rng::mix(spec.seed, 0xC0C0ULL));
}

}  // namespace rhythm::training
