#include "rhythm/model.hpp"

#include <cmath>
#include <cstring>

#include "rhythm/serialize.hpp"

namespace rhythm::model {

using nn::Tensor;

BackboneSpec BackboneSpec::parse(const std::string& text) {
  BackboneSpec spec;
  if (text == "identity") {
    spec.kind = Kind::Identity;
    return spec;
  }
  if (text.rfind("frozen-random", 0) == 0) {
    spec.kind = Kind::FrozenRandom;
    if (text.size() > 13) {
      int layers = 0, heads = 0;
      if (std::sscanf(text.c_str(), "frozen-random:%d:%d", &layers, &heads) != 2 || layers < 1 ||
          heads < 1) {
        fail(ErrorCode::ConfigError, "expected frozen-random:LAYERS:HEADS, got " + text);
      }
      spec.layers = layers;
      spec.heads = heads;
    }
    return spec;
  }
  if (text.rfind("load:", 0) == 0) {
    spec.kind = Kind::Loaded;
    spec.path = text.substr(5);
    require(!spec.path.empty(), ErrorCode::ConfigError, "load backbone needs a path");
    return spec;
  }
  fail(ErrorCode::ConfigError,
       "unknown backbone spec: " + text + " (want identity, frozen-random:L:H, or load:PATH)");
}

std::string BackboneSpec::to_string() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::FrozenRandom:
      return "frozen-random:" + std::to_string(layers) + ":" + std::to_string(heads);
    case Kind::Loaded: return "load:" + path;
  }
  return "identity";
}

namespace {

constexpr char kBackboneMagic[4] = {'R', 'H', 'Y', 'B'};
constexpr std::uint16_t kBackboneVersion = 1;

void freeze_blocks(std::vector<tokenizer::BlockParams>& blocks) {
  for (tokenizer::BlockParams& block : blocks) {
    for (Tensor p : block.parameters()) p.set_frozen(true);
  }
}

void serialize_param_block(ByteWriter& w, const Tensor& p) {
  w.u64(static_cast<std::uint64_t>(p.rows()));
  w.u64(static_cast<std::uint64_t>(p.cols()));
  for (double v : p.values()) w.f64(v);
}

std::string canonical_backbone_bytes(int dim, const std::vector<tokenizer::BlockParams>& blocks) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  w.u32(blocks.empty() ? 0 : static_cast<std::uint32_t>(blocks.front().heads));
  for (const tokenizer::BlockParams& block : blocks) {
    for (const Tensor& p : block.parameters()) serialize_param_block(w, p);
  }
  return w.buffer();
}

}  // namespace

Backbone Backbone::create(const BackboneSpec& spec, int dim, std::uint64_t seed) {
  Backbone backbone;
  backbone.spec_ = spec;
  backbone.dim_ = dim;
  switch (spec.kind) {
    case BackboneSpec::Kind::Identity:
      break;
    case BackboneSpec::Kind::FrozenRandom: {
      rng::SplitMix64 gen(rng::mix(seed, 0xBACB0EULL));
      tokenizer::BlockConfig block{dim, spec.heads, /*dropout=*/0.0};
      for (int i = 0; i < spec.layers; ++i) {
        backbone.blocks_.push_back(
            tokenizer::BlockParams::init(block, gen, "backbone.layer" + std::to_string(i)));
      }
      freeze_blocks(backbone.blocks_);
      break;
    }
    case BackboneSpec::Kind::Loaded: {
      const std::string blob = read_file(spec.path);
      ByteReader r(blob);
      char magic[4];
      r.bytes(magic, 4);
      require(std::memcmp(magic, kBackboneMagic, 4) == 0, ErrorCode::IoError,
              "not a backbone weights file: " + spec.path);
      require(r.u16() == kBackboneVersion, ErrorCode::IoError, "unsupported backbone version");
      const int file_dim = static_cast<int>(r.u32());
      require(file_dim == dim, ErrorCode::DimMismatch,
              "backbone file dimension " + std::to_string(file_dim) +
                  " does not match model dimension " + std::to_string(dim));
      const int layers = static_cast<int>(r.u32());
      const int heads = static_cast<int>(r.u32());
      Digest256 stored;
      r.bytes(stored.data(), stored.size());
      rng::SplitMix64 dummy(0);
      tokenizer::BlockConfig block{dim, heads, /*dropout=*/0.0};
      for (int i = 0; i < layers; ++i) {
        tokenizer::BlockParams params =
            tokenizer::BlockParams::init(block, dummy, "backbone.layer" + std::to_string(i));
        for (Tensor p : params.parameters()) {
          const std::uint64_t rows = r.u64();
          const std::uint64_t cols = r.u64();
          require(rows == static_cast<std::uint64_t>(p.rows()) &&
                      cols == static_cast<std::uint64_t>(p.cols()),
                  ErrorCode::DimMismatch, "backbone parameter shape mismatch");
          for (double& v : p.mutable_values()) v = r.f64();
        }
        backbone.blocks_.push_back(std::move(params));
      }
      freeze_blocks(backbone.blocks_);
      const Digest256 actual = backbone.checksum();
      require(actual == stored, ErrorCode::ChecksumMismatch,
              "backbone checksum mismatch for " + spec.path);
      break;
    }
  }
  return backbone;
}

Tensor Backbone::forward(nn::ExecContext& ctx, const Tensor& sequence) const {
  require(sequence.cols() == dim_ || spec_.kind == BackboneSpec::Kind::Identity,
          ErrorCode::DimMismatch, "backbone dimension mismatch");
  Tensor out = sequence;
  for (const tokenizer::BlockParams& block : blocks_) {
    out = tokenizer::gated_block(ctx, block, out);
  }
  return out;
}

Digest256 Backbone::checksum() const {
  return sha256(canonical_backbone_bytes(dim_, blocks_));
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out;
  for (const tokenizer::BlockParams& block : blocks_) {
    auto bp = block.parameters();
    out.insert(out.end(), bp.begin(), bp.end());
  }
  return out;
}

void Backbone::save(const std::string& path) const {
  ByteWriter w;
  w.bytes(kBackboneMagic, 4);
  w.u16(kBackboneVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(blocks_.size()));
  w.u32(blocks_.empty() ? 0 : static_cast<std::uint32_t>(blocks_.front().heads));
  const Digest256 digest = checksum();
  w.bytes(digest.data(), digest.size());
  for (const tokenizer::BlockParams& block : blocks_) {
    for (const Tensor& p : block.parameters()) serialize_param_block(w, p);
  }
  write_file(path, w.buffer());
}

HeadParams HeadParams::init(int vocabulary, int dim, rng::SplitMix64& gen) {
  HeadParams head;
  head.w_o = nn::normal_init(vocabulary, dim, 1.0 / std::sqrt(static_cast<double>(dim)), gen)
                 .set_name("head.w_o");
  head.b_o = Tensor::zeros(1, vocabulary, /*requires_grad=*/true).set_name("head.b_o");
  return head;
}

std::vector<Tensor> HeadParams::parameters() const { return {w_o, b_o}; }

Tensor fuse(nn::Tape* tape, const Tensor& segment_tokens, const Tensor& history_te,
            const Tensor& future_temporal, const Tensor& task_te, const AblationFlags& flags) {
  require(segment_tokens.rows() == history_te.rows(), ErrorCode::ShapeMismatch,
          "one prompt embedding per segment token required");
  require(segment_tokens.cols() == history_te.cols() &&
              segment_tokens.cols() == future_temporal.cols() &&
              segment_tokens.cols() == task_te.cols() && task_te.rows() == 1,
          ErrorCode::ShapeMismatch, "fusion operands must share the model dimension");
  Tensor history_part =
      flags.no_traj_info ? segment_tokens : nn::add(tape, segment_tokens, history_te);
  Tensor future_part =
      flags.no_task_desc ? future_temporal : nn::add_bias_row(tape, future_temporal, task_te);
  std::array<Tensor, 2> parts{history_part, future_part};
  return nn::concat_rows(tape, parts);
}

Tensor head_logits(nn::Tape* tape, const Tensor& hidden, const HeadParams& head) {
  return nn::add_bias_row(tape, nn::matmul_nt(tape, hidden, head.w_o), head.b_o);
}

std::vector<double> predict_distribution(std::span<const double> hidden, const HeadParams& head) {
  const int v = head.w_o.rows();
  const int d = head.w_o.cols();
  require(static_cast<int>(hidden.size()) == d, ErrorCode::DimMismatch,
          "hidden vector length does not match head dimension");
  std::vector<double> logits(v);
  const double* w = head.w_o.values().data();
  const double* b = head.b_o.values().data();
  for (int i = 0; i < v; ++i) {
    double acc = b[i];
    const double* row = w + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) acc += row[j] * hidden[j];
    logits[i] = acc;
  }
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (double& l : logits) l /= sum;
  return logits;
}

Tensor sequence_loss(nn::Tape* tape, const Tensor& logits, std::span<const int> targets) {
  require(static_cast<int>(targets.size()) == logits.rows(), ErrorCode::ShapeMismatch,
          "one target per logits row required");
  std::vector<int> observed_rows;
  std::vector<int> observed_targets;
  for (int i = 0; i < logits.rows(); ++i) {
    if (targets[i] == data::kMissing) continue;
    observed_rows.push_back(i);
    observed_targets.push_back(targets[i]);
  }
  require(!observed_rows.empty(), ErrorCode::AllTargetsMissing,
          "no observed targets in the horizon");
  Tensor picked = nn::gather_rows(tape, logits, observed_rows);
  return nn::cross_entropy(tape, picked, observed_targets);
}

SampleEmbeddings embeddings_for_sample(semantic::Embedder& embedder,
                                       const data::PredictionSample& sample,
                                       const data::GridSpec& grid) {
  const int dim = embedder.dim();
  std::vector<double> history_values;
  history_values.reserve(static_cast<std::size_t>(data::kHistoryDays) * dim);
  for (const semantic::PromptText& prompt : semantic::sample_history_prompts(sample, grid)) {
    for (float v : embedder.embed(prompt)) history_values.push_back(v);
  }
  std::vector<float> task = embedder.embed(semantic::sample_task_prompt(sample, grid));
  std::vector<double> task_values(task.begin(), task.end());
  SampleEmbeddings out;
  out.history_te = Tensor(data::kHistoryDays, dim, std::move(history_values));
  out.task_te = Tensor(1, dim, std::move(task_values));
  return out;
}

RhythmModel RhythmModel::create(const ModelConfig& config, std::uint64_t seed) {
  RhythmModel m;
  m.config_ = config;
  m.config_.encoder_dims.model_dim = config.dim;

  rng::SplitMix64 enc_gen(rng::mix(seed, 0xE2C0DEULL));
  m.encoder_ = encoder::EncoderParams::init(m.config_.encoder_dims, config.grid, enc_gen);

  tokenizer::TokenizerConfig tok;
  tok.dim = config.dim;
  tok.heads = config.heads;
  tok.intra_layers = config.ablation.no_hierarchical_attention ? 0 : config.intra_layers;
  tok.inter_layers = config.ablation.no_hierarchical_attention ? 0 : config.inter_layers;
  tok.dropout = config.dropout;
  tok.pool = config.pool;
  tok.segment_slots = data::kSlotsPerDay;
  rng::SplitMix64 tok_gen(rng::mix(seed, 0x70C31ULL));
  m.tokenizer_ = tokenizer::TokenizerParams::init(tok, tok_gen);

  m.backbone_ = Backbone::create(config.backbone, config.dim, seed);

  rng::SplitMix64 head_gen(rng::mix(seed, 0xEAD5ULL));
  m.head_ = HeadParams::init(config.grid.vocabulary_size(), config.dim, head_gen);
  return m;
}

Tensor RhythmModel::forward_logits(nn::ExecContext& ctx, const data::PredictionSample& sample,
                                   const SampleEmbeddings& embeddings) const {
  const data::GridSpec& grid = config_.grid;
  std::vector<int> slots(data::kHistorySlots), dows(data::kHistorySlots),
      locations(data::kHistorySlots);
  for (int t = 0; t < data::kHistorySlots; ++t) {
    slots[t] = sample.history_slot(t);
    dows[t] = sample.history_dow(t);
    locations[t] = sample.history[t];
  }
  Tensor history = encoder::encode_observations(ctx, encoder_, grid, slots, dows, locations);

  std::vector<int> future_slots(data::kHorizonSlots);
  std::vector<int> future_dows(data::kHorizonSlots, sample.future_dow());
  for (int j = 0; j < data::kHorizonSlots; ++j) future_slots[j] = j;
  Tensor future = encoder::encode_temporal(ctx, encoder_, future_slots, future_dows);

  Tensor sequence;
  if (config_.ablation.no_tokenization) {
    Tensor stream = history;
    if (!config_.ablation.no_traj_info) {
      std::vector<int> day_of_slot(data::kHistorySlots);
      for (int t = 0; t < data::kHistorySlots; ++t) day_of_slot[t] = t / data::kSlotsPerDay;
      Tensor expanded = nn::gather_rows(ctx.tape, embeddings.history_te, day_of_slot);
      stream = nn::add(ctx.tape, stream, expanded);
    }
    Tensor future_part = config_.ablation.no_task_desc
                             ? future
                             : nn::add_bias_row(ctx.tape, future, embeddings.task_te);
    std::array<Tensor, 2> parts{stream, future_part};
    sequence = nn::concat_rows(ctx.tape, parts);
  } else {
    Tensor tokens = tokenizer::hierarchical_encode(ctx, tokenizer_, history);
    sequence = fuse(ctx.tape, tokens, embeddings.history_te, future, embeddings.task_te,
                    config_.ablation);
  }

  Tensor hidden = backbone_.forward(ctx, sequence);
  Tensor future_hidden =
      nn::slice_rows(ctx.tape, hidden, sequence.rows() - data::kHorizonSlots, sequence.rows());
  return head_logits(ctx.tape, future_hidden, head_);
}

std::vector<Tensor> RhythmModel::trainable_parameters() const {
  std::vector<Tensor> out = encoder_.parameters();
  auto tok = tokenizer_.parameters();
  out.insert(out.end(), tok.begin(), tok.end());
  auto head = head_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

}  // namespace rhythm::model
