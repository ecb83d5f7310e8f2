#pragma once

#include <span>
#include <string>
#include <vector>

#include "rhythm/data.hpp"
#include "rhythm/digest.hpp"
#include "rhythm/encoder.hpp"
#include "rhythm/semantic.hpp"
#include "rhythm/tensor.hpp"
#include "rhythm/tokenizer.hpp"

namespace rhythm::model {

struct BackboneSpec {
  enum class Kind { Identity, FrozenRandom, Loaded };
  Kind kind = Kind::FrozenRandom;
  int layers = 2;
  int heads = 4;
  std::string path;

  // "identity" | "frozen-random:L:H" | "load:PATH"
  static BackboneSpec parse(const std::string& text);
  std::string to_string() const;
};

// Fixed reasoning stack. Parameters are frozen: gradients flow through them
// to upstream trainable parameters but no optimizer may ever update them.
class Backbone {
 public:
  static Backbone create(const BackboneSpec& spec, int dim, std::uint64_t seed);

  nn::Tensor forward(nn::ExecContext& ctx, const nn::Tensor& sequence) const;
  Digest256 checksum() const;
  std::vector<nn::Tensor> parameters() const;
  const BackboneSpec& spec() const { return spec_; }
  int dim() const { return dim_; }

  // Weights file: magic RHYB, version, dims, checksum, parameter blocks.
  void save(const std::string& path) const;

 private:
  BackboneSpec spec_;
  int dim_ = 0;
  std::vector<tokenizer::BlockParams> blocks_;
};

struct HeadParams {
  nn::Tensor w_o;  // V x D
  nn::Tensor b_o;  // 1 x V

  static HeadParams init(int vocabulary, int dim, rng::SplitMix64& gen);
  std::vector<nn::Tensor> parameters() const;
};

struct AblationFlags {
  bool no_hierarchical_attention = false;  // zero intra/inter layers
  bool no_tokenization = false;            // bypass segmentation; full-length history
  bool no_traj_info = false;               // drop history prompt embeddings
  bool no_task_desc = false;               // drop the task prompt embedding
};

// Additive fusion: history rows get their per-segment prompt embedding, every
// future row shares the single task embedding.
nn::Tensor fuse(nn::Tape* tape, const nn::Tensor& segment_tokens, const nn::Tensor& history_te,
                const nn::Tensor& future_temporal, const nn::Tensor& task_te,
                const AblationFlags& flags = {});

nn::Tensor head_logits(nn::Tape* tape, const nn::Tensor& hidden, const HeadParams& head);

// softmax(W_o h + b_o) for a single hidden vector.
std::vector<double> predict_distribution(std::span<const double> hidden, const HeadParams& head);

// Mean cross-entropy over observed future slots; kMissing targets are skipped.
nn::Tensor sequence_loss(nn::Tape* tape, const nn::Tensor& logits, std::span<const int> targets);

struct ModelConfig {
  int dim = 64;
  data::GridSpec grid;
  encoder::EncoderDims encoder_dims;
  int heads = 4;
  int intra_layers = 2;
  int inter_layers = 2;
  double dropout = 0.1;
  tokenizer::PoolMode pool = tokenizer::PoolMode::Attention;
  BackboneSpec backbone;
  AblationFlags ablation;
};

struct SampleEmbeddings {
  nn::Tensor history_te;  // 7 x D, constant
  nn::Tensor task_te;     // 1 x D, constant
};

SampleEmbeddings embeddings_for_sample(semantic::Embedder& embedder,
                                       const data::PredictionSample& sample,
                                       const data::GridSpec& grid);

class RhythmModel {
 public:
  static RhythmModel create(const ModelConfig& config, std::uint64_t seed);

  // Logits for the 48 future slots of one sample: [48 x V].
  nn::Tensor forward_logits(nn::ExecContext& ctx, const data::PredictionSample& sample,
                            const SampleEmbeddings& embeddings) const;

  std::vector<nn::Tensor> trainable_parameters() const;
  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const encoder::EncoderParams& encoder_params() const { return encoder_; }
  const tokenizer::TokenizerParams& tokenizer_params() const { return tokenizer_; }
  const HeadParams& head() const { return head_; }

 private:
  ModelConfig config_;
  encoder::EncoderParams encoder_;
  tokenizer::TokenizerParams tokenizer_;
  Backbone backbone_;
  HeadParams head_;
};

}  // namespace rhythm::model
