#pragma once

#include <span>
#include <string>
#include <vector>

#include "rhythm/tensor.hpp"

namespace rhythm::tokenizer {

struct BlockConfig {
  int dim = 64;
  int heads = 4;
  double dropout = 0.1;
};

// Pre-norm transformer block with a gated feed-forward (4x expansion):
//   Z = X + Dropout(MultiHead(LayerNorm(X)))
//   Y = Z + Dropout(FFN(LayerNorm(Z)) ⊙ σ(LayerNorm(Z) W_gate^T))
struct BlockParams {
  int dim = 0;
  int heads = 0;
  int head_dim = 0;
  double dropout_rate = 0.0;
  std::vector<nn::Tensor> w_q, w_k, w_v;  // per head: dim x head_dim
  nn::Tensor w_out;                       // dim x dim
  nn::Tensor w_gate;                      // dim x dim
  nn::Tensor w1;                          // 4*dim x dim
  nn::Tensor w2;                          // dim x 4*dim
  nn::Tensor ln1_gamma, ln1_beta;         // 1 x dim
  nn::Tensor ln2_gamma, ln2_beta;         // 1 x dim

  static BlockParams init(const BlockConfig& config, rng::SplitMix64& gen,
                          const std::string& name_prefix);
  std::vector<nn::Tensor> parameters() const;
};

nn::Tensor gated_block(nn::ExecContext& ctx, const BlockParams& params, const nn::Tensor& x);

// Lossless partition of [T x D] into T/L segments of L rows each.
std::vector<nn::Tensor> segment(nn::Tape* tape, const nn::Tensor& sequence, int length);

// Stacked gated blocks; zero layers is the identity.
nn::Tensor intra_attention(nn::ExecContext& ctx, std::span<const BlockParams> layers,
                           const nn::Tensor& segment);
nn::Tensor inter_attention(nn::ExecContext& ctx, std::span<const BlockParams> layers,
                           const nn::Tensor& tokens);

enum class PoolMode { Attention, Mean };

PoolMode pool_mode_from_string(const std::string& s);
std::string to_string(PoolMode mode);

// Single-query attention pooling over segment slots. Mean pooling is the
// ablation alternative.
struct PoolParams {
  PoolMode mode = PoolMode::Attention;
  int dim = 0;
  nn::Tensor query;    // 1 x dim
  nn::Tensor w_key;    // dim x dim
  nn::Tensor w_value;  // dim x dim

  static PoolParams init(PoolMode mode, int dim, rng::SplitMix64& gen,
                         const std::string& name_prefix);
  std::vector<nn::Tensor> parameters() const;
};

nn::Tensor pool(nn::ExecContext& ctx, const PoolParams& params, const nn::Tensor& refined);

struct TokenizerConfig {
  int dim = 64;
  int heads = 4;
  int intra_layers = 2;
  int inter_layers = 2;
  double dropout = 0.1;
  PoolMode pool = PoolMode::Attention;
  int segment_slots = 48;
};

struct TokenizerParams {
  TokenizerConfig config;
  std::vector<BlockParams> intra;  // shared across segments
  std::vector<BlockParams> inter;
  PoolParams pooler;

  static TokenizerParams init(const TokenizerConfig& config, rng::SplitMix64& gen);
  std::vector<nn::Tensor> parameters() const;
};

// segment -> intra-segment attention -> pool -> inter-segment attention.
// Returns one token row per segment.
nn::Tensor hierarchical_encode(nn::ExecContext& ctx, const TokenizerParams& params,
                               const nn::Tensor& history);

}  // namespace rhythm::tokenizer
