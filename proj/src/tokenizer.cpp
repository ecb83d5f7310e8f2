#include "rhythm/tokenizer.hpp"

#include <cmath>

namespace rhythm::tokenizer {

using nn::Tensor;

BlockParams BlockParams::init(const BlockConfig& config, rng::SplitMix64& gen,
                              const std::string& name_prefix) {
  require(config.dim % config.heads == 0, ErrorCode::ShapeMismatch,
          "head count must divide the model dimension");
  BlockParams p;
  p.dim = config.dim;
  p.heads = config.heads;
  p.head_dim = config.dim / config.heads;
  p.dropout_rate = config.dropout;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config.dim));
  for (int h = 0; h < config.heads; ++h) {
    const std::string tag = name_prefix + ".h" + std::to_string(h);
    p.w_q.push_back(nn::normal_init(config.dim, p.head_dim, proj_std, gen).set_name(tag + ".w_q"));
    p.w_k.push_back(nn::normal_init(config.dim, p.head_dim, proj_std, gen).set_name(tag + ".w_k"));
    p.w_v.push_back(nn::normal_init(config.dim, p.head_dim, proj_std, gen).set_name(tag + ".w_v"));
  }
  p.w_out = nn::normal_init(config.dim, config.dim, proj_std, gen).set_name(name_prefix + ".w_out");
  p.w_gate = nn::normal_init(config.dim, config.dim, proj_std, gen).set_name(name_prefix + ".w_gate");
  p.w1 = nn::normal_init(4 * config.dim, config.dim, proj_std, gen).set_name(name_prefix + ".w1");
  p.w2 = nn::normal_init(config.dim, 4 * config.dim, 1.0 / std::sqrt(4.0 * config.dim), gen)
             .set_name(name_prefix + ".w2");
  p.ln1_gamma = Tensor::full(1, config.dim, 1.0, true).set_name(name_prefix + ".ln1_gamma");
  p.ln1_beta = Tensor::zeros(1, config.dim, true).set_name(name_prefix + ".ln1_beta");
  p.ln2_gamma = Tensor::full(1, config.dim, 1.0, true).set_name(name_prefix + ".ln2_gamma");
  p.ln2_beta = Tensor::zeros(1, config.dim, true).set_name(name_prefix + ".ln2_beta");
  return p;
}

std::vector<Tensor> BlockParams::parameters() const {
  std::vector<Tensor> out;
  for (int h = 0; h < heads; ++h) {
    out.push_back(w_q[h]);
    out.push_back(w_k[h]);
    out.push_back(w_v[h]);
  }
  out.insert(out.end(), {w_out, w_gate, w1, w2, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta});
  return out;
}

Tensor gated_block(nn::ExecContext& ctx, const BlockParams& params, const Tensor& x) {
  require(x.cols() == params.dim, ErrorCode::ShapeMismatch,
          "gated_block expects " + std::to_string(params.dim) + " columns, got " +
              std::to_string(x.cols()));
  const int s = x.rows();
  nn::Tape* tape = ctx.tape;

  Tensor normed = nn::layer_norm(tape, x, params.ln1_gamma, params.ln1_beta);
  if (ctx.attention_stats) {
    ctx.attention_stats->score_entries += static_cast<std::uint64_t>(s) * s;
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(params.head_dim));
  Tensor heads;
  for (int h = 0; h < params.heads; ++h) {
    Tensor q = nn::matmul(tape, normed, params.w_q[h]);
    Tensor k = nn::matmul(tape, normed, params.w_k[h]);
    Tensor v = nn::matmul(tape, normed, params.w_v[h]);
    Tensor scores = nn::scale(tape, nn::matmul_nt(tape, q, k), inv_sqrt_dk);
    Tensor probs = nn::softmax_rows(tape, scores);
    Tensor head = nn::matmul(tape, probs, v);
    heads = h == 0 ? head : nn::concat_cols(tape, heads, head);
  }
  Tensor mha = nn::matmul(tape, heads, params.w_out);
  Tensor z = nn::add(tape, x, nn::dropout(tape, mha, params.dropout_rate, ctx.training, ctx.rng));

  Tensor normed2 = nn::layer_norm(tape, z, params.ln2_gamma, params.ln2_beta);
  Tensor hidden = nn::gelu(tape, nn::matmul_nt(tape, normed2, params.w1));
  Tensor ffn = nn::matmul_nt(tape, hidden, params.w2);
  Tensor gate = nn::sigmoid(tape, nn::matmul_nt(tape, normed2, params.w_gate));
  Tensor gated = nn::hadamard(tape, ffn, gate);
  return nn::add(tape, z, nn::dropout(tape, gated, params.dropout_rate, ctx.training, ctx.rng));
}

std::vector<Tensor> segment(nn::Tape* tape, const Tensor& sequence, int length) {
  require(length >= 1, ErrorCode::IndivisibleLength, "segment length must be positive");
  require(sequence.rows() % length == 0, ErrorCode::IndivisibleLength,
          "sequence of " + std::to_string(sequence.rows()) +
              " rows is not divisible by segment length " + std::to_string(length));
  std::vector<Tensor> out;
  out.reserve(sequence.rows() / length);
  for (int begin = 0; begin < sequence.rows(); begin += length) {
    out.push_back(nn::slice_rows(tape, sequence, begin, begin + length));
  }
  return out;
}

Tensor intra_attention(nn::ExecContext& ctx, std::span<const BlockParams> layers,
                       const Tensor& segment) {
  Tensor out = segment;
  for (const BlockParams& layer : layers) out = gated_block(ctx, layer, out);
  return out;
}

Tensor inter_attention(nn::ExecContext& ctx, std::span<const BlockParams> layers,
                       const Tensor& tokens) {
  Tensor out = tokens;
  for (const BlockParams& layer : layers) out = gated_block(ctx, layer, out);
  return out;
}

PoolMode pool_mode_from_string(const std::string& s) {
  if (s == "attention") return PoolMode::Attention;
  if (s == "mean") return PoolMode::Mean;
  fail(ErrorCode::ConfigError, "unknown pool mode: " + s);
}

std::string to_string(PoolMode mode) {
  return mode == PoolMode::Attention ? "attention" : "mean";
}

PoolParams PoolParams::init(PoolMode mode, int dim, rng::SplitMix64& gen,
                            const std::string& name_prefix) {
  PoolParams p;
  p.mode = mode;
  p.dim = dim;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(dim));
  p.query = nn::normal_init(1, dim, proj_std, gen).set_name(name_prefix + ".query");
  p.w_key = nn::normal_init(dim, dim, proj_std, gen).set_name(name_prefix + ".w_key");
  p.w_value = nn::normal_init(dim, dim, proj_std, gen).set_name(name_prefix + ".w_value");
  return p;
}

std::vector<Tensor> PoolParams::parameters() const {
  if (mode == PoolMode::Mean) return {};
  return {query, w_key, w_value};
}

Tensor pool(nn::ExecContext& ctx, const PoolParams& params, const Tensor& refined) {
  require(refined.rows() >= 1, ErrorCode::EmptySegment, "cannot pool an empty segment");
  nn::Tape* tape = ctx.tape;
  if (params.mode == PoolMode::Mean) {
    Tensor weights = Tensor::full(1, refined.rows(), 1.0 / refined.rows());
    return nn::matmul(tape, weights, refined);
  }
  require(refined.cols() == params.dim, ErrorCode::ShapeMismatch,
          "pool expects " + std::to_string(params.dim) + " columns");
  Tensor keys = nn::matmul(tape, refined, params.w_key);
  Tensor values = nn::matmul(tape, refined, params.w_value);
  Tensor scores = nn::scale(tape, nn::matmul_nt(tape, params.query, keys),
                            1.0 / std::sqrt(static_cast<double>(params.dim)));
  if (ctx.attention_stats) {
    ctx.attention_stats->pool_entries += static_cast<std::uint64_t>(refined.rows());
  }
  Tensor weights = nn::softmax_rows(tape, scores);
  return nn::matmul(tape, weights, values);
}

TokenizerParams TokenizerParams::init(const TokenizerConfig& config, rng::SplitMix64& gen) {
  TokenizerParams p;
  p.config = config;
  BlockConfig block{config.dim, config.heads, config.dropout};
  for (int i = 0; i < config.intra_layers; ++i) {
    p.intra.push_back(BlockParams::init(block, gen, "tokenizer.intra" + std::to_string(i)));
  }
  for (int i = 0; i < config.inter_layers; ++i) {
    p.inter.push_back(BlockParams::init(block, gen, "tokenizer.inter" + std::to_string(i)));
  }
  p.pooler = PoolParams::init(config.pool, config.dim, gen, "tokenizer.pool");
  return p;
}

std::vector<Tensor> TokenizerParams::parameters() const {
  std::vector<Tensor> out;
  for (const BlockParams& b : intra) {
    auto bp = b.parameters();
    out.insert(out.end(), bp.begin(), bp.end());
  }
  for (const BlockParams& b : inter) {
    auto bp = b.parameters();
    out.insert(out.end(), bp.begin(), bp.end());
  }
  auto pp = pooler.parameters();
  out.insert(out.end(), pp.begin(), pp.end());
  return out;
}

Tensor hierarchical_encode(nn::ExecContext& ctx, const TokenizerParams& params,
                           const Tensor& history) {
  std::vector<Tensor> segments = segment(ctx.tape, history, params.config.segment_slots);
  std::vector<Tensor> tokens;
  tokens.reserve(segments.size());
  for (const Tensor& seg : segments) {
    Tensor refined = intra_attention(ctx, params.intra, seg);
    tokens.push_back(pool(ctx, params.pooler, refined));
  }
  Tensor stacked = nn::concat_rows(ctx.tape, tokens);
  return inter_attention(ctx, params.inter, stacked);
}

}  // namespace rhythm::tokenizer
