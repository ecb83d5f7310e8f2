#pragma once

#include <span>
#include <vector>

#include "rhythm/data.hpp"
#include "rhythm/tensor.hpp"

namespace rhythm::encoder {

struct EncoderDims {
  int model_dim = 64;
  int tod_dim = 128;
  int dow_dim = 128;
  int loc_dim = 256;
  int coord_dim = 128;
};

// Trainable embedding tables plus the two branch projections that bring the
// concatenated temporal (tod||dow) and spatial (loc||coord) features to the
// shared model dimension.
struct EncoderParams {
  EncoderDims dims;
  nn::Tensor e_tod;       // 48 x tod_dim
  nn::Tensor e_dow;       // 7 x dow_dim
  nn::Tensor e_loc;       // V x loc_dim
  nn::Tensor w_coord;     // coord_dim x 2
  nn::Tensor b_coord;     // 1 x coord_dim
  nn::Tensor p_temporal;  // model_dim x (tod_dim + dow_dim)
  nn::Tensor p_spatial;   // model_dim x (loc_dim + coord_dim)

  static EncoderParams init(const EncoderDims& dims, const data::GridSpec& grid,
                            rng::SplitMix64& gen);
  std::vector<nn::Tensor> parameters() const;
};

// One output row of length model_dim per input position.
nn::Tensor encode_temporal(nn::ExecContext& ctx, const EncoderParams& params,
                           std::span<const int> slots, std::span<const int> dows);

// kMissing locations yield exactly-zero rows (and zero spatial gradients).
nn::Tensor encode_spatial(nn::ExecContext& ctx, const EncoderParams& params,
                          const data::GridSpec& grid, std::span<const int> locations);

nn::Tensor encode_observations(nn::ExecContext& ctx, const EncoderParams& params,
                               const data::GridSpec& grid, std::span<const int> slots,
                               std::span<const int> dows, std::span<const int> locations);

// Single-position conveniences.
nn::Tensor encode_temporal(nn::ExecContext& ctx, const EncoderParams& params, int slot, int dow);
nn::Tensor encode_spatial(nn::ExecContext& ctx, const EncoderParams& params,
                          const data::GridSpec& grid, int location);
nn::Tensor encode_observation(nn::ExecContext& ctx, const EncoderParams& params,
                              const data::GridSpec& grid, int slot, int dow, int location);

}  // namespace rhythm::encoder
