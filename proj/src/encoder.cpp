#include "rhythm/encoder.hpp"

#include <cmath>

namespace rhythm::encoder {

using nn::Tensor;

EncoderParams EncoderParams::init(const EncoderDims& dims, const data::GridSpec& grid,
                                  rng::SplitMix64& gen) {
  EncoderParams p;
  p.dims = dims;
  p.e_tod = nn::uniform_init(data::kSlotsPerDay, dims.tod_dim, -0.02, 0.02, gen).set_name("encoder.e_tod");
  p.e_dow = nn::uniform_init(7, dims.dow_dim, -0.02, 0.02, gen).set_name("encoder.e_dow");
  p.e_loc = nn::uniform_init(grid.vocabulary_size(), dims.loc_dim, -0.02, 0.02, gen)
                .set_name("encoder.e_loc");
  p.w_coord = nn::normal_init(dims.coord_dim, 2, 1.0 / std::sqrt(2.0), gen).set_name("encoder.w_coord");
  p.b_coord = Tensor::zeros(1, dims.coord_dim, /*requires_grad=*/true).set_name("encoder.b_coord");
  const int temporal_in = dims.tod_dim + dims.dow_dim;
  const int spatial_in = dims.loc_dim + dims.coord_dim;
  p.p_temporal = nn::normal_init(dims.model_dim, temporal_in, 1.0 / std::sqrt(temporal_in), gen)
                     .set_name("encoder.p_temporal");
  p.p_spatial = nn::normal_init(dims.model_dim, spatial_in, 1.0 / std::sqrt(spatial_in), gen)
                    .set_name("encoder.p_spatial");
  return p;
}

std::vector<Tensor> EncoderParams::parameters() const {
  return {e_tod, e_dow, e_loc, w_coord, b_coord, p_temporal, p_spatial};
}

Tensor encode_temporal(nn::ExecContext& ctx, const EncoderParams& params,
                       std::span<const int> slots, std::span<const int> dows) {
  require(slots.size() == dows.size(), ErrorCode::ShapeMismatch,
          "slot and day-of-week lists must align");
  Tensor tod = nn::gather_rows(ctx.tape, params.e_tod, slots);
  Tensor dow = nn::gather_rows(ctx.tape, params.e_dow, dows);
  Tensor concat = nn::concat_cols(ctx.tape, tod, dow);
  return nn::matmul_nt(ctx.tape, concat, params.p_temporal);
}

Tensor encode_spatial(nn::ExecContext& ctx, const EncoderParams& params,
                      const data::GridSpec& grid, std::span<const int> locations) {
  const int n = static_cast<int>(locations.size());
  require(n > 0, ErrorCode::ShapeMismatch, "need at least one location");
  std::vector<int> safe_ids(n);
  std::vector<double> mask(n);
  std::vector<double> coords(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    const int loc = locations[i];
    if (loc == data::kMissing) {
      safe_ids[i] = 0;
      mask[i] = 0.0;
      coords[2 * i] = 0.0;
      coords[2 * i + 1] = 0.0;
    } else {
      require(loc >= 0 && loc < grid.vocabulary_size(), ErrorCode::IndexOutOfRange,
              "location id " + std::to_string(loc) + " outside vocabulary");
      safe_ids[i] = loc;
      mask[i] = 1.0;
      auto [x, y] = data::inverse_location_id(grid, loc);
      coords[2 * i] = (x - 0.5) / grid.width;
      coords[2 * i + 1] = (y - 0.5) / grid.height;
    }
  }
  Tensor loc_e = nn::gather_rows(ctx.tape, params.e_loc, safe_ids);
  Tensor coord_in(n, 2, std::move(coords));
  Tensor coord_e = nn::add_bias_row(ctx.tape, nn::matmul_nt(ctx.tape, coord_in, params.w_coord),
                                    params.b_coord);
  Tensor spatial = nn::concat_cols(ctx.tape, loc_e, coord_e);
  Tensor projected = nn::matmul_nt(ctx.tape, spatial, params.p_spatial);
  // Missing rows become exactly zero here, so no gradient reaches any spatial
  // parameter through them.
  return nn::scale_rows(ctx.tape, projected, mask);
}

Tensor encode_observations(nn::ExecContext& ctx, const EncoderParams& params,
                           const data::GridSpec& grid, std::span<const int> slots,
                           std::span<const int> dows, std::span<const int> locations) {
  require(slots.size() == locations.size(), ErrorCode::ShapeMismatch,
          "slot and location lists must align");
  Tensor temporal = encode_temporal(ctx, params, slots, dows);
  Tensor spatial = encode_spatial(ctx, params, grid, locations);
  return nn::add(ctx.tape, temporal, spatial);
}

Tensor encode_temporal(nn::ExecContext& ctx, const EncoderParams& params, int slot, int dow) {
  const int slots[1] = {slot};
  const int dows[1] = {dow};
  return encode_temporal(ctx, params, slots, dows);
}

Tensor encode_spatial(nn::ExecContext& ctx, const EncoderParams& params,
                      const data::GridSpec& grid, int location) {
  const int locs[1] = {location};
  return encode_spatial(ctx, params, grid, locs);
}

Tensor encode_observation(nn::ExecContext& ctx, const EncoderParams& params,
                          const data::GridSpec& grid, int slot, int dow, int location) {
  const int slots[1] = {slot};
  const int dows[1] = {dow};
  const int locs[1] = {location};
  return encode_observations(ctx, params, grid, slots, dows, locs);
}

}  // namespace rhythm::encoder
