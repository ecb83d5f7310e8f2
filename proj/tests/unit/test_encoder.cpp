#include <cmath>

#include "rhythm/encoder.hpp"

#include "doctest.h"

using namespace rhythm;
using nn::Tensor;

namespace {

encoder::EncoderParams small_params(const data::GridSpec& grid, std::uint64_t seed,
                                    int model_dim = 12) {
  encoder::EncoderDims dims;
  dims.model_dim = model_dim;
  dims.tod_dim = 10;
  dims.dow_dim = 6;
  dims.loc_dim = 14;
  dims.coord_dim = 8;
  rng::SplitMix64 gen(seed);
  return encoder::EncoderParams::init(dims, grid, gen);
}

}  // namespace

TEST_CASE("temporal encoding: determinism, shape, zero tables") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 2);
  nn::ExecContext ctx;

  Tensor a = encoder::encode_temporal(ctx, params, 13, 4);
  Tensor b = encoder::encode_temporal(ctx, params, 13, 4);
  CHECK(a.cols() == 12);
  CHECK(a.rows() == 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);

  for (Tensor t : {params.e_tod, params.e_dow}) {
    for (double& v : t.mutable_values()) v = 0.0;
  }
  Tensor zero = encoder::encode_temporal(ctx, params, 13, 4);
  for (double v : zero.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(encoder::encode_temporal(ctx, params, 48, 0), Error);
  CHECK_THROWS_AS(encoder::encode_temporal(ctx, params, 0, 7), Error);
}

TEST_CASE("spatial encoding: missing handling and coordinate sensitivity") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 3);
  nn::ExecContext ctx;

  Tensor missing = encoder::encode_spatial(ctx, params, grid, data::kMissing);
  for (double v : missing.values()) CHECK(v == 0.0);

  // Same x, different y: the coordinate branch separates them.
  const int id_a = data::location_id(grid, 4, 2);
  const int id_b = data::location_id(grid, 4, 7);
  // Remove the categorical table's influence so only coordinates differ.
  for (double& v : params.e_loc.mutable_values()) v = 0.0;
  Tensor ea = encoder::encode_spatial(ctx, params, grid, id_a);
  Tensor eb = encoder::encode_spatial(ctx, params, grid, id_b);
  double diff = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) diff += std::abs(ea.values()[i] - eb.values()[i]);
  CHECK(diff > 1e-9);

  for (Tensor t : {params.w_coord, params.b_coord}) {
    for (double& v : t.mutable_values()) v = 0.0;
  }
  Tensor zero = encoder::encode_spatial(ctx, params, grid, id_a);
  for (double v : zero.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(encoder::encode_spatial(ctx, params, grid, grid.vocabulary_size()), Error);
}

TEST_CASE("observation encoding: missing equals pure temporal bit-exactly") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 4);
  nn::ExecContext ctx;

  Tensor temporal = encoder::encode_temporal(ctx, params, 21, 6);
  Tensor with_missing = encoder::encode_observation(ctx, params, grid, 21, 6, data::kMissing);
  REQUIRE(temporal.size() == with_missing.size());
  for (std::size_t i = 0; i < temporal.size(); ++i) {
    CHECK(temporal.values()[i] == with_missing.values()[i]);
  }

  // Sum commutes with the branch order.
  Tensor spatial = encoder::encode_spatial(ctx, params, grid, 11);
  Tensor obs = encoder::encode_observation(ctx, params, grid, 21, 6, 11);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    CHECK(obs.values()[i] ==
          doctest::Approx(temporal.values()[i] + spatial.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("gradients reach all encoder tables simultaneously") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 5);
  const std::vector<int> slots{3, 17};
  const std::vector<int> dows{1, 5};
  const std::vector<int> locs{7, 42};
  auto forward = [&](nn::Tape* tape) {
    nn::ExecContext ctx{tape, false, nullptr, nullptr};
    Tensor out = encoder::encode_observations(ctx, params, grid, slots, dows, locs);
    return nn::reduce_sum(tape, nn::gelu(tape, out));
  };
  std::vector<Tensor> tables = params.parameters();
  CHECK(nn::finite_diff_check(forward, tables, 1e-5, 12, 9) < 1e-4);

  nn::zero_grads(tables);
  nn::Tape tape;
  tape.backward(forward(&tape));
  auto grad_mass = [](const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    double total = 0.0;
    for (double g : t.grad()) total += std::abs(g);
    return total;
  };
  CHECK(grad_mass(params.e_tod) > 0.0);
  CHECK(grad_mass(params.e_dow) > 0.0);
  CHECK(grad_mass(params.e_loc) > 0.0);
  CHECK(grad_mass(params.w_coord) > 0.0);
}

TEST_CASE("missing locations leave spatial parameters without gradient") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 6);
  const std::vector<int> slots{5, 6, 7};
  const std::vector<int> dows{0, 0, 0};
  const std::vector<int> locs{data::kMissing, data::kMissing, data::kMissing};

  std::vector<Tensor> all = params.parameters();
  nn::zero_grads(all);
  nn::Tape tape;
  nn::ExecContext ctx{&tape, false, nullptr, nullptr};
  Tensor out = encoder::encode_observations(ctx, params, grid, slots, dows, locs);
  tape.backward(nn::reduce_sum(&tape, out));

  auto grad_mass = [](const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    double total = 0.0;
    for (double g : t.grad()) total += std::abs(g);
    return total;
  };
  CHECK(grad_mass(params.e_loc) == 0.0);
  CHECK(grad_mass(params.w_coord) == 0.0);
  CHECK(grad_mass(params.b_coord) == 0.0);
  CHECK(grad_mass(params.p_spatial) == 0.0);
  CHECK(grad_mass(params.e_tod) > 0.0);
}

TEST_CASE("encodings stay finite over the whole index range") {
  data::GridSpec grid{9, 9};
  auto params = small_params(grid, 7);
  nn::ExecContext ctx;
  for (int slot = 0; slot < 48; ++slot) {
    for (int dow = 0; dow < 7; ++dow) {
      Tensor t = encoder::encode_temporal(ctx, params, slot, dow);
      for (double v : t.values()) CHECK(std::isfinite(v));
    }
  }
  for (int id = data::kMissing; id < grid.vocabulary_size(); ++id) {
    Tensor s = encoder::encode_spatial(ctx, params, grid, id);
    for (double v : s.values()) CHECK(std::isfinite(v));
  }
}
