#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rhythm/metrics.hpp"
#include "rhythm/model.hpp"
#include "rhythm/serialize.hpp"

#include "doctest.h"

using namespace rhythm;
using nn::Tensor;

namespace {

Tensor random_matrix(int rows, int cols, std::uint64_t seed) {
  rng::SplitMix64 gen(seed);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.mutable_values()) v = gen.next_uniform(-1.0, 1.0);
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

data::PredictionSample first_sample(const data::SyntheticDataset& dataset,
                                    const data::GridSpec& grid) {
  auto samples = data::build_samples(dataset.trajectories[0], grid);
  REQUIRE(!samples.empty());
  return samples[0];
}

}  // namespace

TEST_CASE("fuse: additive identity, broadcast, ablation flags") {
  const int dim = 6;
  Tensor tokens = random_matrix(7, dim, 1);
  Tensor history_te = random_matrix(7, dim, 2);
  Tensor future = random_matrix(48, dim, 3);
  Tensor task = random_matrix(1, dim, 4);
  Tensor zero7 = Tensor::zeros(7, dim);
  Tensor zero1 = Tensor::zeros(1, dim);

  Tensor plain = model::fuse(nullptr, tokens, zero7, future, zero1);
  REQUIRE(plain.rows() == 55);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < dim; ++j) CHECK(plain.at(i, j) == tokens.at(i, j));
  }
  for (int i = 0; i < 48; ++i) {
    for (int j = 0; j < dim; ++j) CHECK(plain.at(7 + i, j) == future.at(i, j));
  }

  // Every future row shares the single task addend.
  Tensor fused = model::fuse(nullptr, tokens, history_te, future, task);
  for (int i = 0; i < 48; ++i) {
    for (int j = 0; j < dim; ++j) {
      CHECK(fused.at(7 + i, j) - future.at(i, j) == doctest::Approx(task.at(0, j)).epsilon(1e-15));
    }
  }

  // Linearity in the prompt-embedding argument.
  Tensor te_a = random_matrix(7, dim, 5);
  Tensor te_b = random_matrix(7, dim, 6);
  std::vector<double> sum_values(te_a.values().begin(), te_a.values().end());
  for (std::size_t i = 0; i < sum_values.size(); ++i) sum_values[i] += te_b.values()[i];
  Tensor te_sum(7, dim, std::move(sum_values));
  Tensor f_sum = model::fuse(nullptr, tokens, te_sum, future, task);
  Tensor f_a = model::fuse(nullptr, tokens, te_a, future, task);
  Tensor f_b = model::fuse(nullptr, tokens, te_b, future, task);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < dim; ++j) {
      CHECK(f_sum.at(i, j) ==
            doctest::Approx(f_a.at(i, j) + f_b.at(i, j) - tokens.at(i, j)).epsilon(1e-12));
    }
  }

  model::AblationFlags no_traj{.no_traj_info = true};
  Tensor ablated = model::fuse(nullptr, tokens, history_te, future, task, no_traj);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < dim; ++j) CHECK(ablated.at(i, j) == tokens.at(i, j));
  }
  model::AblationFlags no_task{.no_task_desc = true};
  Tensor ablated2 = model::fuse(nullptr, tokens, history_te, future, task, no_task);
  for (int i = 0; i < 48; ++i) {
    for (int j = 0; j < dim; ++j) CHECK(ablated2.at(7 + i, j) == future.at(i, j));
  }
}

TEST_CASE("backbone: identity passthrough, frozen-random determinism") {
  const int dim = 8;
  Tensor seq = random_matrix(10, dim, 7);

  auto identity = model::Backbone::create(model::BackboneSpec::parse("identity"), dim, 3);
  nn::ExecContext ctx;
  Tensor same = identity.forward(ctx, seq);
  CHECK(same.node().get() == seq.node().get());
  CHECK(identity.parameters().empty());

  auto spec = model::BackboneSpec::parse("frozen-random:2:2");
  auto a = model::Backbone::create(spec, dim, 11);
  auto b = model::Backbone::create(spec, dim, 11);
  Tensor out_a = a.forward(ctx, seq);
  Tensor out_b = b.forward(ctx, seq);
  for (std::size_t i = 0; i < out_a.size(); ++i) CHECK(out_a.values()[i] == out_b.values()[i]);
  CHECK(a.checksum() == b.checksum());

  auto c = model::Backbone::create(spec, dim, 12);
  CHECK(a.checksum() != c.checksum());
  for (const Tensor& p : a.parameters()) CHECK(p.frozen());
}

TEST_CASE("backbone save/load roundtrip and checksum mismatch detection") {
  const int dim = 8;
  auto spec = model::BackboneSpec::parse("frozen-random:2:2");
  auto original = model::Backbone::create(spec, dim, 21);
  const std::string path = temp_path("rhythm_backbone.rhyb");
  original.save(path);

  auto loaded = model::Backbone::create(model::BackboneSpec::parse("load:" + path), dim, 99);
  CHECK(loaded.checksum() == original.checksum());
  Tensor seq = random_matrix(5, dim, 8);
  nn::ExecContext ctx;
  Tensor out_orig = original.forward(ctx, seq);
  Tensor out_load = loaded.forward(ctx, seq);
  for (std::size_t i = 0; i < out_orig.size(); ++i) {
    CHECK(out_orig.values()[i] == out_load.values()[i]);
  }

  CHECK_THROWS_AS(
      model::Backbone::create(model::BackboneSpec::parse("load:" + path), dim + 2, 99), Error);

  // Flip one payload byte: the checksum must catch it.
  std::string blob = read_file(path);
  blob[blob.size() - 3] = static_cast<char>(blob[blob.size() - 3] ^ 0x40);
  const std::string corrupt = temp_path("rhythm_backbone_corrupt.rhyb");
  write_file(corrupt, blob);
  CHECK_THROWS_WITH_AS(
      model::Backbone::create(model::BackboneSpec::parse("load:" + corrupt), dim, 99),
      doctest::Contains("checksum"), Error);
}

TEST_CASE("predict_distribution: uniform head, shift invariance, sort oracle") {
  const int v = 40, dim = 6;
  rng::SplitMix64 gen(31);
  model::HeadParams head = model::HeadParams::init(v, dim, gen);

  std::vector<double> hidden(dim, 0.37);
  model::HeadParams zero_head = head;
  zero_head.w_o = Tensor::zeros(v, dim, true);
  zero_head.b_o = Tensor::zeros(1, v, true);
  const auto uniform = model::predict_distribution(hidden, zero_head);
  for (double p : uniform) CHECK(p == doctest::Approx(1.0 / v).epsilon(1e-12));
  double total = 0.0;
  for (double p : uniform) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  const auto probs = model::predict_distribution(hidden, head);
  model::HeadParams shifted = head;
  shifted.b_o = Tensor::zeros(1, v, true);
  {
    auto vals = shifted.b_o.mutable_values();
    for (int i = 0; i < v; ++i) vals[i] = head.b_o.values()[i] + 5.0;
  }
  const auto probs_shifted = model::predict_distribution(hidden, shifted);
  CHECK(metrics::top_k_ranking(probs, 1)[0] == metrics::top_k_ranking(probs_shifted, 1)[0]);

  // Brute-force logit sort agrees with the ranking over probabilities.
  std::vector<double> logits(v);
  for (int i = 0; i < v; ++i) {
    double acc = head.b_o.values()[i];
    for (int j = 0; j < dim; ++j) acc += head.w_o.at(i, j) * hidden[j];
    logits[i] = acc;
  }
  std::vector<int> order(v);
  for (int i = 0; i < v; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  const auto top5 = metrics::top_k_ranking(probs, 5);
  for (int i = 0; i < 5; ++i) CHECK(top5[i] == order[i]);
}

TEST_CASE("sequence loss: uniform, confident, masking oracle") {
  const int v = 30;
  Tensor uniform = Tensor::zeros(48, v);
  std::vector<int> targets(48, 3);
  CHECK(model::sequence_loss(nullptr, uniform, targets).item() ==
        doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));

  Tensor confident = Tensor::zeros(4, v);
  {
    auto vals = confident.mutable_values();
    for (int i = 0; i < 4; ++i) vals[static_cast<std::size_t>(i) * v + 7] = 40.0;
  }
  std::vector<int> sevens(4, 7);
  CHECK(model::sequence_loss(nullptr, confident, sevens).item() < 1e-9);

  // Masking: dropping one slot re-means over the remaining ones.
  Tensor logits = random_matrix(5, v, 17);
  std::vector<int> full{1, 2, 3, 4, 5};
  std::vector<int> masked{1, 2, data::kMissing, 4, 5};
  auto row_ce = [&](int row, int target) {
    double mx = logits.at(row, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(row, j));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(logits.at(row, j) - mx);
    return std::log(sum) + mx - logits.at(row, target);
  };
  const double expect_full = (row_ce(0, 1) + row_ce(1, 2) + row_ce(2, 3) + row_ce(3, 4) +
                              row_ce(4, 5)) / 5.0;
  const double expect_masked = (row_ce(0, 1) + row_ce(1, 2) + row_ce(3, 4) + row_ce(4, 5)) / 4.0;
  CHECK(model::sequence_loss(nullptr, logits, full).item() ==
        doctest::Approx(expect_full).epsilon(1e-12));
  CHECK(model::sequence_loss(nullptr, logits, masked).item() ==
        doctest::Approx(expect_masked).epsilon(1e-12));

  std::vector<int> all_missing(5, data::kMissing);
  CHECK_THROWS_AS(model::sequence_loss(nullptr, logits, all_missing), Error);
}

TEST_CASE("full model forward: shapes, determinism, trainable gradients") {
  data::SynthConfig synth;
  synth.users = 1;
  synth.days = 9;
  synth.noise = 0.2;
  synth.dropout = 0.25;
  synth.seed = 5;
  synth.grid = data::GridSpec{8, 8};
  auto dataset = data::generate_synthetic(synth);
  auto sample = first_sample(dataset, synth.grid);

  model::ModelConfig config;
  config.dim = 16;
  config.grid = synth.grid;
  config.backbone = model::BackboneSpec::parse("frozen-random:2:4");
  auto m = model::RhythmModel::create(config, 8);

  semantic::StubEmbedder embedder(config.dim, 8);
  auto embeddings = model::embeddings_for_sample(embedder, sample, synth.grid);

  nn::ExecContext ctx;
  Tensor logits_a = m.forward_logits(ctx, sample, embeddings);
  Tensor logits_b = m.forward_logits(ctx, sample, embeddings);
  CHECK(logits_a.rows() == 48);
  CHECK(logits_a.cols() == synth.grid.vocabulary_size());
  for (std::size_t i = 0; i < logits_a.size(); ++i) {
    CHECK(logits_a.values()[i] == logits_b.values()[i]);
  }

  // Gradients reach trainable parameters even through the frozen backbone.
  std::vector<Tensor> trainable = m.trainable_parameters();
  nn::zero_grads(trainable);
  nn::Tape tape;
  nn::ExecContext train_ctx{&tape, false, nullptr, nullptr};
  Tensor logits = m.forward_logits(train_ctx, sample, embeddings);
  Tensor loss = model::sequence_loss(&tape, logits, sample.targets);
  tape.backward(loss);
  double head_grad = 0.0, encoder_grad = 0.0, tokenizer_grad = 0.0;
  for (const Tensor& p : trainable) {
    if (!p.has_grad()) continue;
    double mass = 0.0;
    for (double g : p.grad()) mass += std::abs(g);
    if (p.name().rfind("head.", 0) == 0) head_grad += mass;
    if (p.name().rfind("encoder.", 0) == 0) encoder_grad += mass;
    if (p.name().rfind("tokenizer.", 0) == 0) tokenizer_grad += mass;
  }
  CHECK(head_grad > 0.0);
  CHECK(encoder_grad > 0.0);
  CHECK(tokenizer_grad > 0.0);
}

TEST_CASE("ablation paths change the computation but keep shapes") {
  data::SynthConfig synth;
  synth.users = 1;
  synth.days = 9;
  synth.dropout = 0.2;
  synth.seed = 6;
  synth.grid = data::GridSpec{6, 6};
  auto dataset = data::generate_synthetic(synth);
  auto sample = first_sample(dataset, synth.grid);

  model::ModelConfig base;
  base.dim = 8;
  base.grid = synth.grid;
  base.backbone = model::BackboneSpec::parse("identity");

  semantic::StubEmbedder embedder(base.dim, 9);
  auto embeddings = model::embeddings_for_sample(embedder, sample, synth.grid);
  nn::ExecContext ctx;

  auto full = model::RhythmModel::create(base, 10);
  Tensor full_logits = full.forward_logits(ctx, sample, embeddings);

  model::ModelConfig no_token = base;
  no_token.ablation.no_tokenization = true;
  auto nt = model::RhythmModel::create(no_token, 10);
  Tensor nt_logits = nt.forward_logits(ctx, sample, embeddings);
  CHECK(nt_logits.rows() == 48);
  CHECK(nt_logits.cols() == full_logits.cols());

  model::ModelConfig no_ha = base;
  no_ha.ablation.no_hierarchical_attention = true;
  auto nh = model::RhythmModel::create(no_ha, 10);
  CHECK(nh.tokenizer_params().intra.empty());
  CHECK(nh.tokenizer_params().inter.empty());
  Tensor nh_logits = nh.forward_logits(ctx, sample, embeddings);
  CHECK(nh_logits.rows() == 48);
}

TEST_CASE("semantic ablations zero out the corresponding contribution") {
  data::SynthConfig synth;
  synth.users = 1;
  synth.days = 9;
  synth.dropout = 0.0;
  synth.seed = 7;
  synth.grid = data::GridSpec{6, 6};
  auto dataset = data::generate_synthetic(synth);
  auto sample = first_sample(dataset, synth.grid);

  model::ModelConfig config;
  config.dim = 8;
  config.grid = synth.grid;
  config.backbone = model::BackboneSpec::parse("identity");
  config.ablation.no_traj_info = true;
  config.ablation.no_task_desc = true;
  auto m = model::RhythmModel::create(config, 11);

  semantic::StubEmbedder embedder(config.dim, 12);
  auto embeddings = model::embeddings_for_sample(embedder, sample, synth.grid);
  auto zero = embeddings;
  zero.history_te = Tensor::zeros(7, config.dim);
  zero.task_te = Tensor::zeros(1, config.dim);

  nn::ExecContext ctx;
  Tensor with_te = m.forward_logits(ctx, sample, embeddings);
  Tensor without_te = m.forward_logits(ctx, sample, zero);
  for (std::size_t i = 0; i < with_te.size(); ++i) {
    CHECK(with_te.values()[i] == without_te.values()[i]);
  }
}
