// Command-line surface for the mobility-prediction pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "rhythm/data.hpp"
#include "rhythm/metrics.hpp"
#include "rhythm/model.hpp"
#include "rhythm/semantic.hpp"
#include "rhythm/serialize.hpp"
#include "rhythm/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace {

using namespace rhythm;

std::string resolve_data_path(const std::string& path) {
  if (std::filesystem::is_directory(path)) {
    return (std::filesystem::path(path) / "trajectories.csv").string();
  }
  return path;
}

std::vector<data::PredictionSample>& pick_split(data::SampleSplits& splits,
                                                const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  fail(ErrorCode::ConfigError, "unknown split: " + name);
}

struct GenerateArgs {
  int users = 20;
  int days = 30;
  double noise = 0.0;
  double dropout = 0.3;
  std::uint64_t seed = 7;
  std::string grid = "200x200";
  std::string out;
};

int run_generate(const GenerateArgs& args) {
  data::SynthConfig config;
  config.users = args.users;
  config.days = args.days;
  config.noise = args.noise;
  config.dropout = args.dropout;
  config.seed = args.seed;
  config.grid = data::GridSpec::parse(args.grid);
  std::printf("generate: users=%d days=%d noise=%g dropout=%g seed=%llu grid=%dx%d\n",
              config.users, config.days, config.noise, config.dropout,
              static_cast<unsigned long long>(config.seed), config.grid.width,
              config.grid.height);
  data::SyntheticDataset dataset = data::generate_synthetic(config);
  std::filesystem::create_directories(args.out);
  const std::string csv = (std::filesystem::path(args.out) / "trajectories.csv").string();
  const std::string sidecar = (std::filesystem::path(args.out) / "generator.json").string();
  data::write_trajectory_csv(csv, dataset.trajectories);
  data::write_generator_sidecar(sidecar, dataset);
  std::size_t observations = 0;
  for (const auto& t : dataset.trajectories) observations += t.observations.size();
  std::printf("wrote %s (%zu observations) and %s\n", csv.c_str(), observations, sidecar.c_str());
  return 0;
}

struct PromptsArgs {
  std::string data;
  std::string out;
  std::string dump_dir;
  std::string grid = "200x200";
  int dim = 64;
  std::uint64_t seed = 7;
};

int run_prompts(const PromptsArgs& args) {
  const data::GridSpec grid = data::GridSpec::parse(args.grid);
  auto trajectories = data::parse_trajectory_csv(resolve_data_path(args.data), grid);
  semantic::StubEmbedder producer(args.dim, args.seed);
  std::printf("prompts: dim=%d seed=%llu data=%s\n", args.dim,
              static_cast<unsigned long long>(args.seed), args.data.c_str());
  semantic::PrecomputeStats stats =
      semantic::precompute_cache(trajectories, grid, producer, args.out, args.dump_dir);
  std::printf("rendered %zu history prompts and %zu task prompts; cached %zu unique embeddings in %s\n",
              stats.history_prompts, stats.task_prompts, stats.unique_entries, args.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string out;
  std::string resume;
  std::string grid;
  std::string embedder;
  std::string backbone;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  bool no_ha = false, no_token = false, no_traj_info = false, no_task_desc = false;
};

int run_train(const TrainArgs& args) {
  training::TrainConfig config;
  if (!args.config_path.empty()) config = training::TrainConfig::load(args.config_path);
  if (args.seed_set) config.seed = args.seed;
  if (!args.grid.empty()) config.grid = data::GridSpec::parse(args.grid);
  if (!args.embedder.empty()) config.embedder = args.embedder;
  if (!args.backbone.empty()) config.backbone = args.backbone;
  if (args.epochs > 0) config.epochs = args.epochs;
  config.ablation.no_hierarchical_attention |= args.no_ha;
  config.ablation.no_tokenization |= args.no_token;
  config.ablation.no_traj_info |= args.no_traj_info;
  config.ablation.no_task_desc |= args.no_task_desc;

  std::printf("resolved config: %s\n", config.to_json().dump().c_str());
  auto trajectories = data::parse_trajectory_csv(resolve_data_path(args.data), config.grid);
  training::TrainOutcome outcome = training::train(config, trajectories, args.out, args.resume);
  std::printf("trained %zu steps; best val Acc@1 %.4f at epoch %d\n", outcome.loss_trace.size(),
              outcome.best_val_acc1, outcome.best_epoch);
  if (!outcome.best_checkpoint_path.empty()) {
    std::printf("checkpoints: %s (best), %s (latest)\nmetrics log: %s\n",
                outcome.best_checkpoint_path.c_str(), outcome.latest_checkpoint_path.c_str(),
                outcome.metrics_log_path.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
  int top_k = 0;
};

int run_eval(const EvalArgs& args) {
  training::LoadedCheckpoint loaded = training::load_checkpoint(args.checkpoint);
  std::printf("resolved config: %s\n", loaded.config.to_json().dump().c_str());
  auto trajectories =
      data::parse_trajectory_csv(resolve_data_path(args.data), loaded.config.grid);
  const data::ChronoSplit split = data::chronological_split(data::total_days(trajectories));
  data::SampleSplits splits = data::split_samples(trajectories, loaded.config.grid, split);
  auto& samples = pick_split(splits, args.split);
  const int top_k = args.top_k > 0 ? args.top_k : loaded.config.top_k;
  auto embedder = semantic::make_embedder(loaded.config.embedder_spec());
  metrics::PredictionReport report =
      training::evaluate(loaded.model, *embedder, samples, top_k, args.split);
  report.config_echo = loaded.config.to_json();
  report.data_fingerprint = data::dataset_fingerprint(trajectories);
  if (!args.out.empty()) write_file(args.out, report.to_json());
  std::printf("split=%s samples=%zu observed=%zu\n", args.split.c_str(), report.samples,
              report.observed_slots);
  std::printf("Acc@1 %.4f  Acc@3 %.4f  Acc@5 %.4f  MRR %.4f  DTW %.3f  BLEU %.4f\n",
              report.metrics.acc1, report.metrics.acc3, report.metrics.acc5, report.metrics.mrr,
              report.metrics.dtw_mean, report.metrics.bleu_mean);
  return 0;
}

struct BaselineArgs {
  std::string data;
  std::string split = "test";
  std::string out;
  std::string grid = "200x200";
  int top_k = 10;
};

int run_baseline(const BaselineArgs& args) {
  const data::GridSpec grid = data::GridSpec::parse(args.grid);
  auto trajectories = data::parse_trajectory_csv(resolve_data_path(args.data), grid);
  const data::ChronoSplit split = data::chronological_split(data::total_days(trajectories));
  data::SampleSplits splits = data::split_samples(trajectories, grid, split);
  auto& samples = pick_split(splits, args.split);
  metrics::FrequencyBaseline baseline =
      metrics::FrequencyBaseline::fit(trajectories, grid, split.train);
  metrics::PredictionReport report =
      training::evaluate_baseline(baseline, samples, grid, args.top_k, args.split);
  report.config_echo = {{"predictor", "frequency_baseline"},
                        {"grid", {{"width", grid.width}, {"height", grid.height}}},
                        {"top_k", args.top_k}};
  report.data_fingerprint = data::dataset_fingerprint(trajectories);
  if (!args.out.empty()) write_file(args.out, report.to_json());
  std::printf("baseline split=%s samples=%zu observed=%zu\n", args.split.c_str(), report.samples,
              report.observed_slots);
  std::printf("Acc@1 %.4f  Acc@3 %.4f  Acc@5 %.4f  MRR %.4f  DTW %.3f  BLEU %.4f\n",
              report.metrics.acc1, report.metrics.acc3, report.metrics.acc5, report.metrics.mrr,
              report.metrics.dtw_mean, report.metrics.bleu_mean);
  return 0;
}

struct GradcheckArgs {
  int dim = 16;
  std::string grid = "10x10";
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
  std::size_t coords = 24;
  std::string backbone = "frozen-random:2:4";
};

int run_gradcheck(const GradcheckArgs& args) {
  training::GradCheckSpec spec;
  spec.dim = args.dim;
  spec.grid = data::GridSpec::parse(args.grid);
  spec.seed = args.seed;
  spec.coords_per_tensor = args.coords;
  spec.backbone = args.backbone;
  std::printf("gradcheck: dim=%d grid=%s seed=%llu backbone=%s coords/tensor=%zu\n", args.dim,
              args.grid.c_str(), static_cast<unsigned long long>(args.seed),
              args.backbone.c_str(), args.coords);
  const double max_rel_err = training::end_to_end_gradcheck(spec);
  std::printf("max relative error: %.3e (tolerance %.1e)\n", max_rel_err, args.tolerance);
  if (!(max_rel_err < args.tolerance)) {
    std::fprintf(stderr, "gradient check FAILED\n");
    return 2;
  }
  std::printf("gradient check passed\n");
  return 0;
}

int run_report(const std::string& in_path) {
  metrics::PredictionReport report = metrics::PredictionReport::from_json(read_file(in_path));
  std::printf("report for split '%s': %zu samples, %zu observed slots (top-%d rankings)\n",
              report.split.c_str(), report.samples, report.observed_slots, report.top_k);
  std::printf("  Acc@1 %.4f  Acc@3 %.4f  Acc@5 %.4f\n", report.metrics.acc1, report.metrics.acc3,
              report.metrics.acc5);
  std::printf("  MRR   %.4f  DTW %.3f  BLEU %.4f (%s)\n", report.metrics.mrr,
              report.metrics.dtw_mean, report.metrics.bleu_mean, report.bleu_averaging.c_str());
  std::printf("  per-day-of-week Acc@1:\n");
  for (int d = 0; d < 7; ++d) {
    const auto& bin = report.breakdown.by_dow[d];
    if (bin.empty()) {
      std::printf("    %-9s (no data)\n", semantic::weekday_name(d));
    } else {
      std::printf("    %-9s %.4f over %d slots\n", semantic::weekday_name(d), bin.acc1(),
                  bin.count);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RHYTHM: hierarchical temporal tokenization for mobility prediction"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate synthetic routine trajectories");
  generate->add_option("--users", gen.users, "Number of synthetic users")->capture_default_str();
  generate->add_option("--days", gen.days, "Days per user (>= 8)")->capture_default_str();
  generate->add_option("--noise", gen.noise, "Per-slot detour probability in [0,1]")
      ->capture_default_str();
  generate->add_option("--dropout", gen.dropout, "Per-slot unobserved probability")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--grid", gen.grid, "Grid as WxH")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();

  PromptsArgs prompts;
  CLI::App* prompts_cmd =
      app.add_subcommand("prompts", "Render prompts and precompute the embedding cache");
  prompts_cmd->add_option("--data", prompts.data, "Trajectory CSV or dataset directory")
      ->required();
  prompts_cmd->add_option("--out", prompts.out, "Cache file to write")->required();
  prompts_cmd->add_option("--dump-prompts", prompts.dump_dir,
                          "Directory for one UTF-8 prompt file per digest");
  prompts_cmd->add_option("--grid", prompts.grid, "Grid as WxH")->capture_default_str();
  prompts_cmd->add_option("--dim", prompts.dim, "Embedding dimension")->capture_default_str();
  prompts_cmd->add_option("--seed", prompts.seed, "Stub embedder seed")->capture_default_str();

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a trajectory dataset");
  train_cmd->add_option("--config", train_args.config_path, "TrainConfig JSON file");
  train_cmd->add_option("--data", train_args.data, "Trajectory CSV or dataset directory")
      ->required();
  train_cmd->add_option("--out", train_args.out, "Directory for checkpoints and logs");
  train_cmd->add_option("--resume", train_args.resume, "Latest checkpoint to resume from");
  train_cmd->add_option("--seed", train_args.seed, "Override config seed")
      ->each([&](const std::string&) { train_args.seed_set = true; });
  train_cmd->add_option("--grid", train_args.grid, "Override grid as WxH");
  train_cmd->add_option("--embedder", train_args.embedder, "stub or cache:PATH");
  train_cmd->add_option("--backbone", train_args.backbone,
                        "identity, frozen-random:L:H, or load:PATH");
  train_cmd->add_option("--epochs", train_args.epochs, "Override epoch count");
  train_cmd->add_flag("--no-ha", train_args.no_ha, "Ablation: drop hierarchical attention");
  train_cmd->add_flag("--no-token", train_args.no_token, "Ablation: drop temporal tokenization");
  train_cmd->add_flag("--no-traj-info", train_args.no_traj_info,
                      "Ablation: drop trajectory prompt embeddings");
  train_cmd->add_flag("--no-task-desc", train_args.no_task_desc,
                      "Ablation: drop the task prompt embedding");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_args.data, "Trajectory CSV or dataset directory")
      ->required();
  eval_cmd->add_option("--split", eval_args.split, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Report JSON path");
  eval_cmd->add_option("--top-k", eval_args.top_k, "Ranking depth (default: config top_k)");

  BaselineArgs baseline_args;
  CLI::App* baseline_cmd =
      app.add_subcommand("baseline", "Evaluate the frequency baseline on a split");
  baseline_cmd->add_option("--data", baseline_args.data, "Trajectory CSV or dataset directory")
      ->required();
  baseline_cmd->add_option("--split", baseline_args.split, "train, val, or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  baseline_cmd->add_option("--out", baseline_args.out, "Report JSON path");
  baseline_cmd->add_option("--grid", baseline_args.grid, "Grid as WxH")->capture_default_str();
  baseline_cmd->add_option("--top-k", baseline_args.top_k, "Ranking depth")
      ->capture_default_str();

  GradcheckArgs grad_args;
  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "End-to-end finite-difference gradient check");
  grad_cmd->add_option("--dim", grad_args.dim, "Model dimension")->capture_default_str();
  grad_cmd->add_option("--grid", grad_args.grid, "Grid as WxH")->capture_default_str();
  grad_cmd->add_option("--seed", grad_args.seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--tolerance", grad_args.tolerance, "Max relative error allowed")
      ->capture_default_str();
  grad_cmd->add_option("--coords", grad_args.coords, "Sampled coordinates per tensor")
      ->capture_default_str();
  grad_cmd->add_option("--backbone", grad_args.backbone, "Backbone spec")->capture_default_str();

  std::string report_in;
  CLI::App* report_cmd = app.add_subcommand("report", "Pretty-print a report JSON file");
  report_cmd->add_option("--in", report_in, "Report JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0 with help text
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nRun with --help for usage.\n";
    return 1;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*prompts_cmd) return run_prompts(prompts);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*baseline_cmd) return run_baseline(baseline_args);
    if (*grad_cmd) return run_gradcheck(grad_args);
    if (*report_cmd) return run_report(report_in);
  } catch (const rhythm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
