#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clfa/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"clfa: contrastive feature alignment for multimodal sarcasm detection (toy scale)"};
  app.require_subcommand(1);

  clfa::cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset and its teacher embeddings");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes (>= 2)")->check(CLI::Range(2, 1 << 16));

  clfa::cli::TrainArgs train;
  std::string train_out;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key = value config");
  train_cmd->add_option("--config", train.config, "Config file")->required();
  auto* train_out_opt = train_cmd->add_option("--out", train_out, "Output directory (overrides output_dir)");
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Seed for training and initialization");

  clfa::cli::EvalArgs eval;
  std::string eval_csv;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "gen-data directory")->required();
  eval_cmd->add_option("--split", eval.split, "train, dev, test or all");
  auto* eval_csv_opt = eval_cmd->add_option("--csv", eval_csv, "Also write metrics to this CSV");

  clfa::cli::HeatmapArgs heat;
  auto* heat_cmd = app.add_subcommand("heatmap", "Cosine-similarity heatmap of pooled projections");
  heat_cmd->add_option("--checkpoint", heat.checkpoint, "Checkpoint file")->required();
  heat_cmd->add_option("--data", heat.data, "gen-data directory")->required();
  heat_cmd->add_option("--out", heat.out, "CSV output")->required();
  heat_cmd->add_option("--split", heat.split, "Split to draw the batch from");
  heat_cmd->add_option("--batch", heat.batch, "Batch size")->check(CLI::PositiveNumber);
  heat_cmd->add_option("--offset", heat.offset, "Index of the first sample in the split");

  clfa::cli::SweepArgs sweep;
  std::string sweep_config, sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep-alpha", "Train one model per (alpha, seed) and score on dev");
  sweep_cmd->add_option("--values", sweep.values, "Comma-separated alpha values")->required();
  sweep_cmd->add_option("--seeds", sweep.seeds, "Seed count, or a comma-separated list")->required();
  auto* sweep_config_opt = sweep_cmd->add_option("--config", sweep_config, "Base config");
  auto* sweep_out_opt = sweep_cmd->add_option("--out", sweep_out, "CSV output (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (*gen_cmd) return clfa::cli::cmd_gen_data(gen, std::cout, std::cerr);
  if (*train_cmd) {
    if (*train_out_opt) train.out_dir = train_out;
    if (*train_seed_opt) train.seed = train_seed;
    return clfa::cli::cmd_train(train, std::cout, std::cerr);
  }
  if (*eval_cmd) {
    if (*eval_csv_opt) eval.csv = eval_csv;
    return clfa::cli::cmd_eval(eval, std::cout, std::cerr);
  }
  if (*heat_cmd) return clfa::cli::cmd_heatmap(heat, std::cout, std::cerr);
  if (*sweep_cmd) {
    if (*sweep_config_opt) sweep.config = sweep_config;
    if (*sweep_out_opt) sweep.out = sweep_out;
    return clfa::cli::cmd_sweep_alpha(sweep, std::cout, std::cerr);
  }
  return 2;
}
