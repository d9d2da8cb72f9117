// geotoken: generate the distance dataset, train the geo-encoded transformer
// or its baselines, and compare loss curves.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "geotoken/experiment.hpp"

namespace ex = geotoken::experiment;

int main(int argc, char** argv) {
  CLI::App app{"Spherical rotary position encoding experiment"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t n = 512;
  std::string out_path;

  auto* gen = app.add_subcommand("gen-data", "Write a seeded JSONL dataset");
  gen->add_option("--seed", seed, "Random seed")->default_val(0);
  gen->add_option("--n", n, "Number of samples")->default_val(512);
  gen->add_option("--out", out_path, "Output JSONL path")->required();

  ex::RunConfig run;
  std::string mode = "geo";
  std::string dataset_path;
  std::string checkpoint_path;
  auto* train = app.add_subcommand("train", "Train one run and write its per-epoch loss CSV");
  train->add_option("--mode", mode, "Tag source")->check(CLI::IsMember({"geo", "random", "none"}))->default_val("geo");
  train->add_option("--seed", run.seed, "Seed for data, init, shuffling and fabricated tags")->default_val(0);
  train->add_option("--epochs", run.epochs, "Training epochs")->default_val(25);
  train->add_option("--batch-size", run.batch_size, "Samples per batch")->default_val(64);
  train->add_option("--dataset", dataset_path, "JSONL dataset (generated from --seed if omitted)");
  train->add_option("--dataset-size", run.dataset_size, "Samples to generate when --dataset is omitted")
      ->default_val(512);
  train->add_option("--d-model", run.model.d_model, "Embedding width (multiple of 3)")->default_val(27);
  train->add_option("--lr", run.learning_rate, "Adam learning rate")->default_val(1e-4);
  train->add_option("--out", out_path, "Loss CSV path")->required();
  train->add_option("--checkpoint", checkpoint_path, "Write final weights here");

  std::string geo_csv, random_csv;
  auto* compare = app.add_subcommand("compare", "Compare final losses of a geo and a random run");
  compare->add_option("geo_csv", geo_csv, "Loss CSV of the geo run")->required();
  compare->add_option("random_csv", random_csv, "Loss CSV of the random run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ex::dump_dataset(seed, n, out_path);
      std::cout << "wrote " << n << " samples to " << out_path << "\n";
      return 0;
    }
    if (*train) {
      run.mode = ex::parse_tag_mode(mode);
      run.model.d_ff = 4 * run.model.d_model;
      run.output_path = out_path;
      if (!dataset_path.empty()) run.dataset_path = dataset_path;
      if (!checkpoint_path.empty()) run.checkpoint_path = checkpoint_path;
      const auto result = ex::run_training(run);
      for (const auto& r : result.epochs) {
        std::cout << "epoch " << r.epoch << " loss " << r.mean_loss << "\n";
      }
      return 0;
    }
    if (*compare) {
      const auto c = ex::compare_runs(ex::read_loss_csv(geo_csv), ex::read_loss_csv(random_csv));
      ex::print_comparison(std::cout, c);
      return c.geo_better ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
