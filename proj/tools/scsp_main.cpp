#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "scsp/scsp.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spectral-clustering soft filter pruning on LeNet-4 / MNIST"};

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double prune_rate = -1.0;
  std::size_t gap = 0;
  std::string out_dir;
  std::string mode;
  std::string data_dir;
  std::string resume;
  bool full_mnist = false;
  bool every_epoch = false;

  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Seed for init, batching and clustering");
  app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
  app.add_option("--prune-rate", prune_rate, "Fraction of groups zeroized per layer, in [0, 1)")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--gap", gap, "Epochs between pruning steps")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory for reports and checkpoint");
  app.add_option("--mode", mode, "baseline or scsp")->check(CLI::IsMember({"baseline", "scsp"}));
  app.add_option("--data-dir", data_dir, "Directory holding the MNIST IDX files");
  app.add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  app.add_flag("--full-mnist", full_mnist, "Train on all 60k training images");
  app.add_flag("--checkpoint-every-epoch", every_epoch, "Also save checkpoint_epoch_<n>.bin after each epoch");

  CLI11_PARSE(app, argc, argv);

  try {
    scsp::ExperimentConfig cfg = config_path.empty() ? scsp::ExperimentConfig{} : scsp::load_config(config_path);
    if (*seed_opt) cfg.train.seed = seed;
    if (epochs) cfg.train.epochs = epochs;
    if (prune_rate >= 0.0) cfg.prune.rate = prune_rate;
    if (gap) cfg.prune.gap = gap;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!mode.empty()) cfg.mode = mode == "baseline" ? scsp::Mode::baseline : scsp::Mode::scsp;
    if (!data_dir.empty()) cfg.data.dir = data_dir;
    if (!resume.empty()) cfg.resume_from = resume;
    if (full_mnist) cfg.data.full_mnist = true;
    if (every_epoch) cfg.checkpoint_every_epoch = true;
    if (cfg.prune.rate >= 1.0) throw scsp::ParameterError("--prune-rate must be below 1");

    const auto res = scsp::run_experiment(cfg);
    for (const auto& r : res.rows)
      std::printf("epoch %llu  loss %.4f  acc %.4f  sparsity %.4f  pruned FLOPs %.2f%%\n",
                  static_cast<unsigned long long>(r.epoch), r.train_loss, r.test_accuracy, r.sparsity_total,
                  r.pruned_flops_pct);
    std::printf("reports written to %s\n", cfg.out_dir.string().c_str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
