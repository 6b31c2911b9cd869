// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: incremental training runs, the ablation grid, report
// re-emission and post-hoc pruning.
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "tagfex/exp/trainer.hpp"

namespace {

void print_metrics(const tagfex::exp::Trainer& trainer) {
  std::printf("stage  accuracy  params_inference\n");
  for (const auto& s : trainer.stages()) {
    std::printf("%5d  %8.4f  %16lld\n", s.task, s.accuracy,
                static_cast<long long>(s.params_inference));
  }
  if (!trainer.stages().empty()) {
    double sum = 0;
    for (const auto& s : trainer.stages()) sum += s.accuracy;
    std::printf("avg %.4f  last %.4f\n", sum / trainer.stages().size(),
                trainer.stages().back().accuracy);
  }
}

int run_one(tagfex::exp::ExperimentConfig cfg, const std::string& out_dir) {
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  tagfex::exp::Trainer trainer(std::move(cfg));
  trainer.run();
  std::printf("run complete: %s\n", trainer.run_dir().c_str());
  print_metrics(trainer);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning with a continually self-supervised "
               "task-agnostic model, merge-attention fusion and knowledge transfer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double rate = 0.4;

  CLI::App* cmd_run = app.add_subcommand("run", "train one configuration end to end");
  cmd_run->add_option("--config", config_path, "experiment config file")->required();
  cmd_run->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  cmd_run->add_option("--out", out_dir, "output directory (default from config or "
                                        "$TAGFEX_OUTPUT_ROOT)");

  CLI::App* cmd_ablate = app.add_subcommand(
      "ablate", "run the component grid plus the plain expansion baseline");
  cmd_ablate->add_option("--config", config_path, "base experiment config file")->required();
  cmd_ablate->add_option("--out", out_dir, "output root for the grid");

  CLI::App* cmd_analyze =
      app.add_subcommand("analyze", "re-emit metrics and CKA reports from checkpoints");
  cmd_analyze->add_option("--run", run_dir, "existing run directory")->required();

  CLI::App* cmd_prune = app.add_subcommand("prune", "prune a finished run's extractors");
  cmd_prune->add_option("--run", run_dir, "existing run directory")->required();
  cmd_prune->add_option("--rate", rate, "target parameter-removal rate")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) {
      tagfex::exp::ExperimentConfig cfg = tagfex::exp::load_config_file(config_path);
      if (seed_set) cfg.seed = seed;
      return run_one(std::move(cfg), out_dir);
    }
    if (cmd_ablate->parsed()) {
      const tagfex::exp::ExperimentConfig base = tagfex::exp::load_config_file(config_path);
      const std::string root =
          out_dir.empty()
              ? (base.output_dir.empty() ? tagfex::exp::default_output_root() + "/ablation"
                                         : base.output_dir)
              : out_dir;
      for (auto& [name, cfg] : tagfex::exp::ablation_matrix(base)) {
        std::printf("=== %s ===\n", name.c_str());
        run_one(cfg, root + "/" + name);
      }
      return 0;
    }
    if (cmd_analyze->parsed()) {
      tagfex::exp::analyze_run(run_dir);
      std::printf("re-emitted reports for %s\n", run_dir.c_str());
      return 0;
    }
    if (cmd_prune->parsed()) {
      tagfex::exp::prune_run(run_dir, rate);
      std::printf("pruned %s at rate %g\n", run_dir.c_str(), rate);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
