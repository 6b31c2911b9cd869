// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support/tiny.hpp"

using namespace tagfex;
using testing::HandWiredBaseline;
using testing::params_equal;
using testing::read_file;
using testing::tiny_config;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tagfex_" + name);
  fs::remove_all(dir);
  return dir;
}

void drive_task(exp::Trainer& trainer, int t) {
  trainer.start_task(t);
  for (int epoch = 0; epoch < trainer.config().optimizer.epochs_per_task; ++epoch) {
    const Scalar lr = nn::scheduled_lr(trainer.config().optimizer, epoch);
    const auto order = trainer.epoch_indices(t, epoch);
    const size_t bs = static_cast<size_t>(trainer.config().optimizer.batch_size);
    for (size_t at = 0; at + bs <= order.size(); at += bs) {
      trainer.train_step(t, epoch,
                         {order.begin() + static_cast<std::ptrdiff_t>(at),
                          order.begin() + static_cast<std::ptrdiff_t>(at + bs)},
                         lr);
    }
    trainer.record_epoch(t, epoch);
  }
  trainer.finish_task(t);
}

}  // namespace

TEST_CASE("identical config and seed produce byte-identical artifacts") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  exp::Trainer ta(tiny_config(3, a.string()));
  ta.run();
  exp::Trainer tb(tiny_config(3, b.string()));
  tb.run();

  for (const char* name : {"metrics", "attention_mass", "cka_t1", "attn_t0_e0", "attn_t1_e1"}) {
    INFO(name);
    CHECK(read_file((a / name).string()) == read_file((b / name).string()));
  }
  exp::Trainer tc(tiny_config(4, fresh_dir("det_c").string()));
  tc.run();
  CHECK(read_file((a / "metrics").string()) !=
        read_file((tc.run_dir() + "/metrics")));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(tc.run_dir());
}

TEST_CASE("interrupted runs resume to identical artifacts") {
  const fs::path full_dir = fresh_dir("resume_full");
  exp::Trainer full(tiny_config(5, full_dir.string()));
  full.run();

  const fs::path part_dir = fresh_dir("resume_part");
  {
    exp::Trainer first(tiny_config(5, part_dir.string()));
    first.prepare();
    drive_task(first, 0);  // stop after task 0: simulated interrupt
  }
  {
    exp::Trainer second(tiny_config(5, part_dir.string()));
    second.run();  // picks up at task 1
    CHECK(second.next_task() == second.task_count());
  }
  for (const char* name : {"metrics", "attention_mass", "cka_t1"}) {
    INFO(name);
    CHECK(read_file((full_dir / name).string()) == read_file((part_dir / name).string()));
  }

  // Resuming a finished run re-emits without retraining.
  const std::string before = read_file((part_dir / "metrics").string());
  exp::Trainer again(tiny_config(5, part_dir.string()));
  again.run();
  CHECK(read_file((part_dir / "metrics").string()) == before);

  // A different config must refuse the existing checkpoints.
  exp::ExperimentConfig other = tiny_config(5, part_dir.string());
  other.optimizer.learning_rate = 0.01;
  exp::Trainer mismatched(other);
  CHECK_THROWS_AS(mismatched.run(), std::invalid_argument);

  // Corrupted checkpoints fail cleanly.
  {
    std::ofstream truncate(part_dir / "ckpt_task1.bin", std::ios::trunc);
    truncate << "garbage";
  }
  exp::Trainer corrupt(tiny_config(5, part_dir.string()));
  CHECK_THROWS_AS(corrupt.run(), std::invalid_argument);

  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("frozen extractors and the snapshot stay bit-stable through training steps") {
  const fs::path dir = fresh_dir("freeze");
  exp::Trainer trainer(tiny_config(6, dir.string()));
  trainer.prepare();
  drive_task(trainer, 0);

  trainer.start_task(1);
  std::vector<nn::Param*> frozen_params;
  trainer.model_set().frozen[0].collect(frozen_params);
  std::vector<nn::Param*> snapshot_params;
  REQUIRE(trainer.ta_state() != nullptr);
  REQUIRE(trainer.ta_state()->previous != nullptr);
  trainer.ta_state()->previous->collect(snapshot_params);

  std::vector<Matrix> frozen_before, snap_before;
  for (auto* p : frozen_params) frozen_before.push_back(p->value);
  for (auto* p : snapshot_params) snap_before.push_back(p->value);

  const auto order = trainer.epoch_indices(1, 0);
  const std::vector<int> batch(order.begin(), order.begin() + 8);
  trainer.train_step(1, 0, batch, 0.05);

  for (size_t i = 0; i < frozen_params.size(); ++i) {
    CHECK(frozen_params[i]->value == frozen_before[i]);
  }
  for (size_t i = 0; i < snapshot_params.size(); ++i) {
    CHECK(snapshot_params[i]->value == snap_before[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("a zero task-agnostic weight freezes the task-agnostic model exactly") {
  const fs::path dir = fresh_dir("lambda0");
  exp::ExperimentConfig cfg = tiny_config(7, dir.string());
  cfg.loss_weights.lambda_ta = 0.0;
  exp::Trainer trainer(cfg);
  trainer.prepare();
  trainer.start_task(0);

  REQUIRE(trainer.ta_state() != nullptr);
  std::vector<nn::Param*> ta_params;
  trainer.ta_state()->current.collect(ta_params);
  trainer.ta_state()->predictor.collect(ta_params);
  std::vector<Matrix> before;
  for (auto* p : ta_params) before.push_back(p->value);

  const auto order = trainer.epoch_indices(0, 0);
  for (int s = 0; s < 2; ++s) {
    const std::vector<int> batch(order.begin() + 8 * s, order.begin() + 8 * (s + 1));
    const exp::LossBreakdown losses = trainer.train_step(0, 0, batch, 0.05);
    CHECK(losses.ta == 0.0);
    CHECK(losses.mcls > 0.0);  // merge teacher still trains on task-agnostic features
  }
  for (size_t i = 0; i < ta_params.size(); ++i) CHECK(ta_params[i]->value == before[i]);
  fs::remove_all(dir);
}

TEST_CASE("with the framework additions off the trainer is bitwise the reduced baseline") {
  const fs::path dir = fresh_dir("der_equiv");
  exp::ExperimentConfig cfg = tiny_config(8, dir.string());
  cfg.ablation.der_baseline = true;

  exp::Trainer trainer(cfg);
  trainer.prepare();
  HandWiredBaseline hand(cfg);

  // Task 0 in lockstep.
  drive_task(trainer, 0);
  hand.run_task(0);
  {
    std::vector<nn::Param*> a, b;
    trainer.model_set().collect_trainable(a);
    hand.model_set().collect_trainable(b);
    CHECK(params_equal(a, b));
  }

  // Three steps of task 1, compared after every update.
  trainer.start_task(1);
  hand.start_task(1);
  const auto order = trainer.epoch_indices(1, 0);
  CHECK(order == hand.epoch_indices(1, 0));
  for (int s = 0; s < 3; ++s) {
    const std::vector<int> batch(order.begin() + 8 * s, order.begin() + 8 * (s + 1));
    const exp::LossBreakdown losses = trainer.train_step(1, 0, batch, 0.05);
    hand.step(1, batch, 0.05);
    CHECK(losses.ta == 0.0);
    CHECK(losses.mcls == 0.0);
    CHECK(losses.trans == 0.0);
    std::vector<nn::Param*> a, b;
    trainer.model_set().collect_trainable(a);
    hand.model_set().collect_trainable(b);
    CHECK(params_equal(a, b));
  }
  fs::remove_all(dir);
}

TEST_CASE("flag isolation and the ablation grid") {
  const auto grid = exp::ablation_matrix(tiny_config(9, ""));
  REQUIRE(grid.size() == 5);
  CHECK(grid[0].first == "ta_merge");
  CHECK(grid[0].second.ablation.disable_continual_ta);
  CHECK(grid[0].second.ablation.disable_transfer);
  CHECK(grid[1].first == "ta_merge_transfer");
  CHECK(grid[1].second.ablation.disable_continual_ta);
  CHECK_FALSE(grid[1].second.ablation.disable_transfer);
  CHECK(grid[2].first == "continual_ta_merge");
  CHECK(grid[3].first == "continual_ta_merge_transfer");
  CHECK(grid[3].second.continual_ta());
  CHECK(grid[3].second.transfer_enabled());
  CHECK(grid[4].first == "der_baseline");
  CHECK(grid[4].second.ablation.der_baseline);

  // transfer-off configurations never touch the transfer loss
  const fs::path dir = fresh_dir("flags");
  exp::ExperimentConfig cfg = tiny_config(10, dir.string());
  cfg.ablation.disable_transfer = true;
  exp::Trainer trainer(cfg);
  trainer.prepare();
  trainer.start_task(0);
  const auto order = trainer.epoch_indices(0, 0);
  const exp::LossBreakdown losses =
      trainer.train_step(0, 0, {order.begin(), order.begin() + 8}, 0.05);
  CHECK(losses.trans == 0.0);
  CHECK(losses.mcls > 0.0);
  CHECK(losses.ta != 0.0);
  fs::remove_all(dir);
}

TEST_CASE("config parsing rejects unknown keys and inconsistent flags") {
  nlohmann::json j;
  j["seed"] = 1;
  j["unknown_key"] = true;
  CHECK_THROWS_AS(exp::parse_config(j), std::invalid_argument);

  nlohmann::json nested;
  nested["optimizer"]["learning_rte"] = 0.1;  // typo must be caught
  CHECK_THROWS_AS(exp::parse_config(nested), std::invalid_argument);

  nlohmann::json der;
  der["ablation"]["der_baseline"] = true;
  der["ablation"]["disable_merge"] = true;
  CHECK_THROWS_AS(exp::parse_config(der), std::invalid_argument);

  nlohmann::json bad_lambda;
  bad_lambda["loss_weights"]["lambda_ta"] = -1.0;
  CHECK_THROWS_AS(exp::parse_config(bad_lambda), std::invalid_argument);

  nlohmann::json ok;
  ok["optimizer"]["learning_rate"] = 0.1;
  ok["ssl"]["temperature"] = 0.2;
  const exp::ExperimentConfig cfg = exp::parse_config(ok);
  CHECK(cfg.optimizer.learning_rate == 0.1);
  CHECK(cfg.ssl.temperature == 0.2);
  CHECK(exp::config_hash(cfg) != exp::config_hash(exp::ExperimentConfig{}));
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
  const fs::path dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  io::Checkpoint ck;
  ck.meta["note"] = "roundtrip";
  Rng rng(11);
  Matrix m(7, 5);
  for (int j = 0; j < 5; ++j) {
    for (int i = 0; i < 7; ++i) m(i, j) = rng.normal() * 1e-7;
  }
  m(0, 0) = 0.1 + 0.2;  // not exactly representable; must survive unchanged
  ck.put("a/W", m);
  ck.put("b/vec", Vector(Vector::LinSpaced(4, -1.0, 1.0)));
  const std::string path = (dir / "t.bin").string();
  ck.save(path);

  const io::Checkpoint loaded = io::Checkpoint::load(path);
  CHECK(loaded.meta.at("note") == "roundtrip");
  CHECK(loaded.get("a/W") == m);
  CHECK(loaded.get_vector("b/vec") == Vector(Vector::LinSpaced(4, -1.0, 1.0)));
  CHECK_THROWS_AS(loaded.get("missing"), std::invalid_argument);

  {
    std::ofstream bad(path, std::ios::trunc | std::ios::binary);
    bad << "TFXCKPT1 but then trash";
  }
  CHECK_THROWS_AS(io::Checkpoint::load(path), std::invalid_argument);
  fs::remove_all(dir);
}
