// SPDX-License-Identifier: Apache-2.0
#include "tagfex/exp/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "tagfex/analysis/cka.hpp"
#include "tagfex/analysis/metrics.hpp"
#include "tagfex/data/augment.hpp"
#include "tagfex/data/collision.hpp"
#include "tagfex/nn/optimizer.hpp"
#include "tagfex/prune/fpgm.hpp"

namespace tagfex::exp {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt(Scalar v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::int64_t param_count(const std::vector<nn::Param*>& params) {
  std::int64_t n = 0;
  for (const nn::Param* p : params) n += p->value.size();
  return n;
}

/// Cross-entropy restricted to a column subset; the gradient is scattered
/// back into a full-size matrix.
nn::CrossEntropyResult subset_ce(const Matrix& logits, const std::vector<int>& labels,
                                 const std::vector<int>& cols) {
  Matrix sub(logits.rows(), static_cast<Eigen::Index>(cols.size()));
  std::vector<int> sub_labels;
  for (size_t j = 0; j < cols.size(); ++j) {
    sub.col(static_cast<Eigen::Index>(j)) = logits.col(cols[j]);
    sub_labels.push_back(labels[static_cast<size_t>(cols[j])]);
  }
  nn::CrossEntropyResult r = nn::softmax_cross_entropy(sub, sub_labels);
  Matrix full = Matrix::Zero(logits.rows(), logits.cols());
  for (size_t j = 0; j < cols.size(); ++j) {
    full.col(cols[j]) = r.dlogits.col(static_cast<Eigen::Index>(j));
  }
  r.dlogits = std::move(full);
  return r;
}

void load_param(const io::Checkpoint& ck, nn::Param& p, const std::string& prefix = "") {
  const Matrix& m = ck.get(prefix + p.name);
  p.value = m;
  p.grad = Matrix::Zero(m.rows(), m.cols());
  p.momentum = Matrix::Zero(m.rows(), m.cols());
}

void store_module(io::Checkpoint& ck, std::vector<nn::Param*> params,
                  const std::string& prefix = "") {
  for (const nn::Param* p : params) ck.put(prefix + p->name, p->value);
}

}  // namespace

Trainer::Trainer(ExperimentConfig cfg) : cfg_(std::move(cfg)) { validate_config(cfg_); }

bool Trainer::merge_active(int t) const {
  return cfg_.merge_enabled() && (t > 0 || cfg_.ablation.t0_merge_enabled);
}

bool Trainer::ta_loss_active() const {
  return cfg_.ta_enabled() && cfg_.loss_weights.lambda_ta > 0;
}

void Trainer::prepare() {
  if (prepared_) return;
  if (cfg_.dataset.kind == "collision") {
    const std::uint64_t data_seed = derive_seed(cfg_.seed, "data");
    train_tasks_ = data::generate_collision_dataset(cfg_.dataset.collision, data_seed);
    test_tasks_ = data::generate_collision_test_set(cfg_.dataset.collision, data_seed);
    const int total = 2 * cfg_.dataset.collision.classes_per_task;
    class_order_.resize(static_cast<size_t>(total));
    std::iota(class_order_.begin(), class_order_.end(), 0);
  } else {
    const data::DatasetDir dir = data::load_dataset_dir(cfg_.dataset.path);
    data::SplitResult train = data::make_splits(cfg_.dataset.split, dir.train);
    data::SplitResult test = data::make_splits(cfg_.dataset.split, dir.test);
    train_tasks_ = std::move(train.tasks);
    test_tasks_ = std::move(test.tasks);
    class_order_ = std::move(train.class_order);
  }
  require(train_tasks_.size() == test_tasks_.size(), "prepare: split mismatch across splits");
  require(cfg_.backbone.input_size == train_tasks_.front().height &&
              cfg_.backbone.in_channels == train_tasks_.front().channels,
          "prepare: backbone input shape does not match the dataset");

  set_ = std::make_unique<model::ExpandedModelSet>(cfg_.backbone,
                                                   derive_seed(cfg_.seed, "model"));
  memory_ = std::make_unique<data::RehearsalMemory>(cfg_.rehearsal_capacity);
  setup_output_dir();
  prepared_ = true;
}

void Trainer::setup_output_dir() {
  run_dir_ = cfg_.output_dir.empty()
                 ? default_output_root() + "/run-s" + std::to_string(cfg_.seed)
                 : cfg_.output_dir;
  fs::create_directories(run_dir_);
  io::atomic_write_text(run_dir_ + "/config.json", config_to_json(cfg_).dump(2) + "\n");
}

void Trainer::build_pool(int t) {
  const data::TaskDataset& task = train_tasks_[static_cast<size_t>(t)];
  std::vector<Matrix> mem_images;
  std::vector<int> mem_labels;
  memory_->append_to_pool(mem_images, mem_labels);

  pool_ = data::TaskDataset{};
  pool_.task_index = t;
  pool_.channels = task.channels;
  pool_.height = task.height;
  pool_.width = task.width;
  pool_.class_set = set_->seen_classes;
  pool_.images.resize(task.images.rows(),
                      task.images.cols() + static_cast<Eigen::Index>(mem_images.size()));
  pool_.images.leftCols(task.images.cols()) = task.images;
  pool_.labels = task.labels;
  for (size_t i = 0; i < mem_images.size(); ++i) {
    pool_.images.col(task.images.cols() + static_cast<Eigen::Index>(i)) = mem_images[i];
    pool_.labels.push_back(mem_labels[i]);
  }
  pool_current_count_ = task.size();
}

void Trainer::start_task(int t) {
  require(prepared_, "start_task: call prepare() first");
  require(t == next_task_, "start_task: tasks must run in order");
  set_->begin_task(train_tasks_[static_cast<size_t>(t)].class_set);

  if (cfg_.ta_enabled()) {
    if (!ta_) {
      ta_ = std::make_unique<ssl::TaskAgnosticState>(cfg_.backbone, cfg_.ssl,
                                                     derive_seed(cfg_.seed, "ta"));
    } else if (!cfg_.continual_ta() && t > 0) {
      ta_->reinitialize(t);
    }
  }

  if (merge_active(t)) {
    // The block is re-initialized per task: it fuses the fresh extractor's
    // feature space. The merge classifier persists and expands like the
    // main classifier.
    merge_ = std::make_unique<attn::MergeAttentionBlock>(
        cfg_.backbone.feature_dim(), cfg_.merge.heads,
        derive_seed(cfg_.seed, "merge", static_cast<std::uint64_t>(t)));
    const int new_classes = static_cast<int>(train_tasks_[static_cast<size_t>(t)].class_set.size());
    if (!merge_cls_) {
      merge_cls_ = std::make_unique<model::ExpandableClassifier>(
          "mcls", set_->seen_class_count(), cfg_.backbone.feature_dim(),
          derive_seed(cfg_.seed, "mcls"));
    } else {
      merge_cls_->expand(new_classes, 0);
    }
  }

  // Fresh optimizer state each task.
  std::vector<nn::Param*> live;
  collect_live_params(live);
  for (nn::Param* p : live) {
    p->momentum.setZero();
    p->grad.setZero();
  }
  build_pool(t);
}

std::vector<int> Trainer::epoch_indices(int t, int epoch) const {
  std::vector<int> order(static_cast<size_t>(pool_.size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg_.seed, "batch", static_cast<std::uint64_t>(t),
                      static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

std::vector<nn::Param*> Trainer::active_params(int t) {
  std::vector<nn::Param*> params;
  set_->collect_trainable(params);
  if (merge_ && merge_active(t) && cfg_.loss_weights.lambda_mcls > 0) {
    merge_->collect(params);
    merge_cls_->collect(params);
  }
  if (ta_ && ta_loss_active()) {
    ta_->collect_trainable(params, t > 0 && cfg_.continual_ta());
  }
  return params;
}

void Trainer::collect_live_params(std::vector<nn::Param*>& out) const {
  set_->collect_trainable(out);
  for (auto& f : set_->frozen) f.collect(out);
  if (merge_) merge_->collect(out);
  if (merge_cls_) merge_cls_->collect(out);
  if (ta_) {
    ta_->current.collect(out);
    ta_->predictor.collect(out);
    if (ta_->previous) ta_->previous->collect(out);
  }
}

LossBreakdown Trainer::train_step(int t, int epoch, const std::vector<int>& batch, Scalar lr) {
  require(batch.size() >= 2, "train_step: batch must hold at least two samples");
  LossBreakdown out;
  const FeatureMap images = pool_.gather(batch);
  const int bsz = images.batch;

  std::vector<int> rows;
  std::vector<int> current_cols;
  rows.reserve(batch.size());
  const std::vector<int>& task_classes = set_->task_classes.back();
  for (size_t i = 0; i < batch.size(); ++i) {
    const int label = pool_.labels[static_cast<size_t>(batch[i])];
    rows.push_back(set_->class_row(label));
    if (std::binary_search(task_classes.begin(), task_classes.end(), label)) {
      current_cols.push_back(static_cast<int>(i));
    }
  }

  const std::vector<nn::Param*> params = active_params(t);
  nn::SgdOptimizer::zero_grad(params);

  // --- task-agnostic model: contrastive views, optional predictive term ---
  if (ta_ && ta_loss_active()) {
    std::vector<int> ta_cols;
    if (cfg_.ablation.ta_current_task_only) {
      ta_cols = current_cols;
    } else {
      ta_cols.resize(batch.size());
      std::iota(ta_cols.begin(), ta_cols.end(), 0);
    }
    if (ta_cols.size() >= 2) {
      FeatureMap va(images.dim(), static_cast<int>(ta_cols.size()), images.height, images.width);
      FeatureMap vb = va;
      for (size_t j = 0; j < ta_cols.size(); ++j) {
        const int col = ta_cols[j];
        const std::uint64_t aug_seed =
            derive_seed(cfg_.seed, "aug", static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(batch[static_cast<size_t>(col)]));
        const data::AugmentedPair pair =
            data::two_view_augment(images.sample(col), images.height, images.width,
                                   cfg_.augment, aug_seed, batch[static_cast<size_t>(col)]);
        va.sample(static_cast<int>(j)) = pair.view_a;
        vb.sample(static_cast<int>(j)) = pair.view_b;
      }
      const bool incremental = t > 0 && cfg_.continual_ta() && ta_->has_snapshot();
      const ssl::TaLossResult ta_res = ssl::ta_loss_backward(*ta_, va, vb, incremental);
      out.ta = ta_res.value;
      if (cfg_.loss_weights.lambda_ta != 1.0) {
        std::vector<nn::Param*> ta_params;
        ta_->collect_trainable(ta_params, incremental);
        for (nn::Param* p : ta_params) p->grad *= cfg_.loss_weights.lambda_ta;
      }
    }
  }

  // --- expanded inference model: classification over concatenated features ---
  model::ExpandedModelSet::TrainForward fwd = set_->concat_train(images);
  const Matrix logits = set_->classifier->logits_train(fwd.concat);
  nn::CrossEntropyResult ce = nn::softmax_cross_entropy(logits, rows);
  out.cls = ce.loss;
  Matrix dlogits = std::move(ce.dlogits);

  Matrix daux;
  if (t > 0) {
    std::vector<int> aux_labels;
    aux_labels.reserve(batch.size());
    for (int idx : batch) {
      aux_labels.push_back(set_->aux->remap_label(pool_.labels[static_cast<size_t>(idx)],
                                                  set_->seen_classes));
    }
    const Matrix aux_logits = set_->aux->logits_train(fwd.current.pooled);
    const nn::CrossEntropyResult ce_aux = nn::softmax_cross_entropy(aux_logits, aux_labels);
    out.aux = ce_aux.loss;
    daux = set_->aux->backward(ce_aux.dlogits);
  }

  // --- merge attention teacher ---
  FeatureMap dmap;
  Matrix teacher_logits;
  const bool m_active = merge_ && merge_active(t);
  if (m_active) {
    const FeatureMap ta_map = ta_->current.backbone.forward_eval(images).map;
    const FeatureMap merged = merge_->forward_train(fwd.current.map, ta_map);
    const Matrix gap = merged.pooled();
    const Matrix mlogits = merge_cls_->logits_train(gap);
    nn::CrossEntropyResult ce_m =
        cfg_.ablation.mcls_current_task_only && !current_cols.empty()
            ? subset_ce(mlogits, rows, current_cols)
            : nn::softmax_cross_entropy(mlogits, rows);
    out.mcls = ce_m.loss;
    if (cfg_.loss_weights.lambda_mcls > 0) {
      const Matrix dml = cfg_.loss_weights.lambda_mcls * ce_m.dlogits;
      const Matrix dgap = merge_cls_->backward(dml);
      FeatureMap dmerged(merged.dim(), merged.batch, merged.height, merged.width);
      const Scalar inv_n = 1.0 / static_cast<Scalar>(merged.positions());
      for (int b = 0; b < bsz; ++b) {
        dmerged.sample(b).colwise() = (dgap.col(b) * inv_n).eval();
      }
      dmap = merge_->backward(dmerged);
    }
    teacher_logits = mlogits;
  }

  // --- knowledge transfer: merged teacher into the inference classifier ---
  if (m_active && cfg_.transfer_enabled()) {
    Matrix teacher = teacher_logits;
    Matrix student = logits;
    std::vector<int> cols;
    if (cfg_.ablation.transfer_current_task_only && !current_cols.empty()) {
      cols = current_cols;
      Matrix tsub(teacher.rows(), static_cast<Eigen::Index>(cols.size()));
      Matrix ssub(student.rows(), static_cast<Eigen::Index>(cols.size()));
      for (size_t j = 0; j < cols.size(); ++j) {
        tsub.col(static_cast<Eigen::Index>(j)) = teacher.col(cols[j]);
        ssub.col(static_cast<Eigen::Index>(j)) = student.col(cols[j]);
      }
      teacher = std::move(tsub);
      student = std::move(ssub);
    }
    model::TransferResult tr;
    if (cfg_.ablation.transfer_current_task_support) {
      const int count = static_cast<int>(task_classes.size());
      tr = model::transfer_loss_restricted(teacher, student,
                                           set_->seen_class_count() - count, count);
    } else {
      tr = model::transfer_loss(teacher, student);
    }
    out.trans = tr.loss;
    if (!cols.empty()) {
      for (size_t j = 0; j < cols.size(); ++j) {
        dlogits.col(cols[j]) += tr.dstudent.col(static_cast<Eigen::Index>(j));
      }
    } else {
      dlogits += tr.dstudent;
    }
  }

  const Matrix dconcat = set_->classifier->backward(dlogits);
  set_->backward_current(dconcat, dmap, daux);

  nn::SgdOptimizer opt(cfg_.optimizer.momentum, cfg_.optimizer.weight_decay);
  opt.step(params, lr);
  return out;
}

void Trainer::record_epoch(int t, int epoch) {
  if (!merge_ || !merge_active(t) || !ta_) return;
  if (epoch % cfg_.merge.record_interval != 0 &&
      epoch != cfg_.optimizer.epochs_per_task - 1) {
    return;
  }
  const data::TaskDataset& task = train_tasks_[static_cast<size_t>(t)];
  const int n = std::min(cfg_.merge.probe_batch, task.size());
  if (n < 1) return;
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const FeatureMap probe = task.gather(idx);
  const FeatureMap ts_map = set_->current().forward_eval(probe).map;
  const FeatureMap ta_map = ta_->current.backbone.forward_eval(probe).map;
  std::vector<Matrix> maps;
  merge_->forward_eval(ts_map, ta_map, &maps);
  const attn::AttentionRecord rec = attn::record_attention(t, epoch, maps);
  attn::save_attention_record(rec, run_dir_ + "/attn_t" + std::to_string(t) + "_e" +
                                        std::to_string(epoch));
  mass_rows_.push_back({t, epoch, rec.task_agnostic_mass()});
}

void Trainer::finish_task(int t) {
  if (ta_ && cfg_.continual_ta()) ta_->end_task_snapshot(t + 1);

  if (memory_->capacity() > 0) {
    memory_->rebalance(train_tasks_[static_cast<size_t>(t)], [this](const FeatureMap& b) {
      return set_->current().forward_eval(b).pooled;
    });
  }

  if (cfg_.ablation.prune) {
    const prune::PruningPlan plan =
        prune::build_plan(set_->current(), cfg_.ablation.prune_target_rate);
    prune::save_plan(plan, run_dir_ + "/prune_plan_t" + std::to_string(t));
    prune_extractor(set_->extractor_count() - 1, plan);
  }

  StageRecord rec;
  rec.task = t;
  rec.accuracy = evaluate_stage(t, &rec.per_task_accuracy);
  rec.params_inference = set_->inference_parameter_count();
  rec.params_training = training_parameter_count();
  if (set_->extractor_count() >= 2) {
    const analysis::CkaReport cka = stage_cka(t);
    analysis::save_cka_report(cka, run_dir_ + "/cka_t" + std::to_string(t));
    rec.cka_mean_off_diagonal = cka.mean_off_diagonal;
  }
  stages_.push_back(std::move(rec));

  emit_metrics();
  emit_attention_mass();
  next_task_ = t + 1;
  save_checkpoint(t);
}

void Trainer::prune_extractor(int index, const prune::PruningPlan& plan) {
  const bool is_current = index == set_->extractor_count() - 1;
  nn::ConvBackbone& target = is_current ? set_->current()
                                        : set_->frozen[static_cast<size_t>(index)];
  const int old_dim = target.spec().feature_dim();
  int offset = 0;
  for (int i = 0; i < index; ++i) offset += set_->extractor_dims[static_cast<size_t>(i)];

  nn::ConvBackbone pruned = prune::apply_plan(target, plan);
  const std::vector<int> kept =
      prune::kept_indices(old_dim, plan.layers.back().filters);

  auto slice_cols = [&](nn::Param& p) {
    const Eigen::Index tail = p.value.cols() - offset - old_dim;
    Matrix next(p.value.rows(), offset + static_cast<Eigen::Index>(kept.size()) + tail);
    next.leftCols(offset) = p.value.leftCols(offset);
    for (size_t j = 0; j < kept.size(); ++j) {
      next.col(offset + static_cast<Eigen::Index>(j)) = p.value.col(offset + kept[j]);
    }
    if (tail > 0) next.rightCols(tail) = p.value.rightCols(tail);
    p.value = std::move(next);
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    p.momentum = Matrix::Zero(p.value.rows(), p.value.cols());
  };
  slice_cols(set_->classifier->weight);

  if (is_current) {
    set_->replace_current(std::move(pruned));
  } else {
    set_->replace_frozen(index, std::move(pruned));
  }
}

std::int64_t Trainer::training_parameter_count() {
  std::vector<nn::Param*> params;
  collect_live_params(params);
  std::int64_t n = 0;
  for (const nn::Param* p : params) n += p->value.size();
  if (ta_ && ta_->previous) {  // the frozen snapshot is storage, not training state
    std::vector<nn::Param*> prev;
    ta_->previous->collect(prev);
    n -= param_count(prev);
  }
  return n;
}

Scalar Trainer::evaluate_stage(int up_to_task, std::vector<Scalar>* per_task) const {
  require(set_ && set_->classifier, "evaluate_stage: no model");
  if (per_task) per_task->clear();
  std::int64_t correct_total = 0, count_total = 0;
  for (int ti = 0; ti <= up_to_task; ++ti) {
    const data::TaskDataset& task = test_tasks_[static_cast<size_t>(ti)];
    std::int64_t correct = 0;
    for (int at = 0; at < task.size(); at += 64) {
      const int n = std::min(64, task.size() - at);
      std::vector<int> idx(static_cast<size_t>(n));
      std::iota(idx.begin(), idx.end(), at);
      const FeatureMap batch = task.gather(idx);
      const Matrix feats = set_->concat_eval(batch);
      const Matrix logits = set_->classifier->logits_eval(feats);
      for (int j = 0; j < n; ++j) {
        Eigen::Index row = 0;
        logits.col(j).maxCoeff(&row);
        if (set_->seen_classes[static_cast<size_t>(row)] ==
            task.labels[static_cast<size_t>(at + j)]) {
          ++correct;
        }
      }
    }
    if (per_task) {
      per_task->push_back(static_cast<Scalar>(correct) / std::max(1, task.size()));
    }
    correct_total += correct;
    count_total += task.size();
  }
  return static_cast<Scalar>(correct_total) / static_cast<Scalar>(std::max<std::int64_t>(1, count_total));
}

FeatureMap Trainer::cka_probe(int up_to_task) const {
  std::vector<std::pair<int, int>> entries;
  for (int ti = 0; ti <= up_to_task; ++ti) {
    for (int i = 0; i < test_tasks_[static_cast<size_t>(ti)].size(); ++i) {
      entries.emplace_back(ti, i);
    }
  }
  Rng rng(derive_seed(cfg_.seed, "cka_probe", static_cast<std::uint64_t>(up_to_task)));
  rng.shuffle(entries);
  const int n = std::min<int>(cfg_.cka_probe_size, static_cast<int>(entries.size()));
  entries.resize(static_cast<size_t>(n));

  const data::TaskDataset& ref = test_tasks_.front();
  FeatureMap probe(ref.channels, n, ref.height, ref.width);
  for (int j = 0; j < n; ++j) {
    const auto [ti, i] = entries[static_cast<size_t>(j)];
    const FeatureMap one = test_tasks_[static_cast<size_t>(ti)].gather({i});
    probe.sample(j) = one.sample(0);
  }
  return probe;
}

Matrix Trainer::extractor_probe_features(const nn::ConvBackbone& extractor,
                                         const FeatureMap& probe) const {
  return extractor.forward_eval(probe).pooled.transpose();
}

analysis::CkaReport Trainer::stage_cka(int t) const {
  const FeatureMap probe = cka_probe(t);
  std::vector<Matrix> features;
  for (const auto& f : set_->frozen) features.push_back(extractor_probe_features(f, probe));
  features.push_back(extractor_probe_features(set_->current(), probe));
  return analysis::cka_report(features);
}

void Trainer::emit_metrics() const {
  ordered_json j;
  j["config_hash"] = config_hash(cfg_);
  j["stages"] = ordered_json::array();
  std::vector<Scalar> accs;
  for (const StageRecord& s : stages_) {
    ordered_json e;
    e["task"] = s.task;
    e["accuracy"] = s.accuracy;
    e["per_task_accuracy"] = s.per_task_accuracy;
    e["params_inference"] = s.params_inference;
    e["params_training"] = s.params_training;
    if (s.cka_mean_off_diagonal >= 0) {
      e["cka_mean_off_diagonal"] = s.cka_mean_off_diagonal;
    } else {
      e["cka_mean_off_diagonal"] = nullptr;
    }
    j["stages"].push_back(std::move(e));
    accs.push_back(s.accuracy);
  }
  if (!accs.empty()) {
    const analysis::RunMetrics m = analysis::compute_metrics(accs);
    j["avg"] = m.avg;
    j["last"] = m.last;
  }
  io::atomic_write_text(run_dir_ + "/metrics", j.dump(2) + "\n");
}

void Trainer::emit_attention_mass() const {
  std::ostringstream out;
  for (const MassRow& r : mass_rows_) {
    out << r.task << " " << r.epoch << " " << fmt(r.mass) << "\n";
  }
  io::atomic_write_text(run_dir_ + "/attention_mass", out.str());
}

void Trainer::save_checkpoint(int t) {
  save_checkpoint_to(run_dir_ + "/ckpt_task" + std::to_string(t) + ".bin", t);
}

void Trainer::save_checkpoint_to(const std::string& path, int t) {
  io::Checkpoint ck;
  ck.meta["config_hash"] = config_hash(cfg_);
  ck.meta["config"] = config_to_json(cfg_);
  ck.meta["next_task"] = t + 1;
  ck.meta["class_order"] = class_order_;
  ck.meta["task_classes"] = set_->task_classes;
  ck.meta["extractor_dims"] = set_->extractor_dims;
  ordered_json channels = ordered_json::array();
  for (const auto& f : set_->frozen) channels.push_back(f.spec().channels);
  channels.push_back(set_->current().spec().channels);
  ck.meta["extractor_channels"] = channels;
  ck.meta["has_ta"] = ta_ != nullptr;
  ck.meta["ta_has_snapshot"] = ta_ && ta_->has_snapshot();
  ck.meta["has_merge"] = merge_ != nullptr;
  ck.meta["has_merge_classifier"] = merge_cls_ != nullptr;
  ck.meta["rng"] = {{"scheme", "derived"}, {"root_seed", cfg_.seed}};

  ck.meta["stages"] = ordered_json::array();
  for (const StageRecord& s : stages_) {
    ck.meta["stages"].push_back({{"task", s.task},
                                 {"accuracy", s.accuracy},
                                 {"per_task_accuracy", s.per_task_accuracy},
                                 {"params_inference", s.params_inference},
                                 {"params_training", s.params_training},
                                 {"cka_mean_off_diagonal", s.cka_mean_off_diagonal}});
  }
  ck.meta["attention_mass"] = ordered_json::array();
  for (const MassRow& r : mass_rows_) {
    ck.meta["attention_mass"].push_back({r.task, r.epoch, r.mass});
  }

  std::vector<nn::Param*> params;
  set_->collect_trainable(params);
  for (auto& f : set_->frozen) f.collect(params);
  store_module(ck, params);

  std::vector<std::pair<std::string, Vector*>> buffers;
  for (auto& f : set_->frozen) f.collect_buffers(buffers);
  set_->current().collect_buffers(buffers);
  if (ta_) {
    std::vector<nn::Param*> tap;
    ta_->current.collect(tap);
    ta_->predictor.collect(tap);
    store_module(ck, tap);
    ta_->current.backbone.collect_buffers(buffers);
    if (ta_->previous) {
      std::vector<nn::Param*> prev;
      ta_->previous->collect(prev);
      store_module(ck, prev, "prev:");
      std::vector<std::pair<std::string, Vector*>> prev_buffers;
      ta_->previous->backbone.collect_buffers(prev_buffers);
      for (auto& [name, vec] : prev_buffers) ck.put("prev:" + name, *vec);
    }
  }
  if (merge_) {
    std::vector<nn::Param*> mp;
    merge_->collect(mp);
    store_module(ck, mp);
  }
  if (merge_cls_) {
    std::vector<nn::Param*> mc;
    merge_cls_->collect(mc);
    store_module(ck, mc);
  }
  for (auto& [name, vec] : buffers) ck.put(name, *vec);

  ordered_json mem_meta;
  mem_meta["quota"] = memory_->per_class_quota();
  ordered_json mem_classes = ordered_json::array();
  for (const auto& [label, images] : memory_->store()) {
    mem_classes.push_back(label);
    ck.put("memory/class" + std::to_string(label), images);
  }
  mem_meta["classes"] = std::move(mem_classes);
  ck.meta["memory"] = std::move(mem_meta);

  ck.save(path);
}

void Trainer::load_state(const io::Checkpoint& ck) {
  require(prepared_, "load_state: call prepare() first");
  require(ck.meta.at("config_hash").get<std::string>() == config_hash(cfg_),
          "load_state: checkpoint was produced by a different configuration");

  set_ = std::make_unique<model::ExpandedModelSet>(cfg_.backbone,
                                                   derive_seed(cfg_.seed, "model"));
  const auto task_classes = ck.meta.at("task_classes").get<std::vector<std::vector<int>>>();
  for (const auto& classes : task_classes) set_->begin_task(classes);

  const auto channels = ck.meta.at("extractor_channels").get<std::vector<std::vector<int>>>();
  for (size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == cfg_.backbone.channels) continue;
    nn::ArchitectureSpec spec = cfg_.backbone;
    spec.channels = channels[i];
    nn::ConvBackbone rebuilt(spec, 0, "ts" + std::to_string(i));
    if (i + 1 == channels.size()) {
      set_->replace_current(std::move(rebuilt));
    } else {
      set_->replace_frozen(static_cast<int>(i), std::move(rebuilt));
    }
  }

  std::vector<nn::Param*> params;
  set_->collect_trainable(params);
  for (auto& f : set_->frozen) f.collect(params);
  for (nn::Param* p : params) load_param(ck, *p);

  std::vector<std::pair<std::string, Vector*>> buffers;
  for (auto& f : set_->frozen) f.collect_buffers(buffers);
  set_->current().collect_buffers(buffers);

  if (ck.meta.at("has_ta").get<bool>()) {
    ta_ = std::make_unique<ssl::TaskAgnosticState>(cfg_.backbone, cfg_.ssl,
                                                   derive_seed(cfg_.seed, "ta"));
    std::vector<nn::Param*> tap;
    ta_->current.collect(tap);
    ta_->predictor.collect(tap);
    for (nn::Param* p : tap) load_param(ck, *p);
    ta_->current.backbone.collect_buffers(buffers);
    if (ck.meta.at("ta_has_snapshot").get<bool>()) {
      ta_->previous = std::make_unique<ssl::TaskAgnosticModel>(ta_->current);
      std::vector<nn::Param*> prev;
      ta_->previous->collect(prev);
      for (nn::Param* p : prev) load_param(ck, *p, "prev:");
      std::vector<std::pair<std::string, Vector*>> prev_buffers;
      ta_->previous->backbone.collect_buffers(prev_buffers);
      for (auto& [name, vec] : prev_buffers) *vec = ck.get_vector("prev:" + name);
    }
  } else {
    ta_.reset();
  }

  if (ck.meta.at("has_merge").get<bool>()) {
    merge_ = std::make_unique<attn::MergeAttentionBlock>(cfg_.backbone.feature_dim(),
                                                         cfg_.merge.heads, 0);
    std::vector<nn::Param*> mp;
    merge_->collect(mp);
    for (nn::Param* p : mp) load_param(ck, *p);
  } else {
    merge_.reset();
  }
  if (ck.meta.at("has_merge_classifier").get<bool>()) {
    merge_cls_ = std::make_unique<model::ExpandableClassifier>(
        "mcls", 1, 1, derive_seed(cfg_.seed, "mcls"));
    std::vector<nn::Param*> mc;
    merge_cls_->collect(mc);
    for (nn::Param* p : mc) load_param(ck, *p);
  } else {
    merge_cls_.reset();
  }

  for (auto& [name, vec] : buffers) *vec = ck.get_vector(name);

  std::map<int, Matrix> mem;
  for (const auto& label : ck.meta.at("memory").at("classes")) {
    const int id = label.get<int>();
    mem[id] = ck.get("memory/class" + std::to_string(id));
  }
  memory_ = std::make_unique<data::RehearsalMemory>(cfg_.rehearsal_capacity);
  memory_->restore(ck.meta.at("memory").at("quota").get<int>(), std::move(mem));

  stages_.clear();
  for (const auto& s : ck.meta.at("stages")) {
    StageRecord rec;
    rec.task = s.at("task").get<int>();
    rec.accuracy = s.at("accuracy").get<Scalar>();
    rec.per_task_accuracy = s.at("per_task_accuracy").get<std::vector<Scalar>>();
    rec.params_inference = s.at("params_inference").get<std::int64_t>();
    rec.params_training = s.at("params_training").get<std::int64_t>();
    rec.cka_mean_off_diagonal = s.at("cka_mean_off_diagonal").get<Scalar>();
    stages_.push_back(std::move(rec));
  }
  mass_rows_.clear();
  for (const auto& r : ck.meta.at("attention_mass")) {
    mass_rows_.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<Scalar>()});
  }
  next_task_ = ck.meta.at("next_task").get<int>();
}

bool Trainer::try_resume() {
  for (int t = task_count() - 1; t >= 0; --t) {
    const std::string path = run_dir_ + "/ckpt_task" + std::to_string(t) + ".bin";
    if (fs::exists(path)) {
      load_state(io::Checkpoint::load(path));
      return true;
    }
  }
  return false;
}

void Trainer::run() {
  prepare();
  try_resume();
  if (next_task_ >= task_count()) {
    emit_metrics();
    emit_attention_mass();
    return;
  }
  for (int t = next_task_; t < task_count(); ++t) {
    start_task(t);
    for (int epoch = 0; epoch < cfg_.optimizer.epochs_per_task; ++epoch) {
      const Scalar lr = nn::scheduled_lr(cfg_.optimizer, epoch);
      const std::vector<int> order = epoch_indices(t, epoch);
      const size_t bs = static_cast<size_t>(cfg_.optimizer.batch_size);
      for (size_t at = 0; at + bs <= order.size(); at += bs) {
        const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(at + bs));
        train_step(t, epoch, batch, lr);
      }
      record_epoch(t, epoch);
    }
    finish_task(t);
  }
}

void analyze_run(const std::string& run_dir) {
  ExperimentConfig cfg = load_config_file(run_dir + "/config.json");
  cfg.output_dir = run_dir;
  Trainer trainer(cfg);
  trainer.prepare();

  int last = -1;
  for (int t = 0; t < trainer.task_count(); ++t) {
    const std::string path = run_dir + "/ckpt_task" + std::to_string(t) + ".bin";
    if (!fs::exists(path)) break;
    trainer.load_state(io::Checkpoint::load(path));
    if (trainer.model_set().extractor_count() >= 2) {
      const analysis::CkaReport cka = trainer.stage_cka(t);
      analysis::save_cka_report(cka, run_dir + "/cka_t" + std::to_string(t));
    }
    last = t;
  }
  require(last >= 0, "analyze: no checkpoints found in " + run_dir);
  trainer.emit_metrics();
  trainer.emit_attention_mass();
}

void prune_run(const std::string& run_dir, Scalar target_rate) {
  ExperimentConfig cfg = load_config_file(run_dir + "/config.json");
  cfg.output_dir = run_dir;
  Trainer trainer(cfg);
  trainer.prepare();

  int last = -1;
  for (int t = trainer.task_count() - 1; t >= 0; --t) {
    const std::string path = run_dir + "/ckpt_task" + std::to_string(t) + ".bin";
    if (fs::exists(path)) {
      trainer.load_state(io::Checkpoint::load(path));
      last = t;
      break;
    }
  }
  require(last >= 0, "prune: no checkpoints found in " + run_dir);

  std::ostringstream tag;
  tag << "pruned_r" << target_rate;
  const std::string out_dir = run_dir + "/" + tag.str();
  fs::create_directories(out_dir);

  model::ExpandedModelSet& set = trainer.model_set();
  const int extractors = set.extractor_count();
  for (int i = 0; i < extractors; ++i) {
    nn::ConvBackbone& target =
        i + 1 == extractors ? set.current() : set.frozen[static_cast<size_t>(i)];
    const prune::PruningPlan plan = prune::build_plan(target, target_rate);
    prune::save_plan(plan, out_dir + "/prune_plan_ts" + std::to_string(i));
    trainer.prune_extractor(i, plan);
  }

  StageRecord rec;
  rec.task = last;
  rec.accuracy = trainer.evaluate_stage(last, &rec.per_task_accuracy);
  rec.params_inference = set.inference_parameter_count();
  rec.params_training = trainer.training_parameter_count();

  ordered_json j;
  j["pruned_from"] = run_dir;
  j["target_rate"] = target_rate;
  j["task"] = rec.task;
  j["accuracy"] = rec.accuracy;
  j["per_task_accuracy"] = rec.per_task_accuracy;
  j["params_inference"] = rec.params_inference;
  io::atomic_write_text(out_dir + "/metrics", j.dump(2) + "\n");
  trainer.save_checkpoint_to(out_dir + "/ckpt_pruned.bin", last);
}

}  // namespace tagfex::exp
