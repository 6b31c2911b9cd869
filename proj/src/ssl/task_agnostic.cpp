// SPDX-License-Identifier: Apache-2.0
#include "tagfex/ssl/task_agnostic.hpp"

namespace tagfex::ssl {

namespace {

nn::Mlp2 make_projection(const nn::ArchitectureSpec& arch, const SslConfig& ssl,
                         std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, name + "/projection"));
  return nn::Mlp2(name + "/proj", arch.feature_dim(), ssl.hidden_dim(arch.feature_dim()),
                  ssl.projection_out, rng);
}

nn::Mlp2 make_predictor(const SslConfig& ssl, std::uint64_t seed, int task_index) {
  Rng rng(derive_seed(seed, "ta/predictor", static_cast<std::uint64_t>(task_index)));
  return nn::Mlp2("ta/pred", ssl.projection_out, ssl.projection_out, ssl.projection_out, rng);
}

FeatureMap concat_batches(const FeatureMap& a, const FeatureMap& b) {
  require(a.dim() == b.dim() && a.height == b.height && a.width == b.width,
          "concat_batches: shape mismatch");
  FeatureMap out(a.dim(), a.batch + b.batch, a.height, a.width);
  out.v.leftCols(a.v.cols()) = a.v;
  out.v.rightCols(b.v.cols()) = b.v;
  return out;
}

}  // namespace

TaskAgnosticModel::TaskAgnosticModel(const nn::ArchitectureSpec& arch, const SslConfig& ssl,
                                     std::uint64_t seed, const std::string& name)
    : backbone(arch, derive_seed(seed, name + "/backbone"), name),
      projection(make_projection(arch, ssl, seed, name)) {}

Matrix TaskAgnosticModel::project_train(const FeatureMap& images) {
  const nn::BackboneFeatures f = backbone.forward_train(images);
  return projection.forward_train(f.pooled);
}

Matrix TaskAgnosticModel::project_eval(const FeatureMap& images) const {
  const nn::BackboneFeatures f = backbone.forward_eval(images);
  return projection.forward_eval(f.pooled);
}

void TaskAgnosticModel::backward_from_projection(const Matrix& dproj) {
  const Matrix dpooled = projection.backward(dproj);
  backbone.backward(FeatureMap(), dpooled);
}

void TaskAgnosticModel::collect(std::vector<nn::Param*>& out) {
  backbone.collect(out);
  projection.collect(out);
}

TaskAgnosticState::TaskAgnosticState(const nn::ArchitectureSpec& arch_, const SslConfig& ssl,
                                     std::uint64_t seed_)
    : config(ssl),
      arch(arch_),
      seed(seed_),
      current(arch_, ssl, derive_seed(seed_, "ta/model", 0), "ta"),
      predictor(make_predictor(ssl, seed_, 0)) {}

void TaskAgnosticState::end_task_snapshot(int next_task_index) {
  previous = std::make_unique<TaskAgnosticModel>(current);
  predictor = make_predictor(config, seed, next_task_index);
}

void TaskAgnosticState::reinitialize(int task_index) {
  previous.reset();
  current = TaskAgnosticModel(arch, config, derive_seed(seed, "ta/model", task_index), "ta");
  predictor = make_predictor(config, seed, task_index);
}

void TaskAgnosticState::collect_trainable(std::vector<nn::Param*>& out, bool include_predictor) {
  current.collect(out);
  if (include_predictor) predictor.collect(out);
}

Scalar ta_loss_initial(TaskAgnosticState& state, const FeatureMap& view_a,
                       const FeatureMap& view_b) {
  const Matrix za = state.current.project_eval(view_a);
  const Matrix zb = state.current.project_eval(view_b);
  const Scalar nce = state.config.symmetric_infonce
                         ? infonce_symmetric(za, zb, state.config.temperature)
                         : infonce(za, zb, state.config.temperature);
  return -nce;
}

Scalar ta_loss_incremental(TaskAgnosticState& state, const FeatureMap& view_a,
                           const FeatureMap& view_b) {
  require(state.has_snapshot(), "ta_loss_incremental: missing previous-task snapshot");
  const Matrix za = state.current.project_eval(view_a);
  const Matrix zb = state.current.project_eval(view_b);
  const Matrix predicted = state.predictor.forward_eval(za);
  const Matrix target = state.previous->project_eval(view_a);
  const Scalar nce = state.config.symmetric_infonce
                         ? infonce_symmetric(za, zb, state.config.temperature)
                         : infonce(za, zb, state.config.temperature);
  const Scalar pred = state.config.symmetric_infonce
                          ? infonce_symmetric(predicted, target, state.config.temperature)
                          : infonce(predicted, target, state.config.temperature);
  return -nce - pred;
}

TaLossResult ta_loss_backward(TaskAgnosticState& state, const FeatureMap& view_a,
                              const FeatureMap& view_b, bool incremental) {
  if (incremental) {
    require(state.has_snapshot(), "ta_loss_backward: missing previous-task snapshot");
  }
  const int b = view_a.batch;
  const Matrix z = state.current.project_train(concat_batches(view_a, view_b));
  const Matrix za = z.leftCols(b);
  const Matrix zb = z.rightCols(b);
  const Scalar tau = state.config.temperature;

  const InfoNceGrad contrast = state.config.symmetric_infonce
                                   ? infonce_symmetric_with_grad(za, zb, tau)
                                   : infonce_with_grad(za, zb, tau);
  Matrix dza = -contrast.dz;
  const Matrix dzb = -contrast.dzp;

  TaLossResult out;
  out.contrastive = contrast.value;
  out.value = -contrast.value;

  if (incremental) {
    const Matrix predicted = state.predictor.forward_train(za);
    const Matrix target = state.previous->project_eval(view_a);  // frozen: no gradient path
    const InfoNceGrad pred = state.config.symmetric_infonce
                                 ? infonce_symmetric_with_grad(predicted, target, tau)
                                 : infonce_with_grad(predicted, target, tau);
    out.predictive = pred.value;
    out.value -= pred.value;
    dza += state.predictor.backward(-pred.dz);
  }

  Matrix dz(z.rows(), z.cols());
  dz.leftCols(b) = dza;
  dz.rightCols(b) = dzb;
  state.current.backward_from_projection(dz);
  return out;
}

}  // namespace tagfex::ssl
