// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "tagfex/nn/layers.hpp"

namespace tagfex::nn {

struct OptimizerSpec {
  Scalar learning_rate = 0.05;
  Scalar momentum = 0.9;
  Scalar weight_decay = 5e-4;
  int epochs_per_task = 20;
  int batch_size = 32;
  bool cosine_schedule = true;
};

/// Cosine-decayed learning rate over the epochs of one task.
inline Scalar scheduled_lr(const OptimizerSpec& spec, int epoch) {
  if (!spec.cosine_schedule) return spec.learning_rate;
  const Scalar t = static_cast<Scalar>(epoch) / static_cast<Scalar>(spec.epochs_per_task);
  return spec.learning_rate * 0.5 * (1.0 + std::cos(M_PI * t));
}

/// SGD with momentum and decoupled-from-nothing classic weight decay:
/// g <- grad + wd * w;  m <- mu * m + g;  w <- w - lr * m.
class SgdOptimizer {
 public:
  SgdOptimizer(Scalar momentum, Scalar weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Param*>& params, Scalar lr) const {
    for (Param* p : params) {
      Matrix g = p->grad;
      if (weight_decay_ != 0.0) g += weight_decay_ * p->value;
      p->momentum = momentum_ * p->momentum + g;
      p->value -= lr * p->momentum;
    }
  }

  static void zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) p->zero_grad();
  }

 private:
  Scalar momentum_;
  Scalar weight_decay_;
};

}  // namespace tagfex::nn
