// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tagfex/core/types.hpp"

namespace tagfex::ssl {

struct InfoNceGrad {
  Scalar value = 0;
  Matrix dz;   // gradient of the value w.r.t. the first view's embeddings
  Matrix dzp;  // gradient w.r.t. the second view's embeddings
};

/// Contrastive agreement score between two views of a batch.
///
/// value = (1/B) sum_i log[ exp(sim(z_i, z'_i)/tau)
///                          / sum_{j != i} exp(sim(z_i, z'_j)/tau) ]
///
/// with sim = cosine similarity. Note the literal form: negatives come from
/// the opposite view only and the positive pair is excluded from the
/// denominator. The training loss is the negative of this value.
Scalar infonce(const Matrix& z, const Matrix& zp, Scalar tau);
InfoNceGrad infonce_with_grad(const Matrix& z, const Matrix& zp, Scalar tau);

/// 2B-view variant: all 2B embeddings attend to the other 2B-1, positives are
/// the cross-view partners. Offered as a configuration switch.
Scalar infonce_symmetric(const Matrix& z, const Matrix& zp, Scalar tau);
InfoNceGrad infonce_symmetric_with_grad(const Matrix& z, const Matrix& zp, Scalar tau);

}  // namespace tagfex::ssl
