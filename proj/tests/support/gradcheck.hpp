// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "tagfex/core/rng.hpp"
#include "tagfex/core/types.hpp"

namespace tagfex::gradcheck {

/// Central finite difference along one coordinate of `x`, with `f` re-run
/// from scratch at each evaluation.
inline Scalar central_diff(const std::function<Scalar()>& f, Scalar& x, Scalar step = 1e-4) {
  const Scalar saved = x;
  x = saved + step;
  const Scalar fp = f();
  x = saved - step;
  const Scalar fm = f();
  x = saved;
  return (fp - fm) / (2 * step);
}

struct Coord {
  Eigen::Index row;
  Eigen::Index col;
};

inline std::vector<Coord> sample_coords(const Matrix& m, int count, Rng& rng) {
  std::vector<Coord> out;
  for (int i = 0; i < count; ++i) {
    out.push_back({rng.uniform_int(static_cast<int>(m.rows())),
                   rng.uniform_int(static_cast<int>(m.cols()))});
  }
  return out;
}

/// Compares analytic gradients against central differences on the given
/// coordinates. Returns the worst relative error observed; absolute
/// disagreements below `abs_floor` count as exact (covers coordinates whose
/// true gradient is zero, where the difference is pure rounding noise).
inline Scalar max_rel_err(const std::function<Scalar()>& f, Matrix& values, const Matrix& grads,
                          const std::vector<Coord>& coords, Scalar step = 1e-4,
                          Scalar abs_floor = 1e-8) {
  Scalar worst = 0;
  for (const Coord& c : coords) {
    const Scalar fd = central_diff(f, values(c.row, c.col), step);
    const Scalar an = grads(c.row, c.col);
    if (std::abs(fd - an) <= abs_floor) continue;
    const Scalar denom = std::max(std::abs(fd), std::abs(an));
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

inline Matrix random_matrix(int rows, int cols, Rng& rng, Scalar scale = 1.0) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline FeatureMap random_map(int dim, int batch, int h, int w, Rng& rng, Scalar scale = 1.0) {
  FeatureMap f(dim, batch, h, w);
  f.v = random_matrix(dim, batch * h * w, rng, scale);
  return f;
}

}  // namespace tagfex::gradcheck
