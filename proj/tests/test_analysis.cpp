// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/QR>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tagfex/analysis/cka.hpp"
#include "tagfex/analysis/metrics.hpp"

using namespace tagfex;
using gradcheck::random_matrix;

TEST_CASE("cka is one on itself and under its invariance class") {
  Rng rng(1);
  const Matrix x = random_matrix(8, 3, rng);
  CHECK(analysis::linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(analysis::linear_cka(x, Matrix(2.5 * x)) == doctest::Approx(1.0).epsilon(1e-10));

  const Matrix q = Eigen::HouseholderQR<Matrix>(random_matrix(3, 3, rng)).householderQ();
  CHECK(analysis::linear_cka(x, Matrix(x * q)) == doctest::Approx(1.0).epsilon(1e-10));

  // Column permutation is a special orthogonal transform.
  Matrix perm = x;
  perm.col(0).swap(perm.col(2));
  CHECK(analysis::linear_cka(x, perm) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("cka matches the centered HSIC oracle and is symmetric") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = random_matrix(8, 3, rng);
    const Matrix y = random_matrix(8, 4, rng);
    const Scalar got = analysis::linear_cka(x, y);
    CHECK(oracle::rel_err(got, oracle::cka_hsic_loops(x, y)) < 1e-6);
    CHECK(std::abs(got - analysis::linear_cka(y, x)) < 1e-10);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0 + 1e-6);
  }
  const Matrix flat = Matrix::Ones(8, 3);
  CHECK_THROWS_AS(analysis::linear_cka(flat, flat), std::invalid_argument);
}

TEST_CASE("pairwise report has unit diagonal and averages the upper triangle") {
  Rng rng(3);
  const Matrix a = random_matrix(16, 4, rng);
  const Matrix b = random_matrix(16, 4, rng);
  const analysis::CkaReport rep = analysis::cka_report({a, a, b});
  for (int i = 0; i < 3; ++i) {
    CHECK(rep.values(i, i) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(rep.values(0, 1) == doctest::Approx(1.0).epsilon(1e-10));  // identical extractors
  CHECK(rep.values == Matrix(rep.values.transpose()));
  const Scalar expected =
      (rep.values(0, 1) + rep.values(0, 2) + rep.values(1, 2)) / 3.0;
  CHECK(rep.mean_off_diagonal == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("avg and last summarize the stage sequence") {
  const analysis::RunMetrics two = analysis::compute_metrics({0.8, 0.6});
  CHECK(two.avg == doctest::Approx(0.7));
  CHECK(two.last == doctest::Approx(0.6));

  const analysis::RunMetrics one = analysis::compute_metrics({0.9});
  CHECK(one.avg == 0.9);
  CHECK(one.last == 0.9);

  const analysis::RunMetrics flat = analysis::compute_metrics({0.5, 0.5, 0.5});
  CHECK(flat.avg == flat.last);

  CHECK_THROWS_AS(analysis::compute_metrics({}), std::invalid_argument);
}

TEST_CASE("memory budget expresses models in exemplar equivalents") {
  // Standard small residual backbone on large images: one extra model costs
  // about three hundred exemplars.
  const auto resnet = analysis::memory_budget(11176512, 2000, 3 * 224 * 224);
  CHECK(std::abs(resnet.exemplar_equivalents_per_model - 300.0) < 15.0);

  const auto none = analysis::memory_budget(11176512, 2000, 3 * 224 * 224, 0);
  CHECK(none.total_budget_exemplars == 2000.0);

  // Toy ratio: model bytes exactly ten exemplars' bytes.
  const auto toy = analysis::memory_budget(250, 100, 100, 1);
  CHECK(toy.exemplar_equivalents_per_model == doctest::Approx(10.0));
  CHECK(toy.total_budget_exemplars == doctest::Approx(110.0));

  CHECK_THROWS_AS(analysis::memory_budget(0, 1, 1), std::invalid_argument);
}
