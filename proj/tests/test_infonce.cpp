// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tagfex/ssl/infonce.hpp"

using namespace tagfex;
using gradcheck::random_matrix;

TEST_CASE("identical views with two samples score zero") {
  Matrix z(3, 2);
  z.col(0) << 1, 1, 1;
  z.col(1) << 1, 1, 1;
  CHECK(ssl::infonce(z, z, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("orthonormal pair evaluates to one at unit temperature") {
  Matrix z(2, 2);
  z << 1, 0, 0, 1;  // columns e1, e2; similarity matrix is the identity
  CHECK(ssl::infonce(z, z, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matches the loop oracle on random unit vectors") {
  Rng rng(101);
  for (int b : {2, 3, 4}) {
    for (Scalar tau : {0.1, 0.5, 1.0}) {
      for (int rep = 0; rep < 50; ++rep) {
        Matrix z = random_matrix(6, b, rng);
        Matrix zp = random_matrix(6, b, rng);
        for (int j = 0; j < b; ++j) {
          z.col(j).normalize();
          zp.col(j).normalize();
        }
        const Scalar got = ssl::infonce(z, zp, tau);
        const Scalar want = oracle::infonce_loops(z, zp, tau);
        CHECK(oracle::rel_err(got, want) < 1e-6);
      }
    }
  }
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(102);
  for (Scalar tau : {0.1, 0.5, 1.0}) {
    for (int rep = 0; rep < 5; ++rep) {
      Matrix z = random_matrix(4, 3, rng);
      Matrix zp = random_matrix(4, 3, rng);
      const ssl::InfoNceGrad g = ssl::infonce_with_grad(z, zp, tau);
      CHECK(g.value == doctest::Approx(ssl::infonce(z, zp, tau)).epsilon(1e-12));

      auto f = [&] { return ssl::infonce(z, zp, tau); };
      CHECK(gradcheck::max_rel_err(f, z, g.dz, gradcheck::sample_coords(z, 12, rng)) < 1e-4);
      CHECK(gradcheck::max_rel_err(f, zp, g.dzp, gradcheck::sample_coords(zp, 12, rng)) < 1e-4);
    }
  }
}

TEST_CASE("symmetric variant matches its own loop oracle and finite differences") {
  Rng rng(103);
  auto sym_oracle = [](const Matrix& z, const Matrix& zp, Scalar tau) {
    const int b = static_cast<int>(z.cols());
    Matrix u(z.rows(), 2 * b);
    u << z, zp;
    auto sim = [&](int i, int j) {
      return u.col(i).dot(u.col(j)) / (u.col(i).norm() * u.col(j).norm());
    };
    Scalar acc = 0;
    for (int i = 0; i < 2 * b; ++i) {
      Scalar den = 0;
      for (int j = 0; j < 2 * b; ++j) {
        if (j != i) den += std::exp(sim(i, j) / tau);
      }
      acc += std::log(std::exp(sim(i, (i + b) % (2 * b)) / tau) / den);
    }
    return acc / (2 * b);
  };

  for (int rep = 0; rep < 10; ++rep) {
    Matrix z = random_matrix(5, 3, rng);
    Matrix zp = random_matrix(5, 3, rng);
    const Scalar got = ssl::infonce_symmetric(z, zp, 0.5);
    CHECK(oracle::rel_err(got, sym_oracle(z, zp, 0.5)) < 1e-9);

    const ssl::InfoNceGrad g = ssl::infonce_symmetric_with_grad(z, zp, 0.5);
    auto f = [&] { return ssl::infonce_symmetric(z, zp, 0.5); };
    CHECK(gradcheck::max_rel_err(f, z, g.dz, gradcheck::sample_coords(z, 10, rng)) < 1e-4);
    CHECK(gradcheck::max_rel_err(f, zp, g.dzp, gradcheck::sample_coords(zp, 10, rng)) < 1e-4);
  }
}

TEST_CASE("rejects degenerate inputs") {
  Matrix one = Matrix::Ones(3, 1);
  CHECK_THROWS_AS(ssl::infonce(one, one, 0.5), std::invalid_argument);
  Matrix z = Matrix::Ones(3, 2);
  CHECK_THROWS_AS(ssl::infonce(z, z, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ssl::infonce(z, z, -1.0), std::invalid_argument);
  Matrix with_zero = z;
  with_zero.col(1).setZero();
  CHECK_THROWS_AS(ssl::infonce(with_zero, z, 0.5), std::invalid_argument);
}
