// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "cap/errors.hpp"
#include "cap/proxy.hpp"
#include "test_support.hpp"

namespace cap {
namespace {

using testing::rand_matrix;

TEST(Proxy, PhiHasOrthonormalColumns) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ProjectionProxy p = init_proxy(16, 5, seed);
    EXPECT_LT(orthonormality_error(phi(p)), 1e-13);
  }
}

TEST(Proxy, PhiIsNearestOrthonormalMatrix) {
  // Phi(X) maximizes <X, Q> over Q with orthonormal columns, so it beats any
  // other orthonormal candidate, e.g. the Q factor of X.
  const Matrix x = rand_matrix(8, 3, 4);
  const ProjectionProxy p = init_proxy(8, 3, 1, x);
  const Matrix q = phi(p);
  Eigen::MatrixXd ex(8, 3);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j) ex(i, j) = x(i, j);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ex);
  const Eigen::MatrixXd qf = qr.householderQ() * Eigen::MatrixXd::Identity(8, 3);
  double dist_phi = 0, dist_qr = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j) {
      dist_phi += std::pow(x(i, j) - q(i, j), 2);
      dist_qr += std::pow(x(i, j) - qf(i, j), 2);
    }
  EXPECT_LE(dist_phi, dist_qr + 1e-12);
}

TEST(Proxy, WarmStartUsedVerbatim) {
  const Matrix x = rand_matrix(6, 2, 9);
  const ProjectionProxy p = init_proxy(6, 2, 3, x);
  EXPECT_EQ(p.x(), x);
  EXPECT_THROW(init_proxy(6, 2, 3, rand_matrix(5, 2, 1)), ShapeError);
}

TEST(Proxy, SeededInitIsReproducible) {
  EXPECT_EQ(init_proxy(10, 4, 42).x(), init_proxy(10, 4, 42).x());
  EXPECT_NE(init_proxy(10, 4, 42).x(), init_proxy(10, 4, 43).x());
}

TEST(Proxy, SgdStepHeavyBall) {
  ProjectionProxy p = init_proxy(3, 1, 1, Matrix(3, 1, 1.0));
  const Matrix g(3, 1, 2.0);
  sgd_step(p, g, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(p.x()(0, 0), 1.0 - 0.1 * 2.0);
  sgd_step(p, g, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(p.velocity()(1, 0), 0.5 * 2.0 + 2.0);
  EXPECT_DOUBLE_EQ(p.x()(2, 0), 0.8 - 0.1 * 3.0);
}

TEST(Proxy, OrthonormalStartIsReperturbed) {
  Matrix x(4, 2);
  x(0, 0) = 1.0;
  x(1, 1) = 1.0;
  ProjectionProxy p = init_proxy(4, 2, 5, x);
  EXPECT_FALSE(spectrum_separated(p));
  Tape tape;
  const BoundProxy b = bind_proxy(tape, p, true);
  EXPECT_TRUE(spectrum_separated(p));
  EXPECT_EQ(p.perturbations(), 1u);
  // The perturbation is tiny, so Phi barely moves.
  EXPECT_LT(max_abs(Matrix::from_tensor(tape.value(b.projection)) - x), 1e-5);
}

TEST(Proxy, DifferentiablePhiRejectsDegenerateLeaf) {
  Tape tape;
  const Var x = tape.leaf(Matrix::identity(3).to_tensor(), true);
  EXPECT_THROW(phi(tape, x), DegenerateSpectrumError);
  Tape frozen;
  EXPECT_NO_THROW(phi(frozen, frozen.leaf(Matrix::identity(3).to_tensor(), false)));
}

// d<T, Phi(X)>/dX through the tape against central differences of the
// closed-form polar factor computed by Eigen.
TEST(Proxy, ChainGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Matrix x = rand_matrix(7, 3, seed);
    const Matrix t = rand_matrix(7, 3, seed + 50);
    auto loss = [&](const Tensor4& xt) {
      Eigen::MatrixXd e(7, 3);
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j) e(i, j) = xt.at(i, j);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Eigen::MatrixXd p = svd.matrixU() * svd.matrixV().transpose();
      double s = 0;
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j) s += t(i, j) * p(i, j);
      return s;
    };
    Tape tape;
    const Var vx = tape.leaf(x.to_tensor(), true);
    const Var p = phi(tape, vx);
    const Var both = frobenius_sq(tape, add(tape, p, tape.leaf(t.to_tensor())));
    const Var loss_var = scale(tape, sub(tape, both, frobenius_sq(tape, p)), 0.5);
    tape.backward(loss_var);
    const Tensor4 want = testing::fd_gradient(loss, x.to_tensor());
    // 0.5 (||P + T||^2 - ||P||^2) = <P, T> + const.
    EXPECT_LT(testing::rel_error(tape.grad(vx), want), 1e-6) << "seed " << seed;
  }
}

}  // namespace
}  // namespace cap
