// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "cap/errors.hpp"
#include "cap/linalg.hpp"
#include "test_support.hpp"

namespace cap {
namespace {

using testing::rand_matrix;

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

double max_abs_eigen(const Eigen::MatrixXd& a, const Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d;
}

class SvdShapes : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(SvdShapes, AgreesWithEigen) {
  const auto [n, m] = GetParam();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix x = rand_matrix(n, m, seed * 97 + n);
    const SvdFactors f = thin_svd(x);
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(to_eigen(x), Eigen::ComputeThinU | Eigen::ComputeThinV);
    for (int i = 0; i < m; ++i) EXPECT_NEAR(f.sigma[i], ref.singularValues()(i), 1e-12);
    EXPECT_LT(max_abs(reconstruct(f) - x), 1e-12);
    EXPECT_LT(orthonormality_error(f.u), 1e-13);
    EXPECT_LT(orthonormality_error(f.v), 1e-13);
    // U V^T does not depend on the sign convention.
    const Eigen::MatrixXd polar = ref.matrixU() * ref.matrixV().transpose();
    EXPECT_LT(max_abs_eigen(polar, polar_factor(f)), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Thin, SvdShapes,
                         ::testing::Values(std::pair{1, 1}, std::pair{4, 2}, std::pair{8, 3}, std::pair{6, 6},
                                           std::pair{32, 16}, std::pair{64, 8}));

TEST(Svd, SignConventionIsLargestEntryNonnegative) {
  const Matrix x = rand_matrix(7, 3, 5);
  const SvdFactors f = thin_svd(x);
  const SvdFactors g = thin_svd(-1.0 * x);
  for (std::size_t j = 0; j < 3; ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 7; ++i)
      if (std::abs(f.u(i, j)) > std::abs(f.u(arg, j))) arg = i;
    EXPECT_GE(f.u(arg, j), 0.0);
  }
  // Negating X keeps U and flips V.
  EXPECT_LT(max_abs(f.u - g.u), 1e-12);
  EXPECT_LT(max_abs(f.v + g.v), 1e-12);
}

TEST(Svd, RejectsWideAndNonFinite) {
  EXPECT_THROW(thin_svd(Matrix(2, 3, 1.0)), ArgumentError);
  Matrix bad(3, 2, 1.0);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(thin_svd(bad), NumericError);
}

TEST(Svd, GuardRejectsRepeatedSingularValues) {
  const SvdFactors f = thin_svd(Matrix::identity(3));
  EXPECT_THROW(make_svd_grad_context(f), DegenerateSpectrumError);
  Matrix rank_deficient(4, 2);
  rank_deficient(0, 0) = 1.0;
  EXPECT_THROW(make_svd_grad_context(thin_svd(rank_deficient)), DegenerateSpectrumError);
}

// L(X) = <A, U> + <B, V> evaluated through a fresh SVD.
double uv_loss(const Matrix& x, const Matrix& a, const Matrix& b) {
  const SvdFactors f = thin_svd(x);
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * f.u.data()[i];
  for (std::size_t i = 0; i < b.data().size(); ++i) s += b.data()[i] * f.v.data()[i];
  return s;
}

Matrix fd(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel(const Matrix& a, const Matrix& b) {
  return frobenius_norm(a - b) / std::max({frobenius_norm(a), frobenius_norm(b), 1e-12});
}

TEST(SvdBackward, FullVariantMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t n = 2 + seed % 7;
    const std::size_t m = 1 + seed % std::min<std::size_t>(n, 3);
    const Matrix x = rand_matrix(n, m, seed);
    const SvdFactors f = thin_svd(x);
    // Sign-invariant loss so the finite differences never cross a sign flip.
    const Matrix t = rand_matrix(n, m, seed + 1000);
    auto loss = [&](const Matrix& xx) {
      const Matrix p = polar_factor(thin_svd(xx));
      double s = 0;
      for (std::size_t i = 0; i < p.data().size(); ++i) s += t.data()[i] * p.data()[i];
      return s;
    };
    // dL/dU = T V, dL/dV = T^T U for L = <T, U V^T>.
    const Matrix du = matmul(t, f.v);
    const Matrix dv = matmul(t.transposed(), f.u);
    const Matrix g = svd_backward(f, make_svd_grad_context(f), du, dv);
    EXPECT_LT(rel(g, fd(loss, x)), 1e-6) << "seed " << seed;
  }
}

TEST(SvdBackward, UvLossWithFixedSigns) {
  const Matrix x = rand_matrix(6, 3, 77);
  const SvdFactors f = thin_svd(x);
  const Matrix a = rand_matrix(6, 3, 78);
  const Matrix b = rand_matrix(3, 3, 79);
  const Matrix g = svd_backward(f, make_svd_grad_context(f), a, b);
  EXPECT_LT(rel(g, fd([&](const Matrix& xx) { return uv_loss(xx, a, b); }, x)), 1e-6);
}

TEST(SvdBackward, VTermOnlyDiffersWhenUMatters) {
  const Matrix x = rand_matrix(6, 3, 81);
  const SvdFactors f = thin_svd(x);
  const Matrix a = rand_matrix(6, 3, 82);
  const Matrix zero(3, 3);
  const auto ctx = make_svd_grad_context(f);
  const Matrix full = svd_backward(f, ctx, a, zero, SvdBackwardVariant::kFull);
  const Matrix partial = svd_backward(f, ctx, a, zero, SvdBackwardVariant::kVTermOnly);
  EXPECT_GT(rel(full, partial), 1e-3);
}

TEST(LeadingVectors, MatchEigenSelfAdjointSolver) {
  const Matrix a = rand_matrix(6, 20, 91);
  const Matrix top = leading_left_singular_vectors(a, 3);
  const Eigen::MatrixXd ea = to_eigen(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ea * ea.transpose());
  // Compare projectors, which are sign and rotation invariant.
  const Eigen::MatrixXd basis = es.eigenvectors().rightCols(3);
  const Eigen::MatrixXd want = basis * basis.transpose();
  const Matrix got = matmul(top, top.transposed());
  EXPECT_LT(max_abs_eigen(want, got), 1e-10);
  EXPECT_LT(orthonormality_error(top), 1e-12);
}

TEST(MatrixOps, ProductAgainstEigen) {
  const Matrix a = rand_matrix(4, 5, 1);
  const Matrix b = rand_matrix(5, 3, 2);
  EXPECT_LT(max_abs_eigen(to_eigen(a) * to_eigen(b), matmul(a, b)), 1e-13);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_EQ(Matrix::from_tensor(a.to_tensor()), a);
}

}  // namespace
}  // namespace cap
