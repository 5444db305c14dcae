// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "cap/tensor.hpp"

namespace cap {

// Dense row-major real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_tensor(const Tensor4& t);  // [rows, cols, 1, 1]
  Tensor4 to_tensor() const;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transposed() const;
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
// ||A^T A - I||_inf (max-abs entry), the orthonormality defect of A's columns.
double orthonormality_error(const Matrix& a);

// Thin SVD X = U diag(sigma) V^T of an n x m matrix with n >= m.
struct SvdFactors {
  Matrix u;                   // n x m, orthonormal columns
  std::vector<double> sigma;  // m, descending, nonnegative
  Matrix v;                   // m x m, orthogonal
};

// One-sided Jacobi SVD. Deterministic: the largest-magnitude entry of every U
// column is nonnegative (lowest row wins ties) and V is flipped to match.
// Throws ArgumentError when n < m and NumericError on non-finite input.
SvdFactors thin_svd(const Matrix& x);

Matrix reconstruct(const SvdFactors& f);
// U V^T: the nearest matrix with orthonormal columns.
Matrix polar_factor(const SvdFactors& f);

inline constexpr double kDefaultSpectrumGuard = 1e-8;

// K[i][j] = 1 / (sigma_j^2 - sigma_i^2) off the diagonal, 0 on it.
struct SvdGradContext {
  Matrix k;
  double guard = kDefaultSpectrumGuard;
};

// Throws DegenerateSpectrumError when |sigma_i^2 - sigma_j^2| or sigma_min^2
// falls below relative_guard * sigma_0^2.
SvdGradContext make_svd_grad_context(const SvdFactors& f, double relative_guard = kDefaultSpectrumGuard);

enum class SvdBackwardVariant {
  kFull,        // U-term and V-term structured gradient
  kVTermOnly,   // only the V-dependent term; for comparison, not exact
};

// dL/dX for a loss that depends on X through U and V (not sigma).
Matrix svd_backward(const SvdFactors& f, const SvdGradContext& ctx, const Matrix& d_u, const Matrix& d_v,
                    SvdBackwardVariant variant = SvdBackwardVariant::kFull);

// Top-r eigenvectors (as columns) of the Gram matrix A A^T, i.e. the leading
// left singular vectors of A.
Matrix leading_left_singular_vectors(const Matrix& a, std::size_t r);

}  // namespace cap
