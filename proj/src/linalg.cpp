// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cap/errors.hpp"

namespace cap {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_tensor(const Tensor4& t) {
  const Shape4& s = t.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("expected a [rows, cols, 1, 1] tensor, got " + s.str());
  return Matrix(s.n, s.c, t.storage());
}

Tensor4 Matrix::to_tensor() const { return Tensor4(Shape4{rows_, cols_, 1, 1}, data_); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += av * b(k, j);
    }
  return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix add: dimension mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix sub: dimension mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (auto& v : c.data()) v *= s;
  return c;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double orthonormality_error(const Matrix& a) {
  const Matrix gram = matmul(a.transposed(), a);
  return max_abs(gram - Matrix::identity(a.cols()));
}

// ---------------------------------------------------------------------------
// One-sided Jacobi SVD
// ---------------------------------------------------------------------------

namespace {

constexpr int kMaxSweeps = 80;

// Completes column j of u (whose other "valid" columns are orthonormal) with
// the first standard basis vector that survives Gram-Schmidt.
void complete_column(Matrix& u, std::size_t j, const std::vector<bool>& valid) {
  const std::size_t n = u.rows();
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<double> v(n, 0.0);
    v[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < u.cols(); ++c) {
        if (!valid[c]) continue;
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += u(i, c) * v[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= d * u(i, c);
      }
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm > 0.5) {
      for (std::size_t i = 0; i < n; ++i) u(i, j) = v[i] / nrm;
      return;
    }
  }
  throw NumericError("thin_svd: failed to complete an orthonormal basis");
}

}  // namespace

SvdFactors thin_svd(const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  if (n < m) {
    throw ArgumentError("thin_svd: matrix is " + std::to_string(n) + "x" + std::to_string(m) +
                        " with fewer rows than columns; transpose it first");
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("thin_svd: input contains non-finite entries");
  }

  // Work column-major so that column rotations touch contiguous memory.
  std::vector<double> a(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) a[j * n + i] = x(i, j);
  std::vector<double> v(m * m, 0.0);
  for (std::size_t j = 0; j < m; ++j) v[j * m + j] = 1.0;

  const double tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double* ap = a.data() + p * n;
        double* aq = a.data() + q * n;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = ap[i];
          const double xq = aq[i];
          ap[i] = c * xp - s * xq;
          aq[i] = s * xp + c * xq;
        }
        double* vp = v.data() + p * m;
        double* vq = v.data() + q * m;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = vp[i];
          const double xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[j * n + i] * a[j * n + i];
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return norms[l] > norms[r]; });

  SvdFactors f{Matrix(n, m), std::vector<double>(m), Matrix(m, m)};
  const double smax = m > 0 ? norms[order[0]] : 0.0;
  const double zero_tol = std::max(static_cast<double>(n) * std::numeric_limits<double>::epsilon() * smax,
                                   std::numeric_limits<double>::min());
  std::vector<bool> valid(m, false);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t src = order[k];
    f.sigma[k] = norms[src];
    for (std::size_t i = 0; i < m; ++i) f.v(i, k) = v[src * m + i];
    if (norms[src] > zero_tol) {
      for (std::size_t i = 0; i < n; ++i) f.u(i, k) = a[src * n + i] / norms[src];
      valid[k] = true;
    }
  }
  for (std::size_t k = 0; k < m; ++k) {
    if (!valid[k]) {
      complete_column(f.u, k, valid);
      valid[k] = true;
    }
  }

  for (std::size_t k = 0; k < m; ++k) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(f.u(i, k)) > best) {
        best = std::abs(f.u(i, k));
        arg = i;
      }
    }
    if (f.u(arg, k) < 0.0) {
      for (std::size_t i = 0; i < n; ++i) f.u(i, k) = -f.u(i, k);
      for (std::size_t i = 0; i < m; ++i) f.v(i, k) = -f.v(i, k);
    }
  }
  return f;
}

Matrix reconstruct(const SvdFactors& f) {
  Matrix us = f.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= f.sigma[j];
  return matmul(us, f.v.transposed());
}

Matrix polar_factor(const SvdFactors& f) { return matmul(f.u, f.v.transposed()); }

// ---------------------------------------------------------------------------
// Structured backward pass
// ---------------------------------------------------------------------------

SvdGradContext make_svd_grad_context(const SvdFactors& f, double relative_guard) {
  const std::size_t m = f.sigma.size();
  SvdGradContext ctx{Matrix(m, m), relative_guard};
  if (m == 0) return ctx;
  const double s0 = f.sigma[0] * f.sigma[0];
  const double threshold = relative_guard * s0;
  if (s0 == 0.0) throw DegenerateSpectrumError(0, 0, 0.0, threshold);
  const double smin = f.sigma[m - 1] * f.sigma[m - 1];
  if (smin < threshold) throw DegenerateSpectrumError(m - 1, m - 1, smin, threshold);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double gap = f.sigma[j] * f.sigma[j] - f.sigma[i] * f.sigma[i];
      if (std::abs(gap) < threshold) throw DegenerateSpectrumError(std::min(i, j), std::max(i, j), std::abs(gap), threshold);
      ctx.k(i, j) = 1.0 / gap;
    }
  }
  return ctx;
}

Matrix svd_backward(const SvdFactors& f, const SvdGradContext& ctx, const Matrix& d_u, const Matrix& d_v,
                    SvdBackwardVariant variant) {
  const std::size_t n = f.u.rows();
  const std::size_t m = f.u.cols();
  if (d_u.rows() != n || d_u.cols() != m || d_v.rows() != m || d_v.cols() != m) {
    throw ShapeError("svd_backward: gradient shapes do not match the factors");
  }
  const Matrix ut = f.u.transposed();
  const Matrix vt = f.v.transposed();
  const Matrix vt_dv = matmul(vt, d_v);

  Matrix inner(m, m);
  if (variant == SvdBackwardVariant::kVTermOnly) {
    // 2 Sigma (K^T o (V^T dL/dV))_sym
    Matrix had(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) had(i, j) = ctx.k(j, i) * vt_dv(i, j);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) inner(i, j) = 2.0 * f.sigma[i] * 0.5 * (had(i, j) + had(j, i));
    return matmul(matmul(f.u, inner), vt);
  }

  // U [ (K o (U^T dU - dU^T U)) S + S (K o (V^T dV - dV^T V)) ] V^T + (I - U U^T) dU S^-1 V^T
  const Matrix ut_du = matmul(ut, d_u);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double ju = ctx.k(i, j) * (ut_du(i, j) - ut_du(j, i));
      const double jv = ctx.k(i, j) * (vt_dv(i, j) - vt_dv(j, i));
      inner(i, j) = ju * f.sigma[j] + f.sigma[i] * jv;
    }
  }
  Matrix dx = matmul(matmul(f.u, inner), vt);
  if (n > m) {
    Matrix du_sinv = d_u;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) du_sinv(i, j) /= f.sigma[j];
    const Matrix proj = du_sinv - matmul(f.u, matmul(ut, du_sinv));
    dx = dx + matmul(proj, vt);
  }
  return dx;
}

Matrix leading_left_singular_vectors(const Matrix& a, std::size_t r) {
  if (r == 0 || r > a.rows()) {
    throw ArgumentError("leading_left_singular_vectors: rank " + std::to_string(r) + " out of range for " +
                        std::to_string(a.rows()) + " rows");
  }
  const Matrix gram = matmul(a, a.transposed());
  const SvdFactors f = thin_svd(gram);
  Matrix out(a.rows(), r);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < r; ++j) out(i, j) = f.u(i, j);
  return out;
}

}  // namespace cap
