// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "cap/autodiff.hpp"
#include "cap/linalg.hpp"

namespace cap {

// Unconstrained trainable matrix X (c_out x r) standing in for the orthonormal
// projection P = Phi(X) = U V^T, the nearest point to X with orthonormal
// columns. SGD updates X; P is recomputed from a fresh SVD on every forward.
class ProjectionProxy {
 public:
  ProjectionProxy(Matrix x, std::uint64_t seed);

  std::size_t rows() const noexcept { return x_.rows(); }
  std::size_t rank() const noexcept { return x_.cols(); }
  const Matrix& x() const noexcept { return x_; }
  void set_x(Matrix x);

  // Cached thin SVD of X, recomputed after any change to X.
  const SvdFactors& factors() const;
  Matrix projection() const { return polar_factor(factors()); }

  Matrix& velocity() noexcept { return velocity_; }
  const Matrix& velocity() const noexcept { return velocity_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t perturbations() const noexcept { return perturbations_; }

 private:
  friend ProjectionProxy reperturb(const ProjectionProxy& proxy, double magnitude);

  Matrix x_;
  Matrix velocity_;
  std::uint64_t seed_;
  std::uint64_t perturbations_ = 0;
  mutable std::optional<SvdFactors> cached_;
};

// warm_start, when given, is used verbatim; otherwise X has iid N(0, 1/c_out)
// entries drawn from `seed`.
ProjectionProxy init_proxy(std::size_t c_out, std::size_t rank, std::uint64_t seed,
                           const std::optional<Matrix>& warm_start = std::nullopt);

// No-grad evaluation of Phi.
Matrix phi(const ProjectionProxy& proxy);

// Default perturbation size, 1e-6 * ||X||_F.
double default_perturbation(const ProjectionProxy& proxy);

inline constexpr int kMaxReperturbAttempts = 5;

// Adds seeded Gaussian noise with Frobenius norm ~magnitude to X until the
// spectrum passes the SVD backward guard. The magnitude grows tenfold per
// attempt; after kMaxReperturbAttempts failures a NumericError is thrown.
ProjectionProxy reperturb(const ProjectionProxy& proxy, double magnitude);

// True when the SVD backward pass is well defined at the current X.
bool spectrum_separated(const ProjectionProxy& proxy, double relative_guard = kDefaultSpectrumGuard);

// Differentiable Phi on the tape; x is a [c_out, r, 1, 1] matrix. Throws
// DegenerateSpectrumError when x requires a gradient and its spectrum is
// degenerate.
Var phi(Tape& tape, Var x, SvdBackwardVariant variant = SvdBackwardVariant::kFull);

struct BoundProxy {
  Var x;
  Var projection;
};

// Places X on the tape (as a leaf that requires a gradient when `trainable`)
// and returns Phi(X). Re-perturbs the proxy first if its spectrum is degenerate.
BoundProxy bind_proxy(Tape& tape, ProjectionProxy& proxy, bool trainable);

// Heavy-ball SGD: v = momentum * v + grad; X -= lr * v.
void sgd_step(ProjectionProxy& proxy, const Matrix& grad, double lr, double momentum);

}  // namespace cap
