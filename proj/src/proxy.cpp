// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/proxy.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "cap/errors.hpp"

namespace cap {

ProjectionProxy::ProjectionProxy(Matrix x, std::uint64_t seed)
    : x_(std::move(x)), velocity_(x_.rows(), x_.cols()), seed_(seed) {
  if (x_.cols() == 0 || x_.cols() > x_.rows()) {
    throw ArgumentError("projection rank " + std::to_string(x_.cols()) + " must lie in [1, " +
                        std::to_string(x_.rows()) + "]");
  }
}

void ProjectionProxy::set_x(Matrix x) {
  if (x.rows() != x_.rows() || x.cols() != x_.cols()) throw ShapeError("set_x: proxy dimensions are fixed");
  x_ = std::move(x);
  cached_.reset();
}

const SvdFactors& ProjectionProxy::factors() const {
  if (!cached_) cached_ = thin_svd(x_);
  return *cached_;
}

ProjectionProxy init_proxy(std::size_t c_out, std::size_t rank, std::uint64_t seed,
                           const std::optional<Matrix>& warm_start) {
  if (rank < 1 || rank > c_out) {
    throw ArgumentError("init_proxy: rank " + std::to_string(rank) + " outside [1, " + std::to_string(c_out) + "]");
  }
  if (warm_start) {
    if (warm_start->rows() != c_out || warm_start->cols() != rank) {
      throw ShapeError("init_proxy: warm start is " + std::to_string(warm_start->rows()) + "x" +
                       std::to_string(warm_start->cols()) + ", expected " + std::to_string(c_out) + "x" +
                       std::to_string(rank));
    }
    return ProjectionProxy(*warm_start, seed);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(c_out)));
  Matrix x(c_out, rank);
  for (auto& v : x.data()) v = dist(rng);
  return ProjectionProxy(std::move(x), seed);
}

Matrix phi(const ProjectionProxy& proxy) { return proxy.projection(); }

double default_perturbation(const ProjectionProxy& proxy) { return 1e-6 * frobenius_norm(proxy.x()); }

bool spectrum_separated(const ProjectionProxy& proxy, double relative_guard) {
  try {
    make_svd_grad_context(proxy.factors(), relative_guard);
    return true;
  } catch (const DegenerateSpectrumError&) {
    return false;
  }
}

ProjectionProxy reperturb(const ProjectionProxy& proxy, double magnitude) {
  if (magnitude < 0.0 || !std::isfinite(magnitude)) {
    throw ArgumentError("reperturb: magnitude must be finite and non-negative");
  }
  ProjectionProxy out = proxy;
  const double numel = static_cast<double>(out.x_.data().size());
  double current = magnitude;
  std::ostringstream history;
  for (int attempt = 0; attempt < kMaxReperturbAttempts; ++attempt) {
    std::mt19937_64 rng(out.seed_ ^ (0x9E3779B97F4A7C15ULL * (out.perturbations_ + 1)));
    ++out.perturbations_;
    std::normal_distribution<double> dist(0.0, current / std::sqrt(numel));
    Matrix x = out.x_;
    if (current > 0.0) {
      for (auto& v : x.data()) v += dist(rng);
    }
    out.x_ = std::move(x);
    out.cached_.reset();
    try {
      make_svd_grad_context(out.factors());
      return out;
    } catch (const DegenerateSpectrumError& e) {
      history << "\n  attempt " << attempt + 1 << " (magnitude " << current << "): " << e.what();
    }
    current *= 10.0;
  }
  std::ostringstream os;
  os << "reperturb: spectrum of the " << out.rows() << "x" << out.rank() << " proxy stayed degenerate after "
     << kMaxReperturbAttempts << " attempts; singular values:";
  for (double s : out.factors().sigma) os << ' ' << s;
  os << history.str();
  throw NumericError(os.str());
}

Var phi(Tape& tape, Var x, SvdBackwardVariant variant) {
  const Matrix xm = Matrix::from_tensor(tape.value(x));
  SvdFactors f = thin_svd(xm);
  Tensor4 p = polar_factor(f).to_tensor();
  if (!tape.requires_grad(x)) return tape.record(std::move(p), {x}, nullptr);
  SvdGradContext ctx = make_svd_grad_context(f);
  return tape.record(std::move(p), {x},
                     [x, f = std::move(f), ctx = std::move(ctx), variant](Tape& t, const Tensor4& grad) {
                       const Matrix g = Matrix::from_tensor(grad);
                       const Matrix d_u = matmul(g, f.v);
                       const Matrix d_v = matmul(g.transposed(), f.u);
                       t.accumulate_grad(x, svd_backward(f, ctx, d_u, d_v, variant).to_tensor());
                     });
}

BoundProxy bind_proxy(Tape& tape, ProjectionProxy& proxy, bool trainable) {
  if (trainable && !spectrum_separated(proxy)) proxy = reperturb(proxy, default_perturbation(proxy));
  const Var x = tape.leaf(proxy.x().to_tensor(), trainable);
  return BoundProxy{x, phi(tape, x)};
}

void sgd_step(ProjectionProxy& proxy, const Matrix& grad, double lr, double momentum) {
  Matrix& v = proxy.velocity();
  if (grad.rows() != v.rows() || grad.cols() != v.cols()) throw ShapeError("sgd_step: gradient shape mismatch");
  Matrix x = proxy.x();
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    v.data()[i] = momentum * v.data()[i] + grad.data()[i];
    x.data()[i] -= lr * v.data()[i];
  }
  proxy.set_x(std::move(x));
}

}  // namespace cap
