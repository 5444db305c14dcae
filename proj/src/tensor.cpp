// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cap/errors.hpp"

namespace cap {

std::string Shape4::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

Tensor4 Tensor4::scalar(double value) { return Tensor4(Shape4{1, 1, 1, 1}, value); }

Tensor4 Tensor4::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor4(Shape4{rows, cols, 1, 1}, fill);
}

double Tensor4::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
  return data_[0];
}

void Tensor4::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor4 Tensor4::reshaped(Shape4 shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor4(shape, data_);
}

Tensor4 random_normal(Shape4 shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor4 t(shape);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

bool all_finite(const Tensor4& t) noexcept {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Tensor4& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor4& t, std::uint64_t seed) {
  const std::uint64_t dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
  std::uint64_t h = fnv1a({reinterpret_cast<const std::uint8_t*>(dims), sizeof(dims)}, seed);
  return fnv1a({reinterpret_cast<const std::uint8_t*>(t.data().data()), t.numel() * sizeof(double)}, h);
}

}  // namespace cap
