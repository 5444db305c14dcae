// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cap {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const noexcept { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 array (batch, channels, rows, cols), row-major. Matrices are
// stored as [rows, cols, 1, 1] and scalars as [1, 1, 1, 1].
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> data);

  static Tensor4 scalar(double value);
  static Tensor4 matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }

  // Matrix view of a [rows, cols, 1, 1] tensor.
  double& at(std::size_t row, std::size_t col) noexcept { return data_[row * shape_.c + col]; }
  double at(std::size_t row, std::size_t col) const noexcept { return data_[row * shape_.c + col]; }

  // Value of a [1,1,1,1] tensor.
  double item() const;

  void fill(double value);
  Tensor4 reshaped(Shape4 shape) const;

  bool operator==(const Tensor4&) const = default;

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

Tensor4 random_normal(Shape4 shape, double stddev, std::mt19937_64& rng);
bool all_finite(const Tensor4& t) noexcept;
double max_abs_diff(const Tensor4& a, const Tensor4& b);
double frobenius_norm(const Tensor4& t);

// FNV-1a over the shape and raw bytes; used for bit-identity checks.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_tensor(const Tensor4& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace cap
