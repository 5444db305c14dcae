// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "cap/autodiff.hpp"
#include "cap/linalg.hpp"
#include "cap/tensor.hpp"

namespace cap::testing {

inline Tensor4 randn(Shape4 s, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return random_normal(s, stddev, rng);
}

inline Matrix rand_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = nd(rng);
  return m;
}

// Direct 6-loop cross-correlation, independent of the library's conv.
inline Tensor4 naive_conv(const Tensor4& x, const Tensor4& w, const Tensor4* b, int stride, int pad) {
  const Shape4 xs = x.shape();
  const Shape4 ws = w.shape();
  const long oh = (static_cast<long>(xs.h) + 2 * pad - static_cast<long>(ws.h)) / stride + 1;
  const long ow = (static_cast<long>(xs.w) + 2 * pad - static_cast<long>(ws.w)) / stride + 1;
  Tensor4 y(Shape4{xs.n, ws.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t p = 0; p < ws.h; ++p)
              for (std::size_t q = 0; q < ws.w; ++q) {
                const long r = i * stride + static_cast<long>(p) - pad;
                const long s = j * stride + static_cast<long>(q) - pad;
                if (r < 0 || s < 0 || r >= static_cast<long>(xs.h) || s >= static_cast<long>(xs.w)) continue;
                acc += x.at(n, c, r, s) * w.at(o, c, p, q);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

// Central-difference gradient of a scalar function of one tensor.
inline Tensor4 fd_gradient(const std::function<double(const Tensor4&)>& f, Tensor4 x, double h = 1e-6) {
  Tensor4 g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(const Tensor4& a, const Tensor4& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace cap::testing
