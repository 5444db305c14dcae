// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cap/autodiff.hpp"
#include "cap/errors.hpp"
#include "test_support.hpp"

namespace cap {
namespace {

using testing::fd_gradient;
using testing::naive_conv;
using testing::randn;
using testing::rel_error;

struct ConvCase {
  Shape4 x;
  Shape4 w;
  int stride;
  int pad;
};

class ConvForwardTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvForwardTest, MatchesDirectLoops) {
  const ConvCase c = GetParam();
  const Tensor4 x = randn(c.x, 11);
  const Tensor4 w = randn(c.w, 12);
  const Tensor4 b = randn(Shape4{c.w.n, 1, 1, 1}, 13);
  Tape tape;
  const Var out = conv2d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), c.stride, c.pad);
  const Tensor4 want = naive_conv(x, w, &b, c.stride, c.pad);
  ASSERT_EQ(tape.value(out).shape(), want.shape());
  EXPECT_LT(max_abs_diff(tape.value(out), want), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvForwardTest,
                         ::testing::Values(ConvCase{{2, 3, 6, 6}, {4, 3, 3, 3}, 1, 1},
                                           ConvCase{{1, 2, 7, 5}, {3, 2, 3, 3}, 2, 1},
                                           ConvCase{{2, 4, 5, 5}, {2, 4, 1, 1}, 1, 0},
                                           ConvCase{{1, 1, 4, 4}, {1, 1, 3, 3}, 1, 0},
                                           ConvCase{{1, 3, 8, 8}, {5, 3, 5, 5}, 2, 2}));

TEST(Conv, OutputSizeFormula) {
  EXPECT_EQ(conv_output_size(32, 3, 1, 1), 32u);
  EXPECT_EQ(conv_output_size(32, 3, 2, 1), 16u);
  EXPECT_EQ(conv_output_size(7, 3, 2, 0), 3u);
}

TEST(Conv, RejectsChannelMismatch) {
  Tape tape;
  const Var x = tape.leaf(Tensor4(Shape4{1, 3, 4, 4}));
  const Var w = tape.leaf(Tensor4(Shape4{2, 4, 3, 3}));
  EXPECT_THROW(conv2d(tape, x, w, std::nullopt, 1, 1), ShapeError);
  EXPECT_THROW(conv2d(tape, x, tape.leaf(Tensor4(Shape4{2, 3, 3, 3})), std::nullopt, 0, 1), ArgumentError);
}

// d(sum(conv(x, w) * r))/dw against central differences.
TEST(Conv, WeightAndInputGradients) {
  const Tensor4 x = randn(Shape4{2, 3, 5, 5}, 21);
  const Tensor4 w = randn(Shape4{2, 3, 3, 3}, 22);
  const Tensor4 r = randn(Shape4{2, 2, 3, 3}, 23);
  auto value = [&](const Tensor4& xx, const Tensor4& ww) {
    const Tensor4 y = naive_conv(xx, ww, nullptr, 2, 1);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  Tape tape;
  const Var vx = tape.leaf(x, true);
  const Var vw = tape.leaf(w, true);
  const Var y = conv2d(tape, vx, vw, std::nullopt, 2, 1);
  // Weighted sum through frobenius_sq: ||y + r||^2 - ||y||^2 - ||r||^2 = 2 <y, r>.
  const Var both = frobenius_sq(tape, add(tape, y, tape.leaf(r)));
  const Var only_y = frobenius_sq(tape, y);
  const Var loss = scale(tape, sub(tape, both, only_y), 0.5);
  tape.backward(loss);
  const Tensor4 gw = fd_gradient([&](const Tensor4& t) { return value(x, t); }, w);
  const Tensor4 gx = fd_gradient([&](const Tensor4& t) { return value(t, w); }, x);
  EXPECT_LT(rel_error(tape.grad(vw), gw), 1e-7);
  EXPECT_LT(rel_error(tape.grad(vx), gx), 1e-7);
}

TEST(Relu, ForwardAndMask) {
  Tape tape;
  const Var x = tape.leaf(Tensor4(Shape4{1, 1, 1, 4}, std::vector<double>{-2.0, -0.5, 0.5, 3.0}), true);
  const Var y = relu(tape, x);
  EXPECT_EQ(tape.value(y).storage(), (std::vector<double>{0.0, 0.0, 0.5, 3.0}));
  tape.backward(sum(tape, y));
  EXPECT_EQ(tape.grad(x).storage(), (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(SoftmaxCrossEntropy, MatchesHandFormula) {
  const std::vector<double> logits{1.0, 2.0, 0.5, -1.0, 0.0, 3.0};
  const std::vector<int> labels{1, 2};
  double want = 0;
  for (int n = 0; n < 2; ++n) {
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(logits[n * 3 + k]);
    want += std::log(z) - logits[n * 3 + labels[n]];
  }
  want /= 2;
  Tape tape;
  const Var l = tape.leaf(Tensor4(Shape4{2, 3, 1, 1}, logits), true);
  const Var loss = softmax_cross_entropy(tape, l, labels);
  EXPECT_NEAR(tape.value(loss).item(), want, 1e-14);
  tape.backward(loss);
  // Gradient rows are (softmax - onehot) / n.
  for (int n = 0; n < 2; ++n) {
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(logits[n * 3 + k]);
    for (int k = 0; k < 3; ++k) {
      const double p = std::exp(logits[n * 3 + k]) / z - (k == labels[n] ? 1.0 : 0.0);
      EXPECT_NEAR(tape.grad(l)[n * 3 + k], p / 2, 1e-14);
    }
  }
}

TEST(SoftmaxCrossEntropy, RejectsBadLabels) {
  Tape tape;
  const Var l = tape.leaf(Tensor4(Shape4{1, 3, 1, 1}));
  const std::vector<int> bad{3};
  EXPECT_THROW(softmax_cross_entropy(tape, l, bad), ArgumentError);
}

TEST(Pooling, AverageValues) {
  Tensor4 x(Shape4{1, 1, 2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  Tape tape;
  const Var p = avg_pool(tape, tape.leaf(x), 2, 2);
  EXPECT_EQ(tape.value(p).storage(), (std::vector<double>{3.5, 5.5}));
  const Var g = global_avg_pool(tape, tape.leaf(x));
  EXPECT_EQ(tape.value(g).shape(), (Shape4{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(tape.value(g).item(), 4.5);
}

TEST(ChannelProject, MatchesMatrixProductPerPixel) {
  const Tensor4 x = randn(Shape4{2, 4, 3, 3}, 31);
  const Tensor4 p = randn(Shape4{4, 2, 1, 1}, 32);
  Tape tape;
  const Var y = channel_project(tape, tape.leaf(x), tape.leaf(p));
  const Tensor4& out = tape.value(y);
  ASSERT_EQ(out.shape(), (Shape4{2, 2, 3, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w) {
          double acc = 0;
          for (std::size_t m = 0; m < 4; ++m) acc += p.at(m, j) * x.at(n, m, h, w);
          EXPECT_NEAR(out.at(n, j, h, w), acc, 1e-14);
        }
}

TEST(Linear, GradientMatchesFiniteDifference) {
  const Tensor4 x = randn(Shape4{3, 4, 1, 1}, 41);
  const Tensor4 w = randn(Shape4{2, 4, 1, 1}, 42);
  const Tensor4 b = randn(Shape4{2, 1, 1, 1}, 43);
  auto f = [&](const Tensor4& ww) {
    double s = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t o = 0; o < 2; ++o) {
        double y = b[o];
        for (std::size_t i = 0; i < 4; ++i) y += ww.at(o, i) * x.at(n, i, 0, 0);
        s += y * y;
      }
    return s;
  };
  Tape tape;
  const Var vw = tape.leaf(w, true);
  const Var y = linear(tape, tape.leaf(x), vw, tape.leaf(b));
  const Var loss = frobenius_sq(tape, y);
  EXPECT_NEAR(tape.value(loss).item(), f(w), 1e-12);
  tape.backward(loss);
  EXPECT_LT(rel_error(tape.grad(vw), fd_gradient(f, w)), 1e-8);
}

TEST(Tape, ReusedSubexpressionAccumulates) {
  Tape tape;
  const Var x = tape.leaf(Tensor4::scalar(3.0), true);
  const Var y = add(tape, x, x);
  const Var loss = frobenius_sq(tape, y);  // (2x)^2
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 24.0);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 24.0);
}

TEST(Tape, NoGradientWithoutRequiresGrad) {
  Tape tape;
  const Var x = tape.leaf(Tensor4::scalar(2.0));
  const Var loss = frobenius_sq(tape, x);
  EXPECT_FALSE(tape.requires_grad(loss));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 0.0);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape tape;
  const Var x = tape.leaf(Tensor4(Shape4{2, 1, 1, 1}), true);
  EXPECT_THROW(tape.backward(x), ArgumentError);
  EXPECT_THROW(add(tape, x, tape.leaf(Tensor4(Shape4{3, 1, 1, 1}))), ShapeError);
}

TEST(Tensor, HashSeesEveryBit) {
  Tensor4 a(Shape4{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor4 b = a;
  EXPECT_EQ(hash_tensor(a), hash_tensor(b));
  b[3] = std::nextafter(4.0, 5.0);
  EXPECT_NE(hash_tensor(a), hash_tensor(b));
  EXPECT_THROW(a.reshaped(Shape4{1, 1, 3, 1}), ShapeError);
}

}  // namespace
}  // namespace cap
