// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "cap/compression.hpp"
#include "cap/errors.hpp"
#include "test_support.hpp"

namespace cap {
namespace {

using testing::naive_conv;
using testing::rand_matrix;
using testing::randn;

ConvLayer random_conv(std::size_t c_in, std::size_t c_out, std::uint64_t seed) {
  ConvLayer c = make_conv(c_in, c_out, 3, 1, 1);
  c.weight = randn(c.weight.shape(), seed, 0.3);
  c.bias = randn(c.bias.shape(), seed + 1, 0.1);
  return c;
}

Tensor4 relu_copy(Tensor4 t) {
  for (double& v : t.storage()) v = std::max(v, 0.0);
  return t;
}

TEST(Losses, ReconstructionMatchesScalarLoop) {
  const Tensor4 s = randn(Shape4{2, 3, 2, 2}, 1);
  const Tensor4 t = randn(Shape4{2, 3, 2, 2}, 2);
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    diff += (t[i] - s[i]) * (t[i] - s[i]);
    ref += t[i] * t[i];
  }
  EXPECT_NEAR(reconstruction_loss(s, t, false), diff, 1e-12);
  EXPECT_NEAR(reconstruction_loss(s, t, true), diff / ref, 1e-12);
  Tape tape;
  EXPECT_NEAR(tape.value(reconstruction_loss(tape, tape.leaf(s), t, true)).item(), diff / ref, 1e-12);
}

TEST(Losses, MixtureWeighting) {
  const std::vector<double> terms{0.5, 0.25};
  EXPECT_DOUBLE_EQ(mixture_loss(terms, 2.0, 0.5), 1.75);
  EXPECT_DOUBLE_EQ(mixture_loss(terms, 2.0, 0.0), 0.75);
  EXPECT_THROW(mixture_loss(terms, 2.0, -1.0), ArgumentError);
}

// Folding P into the kernels reproduces projected training to round-off.
TEST(Folding, MatchesProjectedForward) {
  const ConvLayer layer = random_conv(3, 6, 10);
  const ConvLayer next = random_conv(6, 4, 20);
  const Matrix p = polar_factor(thin_svd(rand_matrix(6, 2, 30)));
  const FoldedKernels f = fold_kernels(layer, p, next);
  EXPECT_EQ(f.weight_out.shape(), (Shape4{2, 3, 3, 3}));
  EXPECT_EQ(f.next_weight_in.shape(), (Shape4{4, 2, 3, 3}));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor4 x = randn(Shape4{1, 3, 6, 6}, 100 + seed);
    const Tensor4 h = relu_copy(naive_conv(x, f.weight_out, &f.bias_out, 1, 1));
    const Tensor4 folded = relu_copy(naive_conv(h, f.next_weight_in, &next.bias, 1, 1));
    EXPECT_LT(max_abs_diff(folded, student_block_forward(x, layer, p, next)), 1e-10);
  }
}

TEST(Folding, ProjectedForwardByHand) {
  // Projection then back-projection before the next conv, written out.
  const ConvLayer layer = random_conv(2, 4, 40);
  const ConvLayer next = random_conv(4, 3, 50);
  const Matrix p = polar_factor(thin_svd(rand_matrix(4, 2, 60)));
  const Tensor4 x = randn(Shape4{1, 2, 5, 5}, 70);
  const Tensor4 y = naive_conv(x, layer.weight, &layer.bias, 1, 1);
  Tensor4 z(Shape4{1, 2, 5, 5});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 25; ++i) {
      double acc = 0;
      for (std::size_t m = 0; m < 4; ++m) acc += p(m, j) * y[m * 25 + i];
      z[j * 25 + i] = std::max(acc, 0.0);
    }
  Tensor4 w_in(Shape4{3, 2, 3, 3});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 9; ++k) {
        double acc = 0;
        for (std::size_t m = 0; m < 4; ++m) acc += next.weight[(o * 4 + m) * 9 + k] * p(m, j);
        w_in[(o * 2 + j) * 9 + k] = acc;
      }
  const Tensor4 want = relu_copy(naive_conv(z, w_in, &next.bias, 1, 1));
  EXPECT_LT(max_abs_diff(want, student_block_forward(x, layer, p, next)), 1e-12);
}

TEST(Folding, FoldIntoRewritesPair) {
  NetworkGraph net = build_small_vgg(1.0, 10, 5);
  const NetworkGraph before = net;
  const Matrix p = polar_factor(thin_svd(rand_matrix(16, 8, 3)));
  fold_into(net, 1, p);
  EXPECT_EQ(conv_at(net, 1).c_out, 8u);
  EXPECT_EQ(conv_at(net, 2).c_in, 8u);
  EXPECT_EQ(conv_at(net, 0).weight, conv_at(before, 0).weight);
}

TEST(Supervision, ChainsThroughCompressedLayers) {
  const NetworkGraph vgg = build_small_vgg(1.0, 10, 1);
  EXPECT_EQ(supervision_point(vgg, 1, {1}), 2);
  EXPECT_EQ(supervision_point(vgg, 1, {1, 2}), 3);
  EXPECT_EQ(supervision_point(vgg, 1, {1, 2, 3}), 4);
  EXPECT_EQ(supervision_points(vgg, {1, 2, 3}, {1, 2, 3}), (std::vector<int>{4}));
}

TEST(Plans, ResolveRanksValidates) {
  const NetworkGraph vgg = build_small_vgg(1.0, 10, 1);
  CompressionPlan plan;
  plan.default_keep_ratio = 0.5;
  EXPECT_EQ(resolve_ranks(vgg, plan), (std::map<int, std::size_t>{{1, 8}, {2, 8}, {3, 16}}));
  plan.layers.push_back(LayerTarget{0, 4, std::nullopt});
  EXPECT_THROW(resolve_ranks(vgg, plan), ValidationError);
  plan.layers = {LayerTarget{2, 17, std::nullopt}};
  EXPECT_THROW(resolve_ranks(vgg, plan), ValidationError);
  plan.layers = {};
  plan.mode = CompressionMode::kSingleLayer;
  EXPECT_THROW(resolve_ranks(vgg, plan), ValidationError);
  EXPECT_EQ(rank_for_ratio(16, 0.01), 1u);
  EXPECT_EQ(rank_for_ratio(16, 0.5), 8u);
}

TEST(Plans, TextRoundTrip) {
  const CompressionPlan plan = parse_plan(
      "mode = simultaneous\ngamma = 0.5\nlayer.2.rank = 4\nlayer.3.keep_ratio = 0.25\ninit = random\n");
  EXPECT_EQ(plan.mode, CompressionMode::kSimultaneous);
  EXPECT_EQ(plan.init, ProxyInit::kRandom);
  const CompressionPlan again = parse_plan(plan_to_text(plan));
  EXPECT_EQ(plan_to_text(again), plan_to_text(plan));
  EXPECT_THROW(parse_plan("mode = sideways\n"), ParseError);
  EXPECT_THROW(parse_plan("gamma = -1\n"), ParseError);
  EXPECT_THROW(parse_plan("unknown_key = 3\n"), ParseError);
}

TEST(Initialization, WeightBasisAndSpreadSpectrum) {
  const ConvLayer c = random_conv(4, 8, 80);
  const Matrix b = weight_basis(c, 3);
  EXPECT_LT(orthonormality_error(b), 1e-12);
  const Matrix s = spread_spectrum(b);
  const SvdFactors f = thin_svd(s);
  EXPECT_LT(max_abs(polar_factor(f) - b), 1e-12);
  EXPECT_NO_THROW(make_svd_grad_context(f));
}

Dataset tiny_data(std::size_t n, std::uint64_t seed) {
  Dataset d = make_synthetic_blobs(n, 4, 0.3, 3, seed);
  normalize(d, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25});
  return d;
}

TEST(Compression, FullRankPlanIsIdentity) {
  const NetworkGraph vgg = build_small_vgg(0.5, 4, 2);
  CompressionPlan plan;
  plan.default_keep_ratio = 1.0;
  const Dataset data = tiny_data(32, 1);
  const CompressionResult r = compress_network(vgg, plan, data);
  EXPECT_EQ(parameter_hash(r.network), parameter_hash(vgg));
  const Tensor4 x = slice(data, 0, 8).images;
  EXPECT_EQ(hash_tensor(predict(r.network, x)), hash_tensor(predict(vgg, x)));
}

TEST(Compression, GreedyRunKeepsInvariants) {
  const NetworkGraph vgg = build_small_vgg(0.5, 4, 2);
  CompressionPlan plan;
  plan.default_keep_ratio = 0.5;
  plan.projection_steps = 15;
  plan.relaxation_epochs = 1;
  plan.batch_size = 16;
  const Dataset data = tiny_data(64, 2);
  const CompressionResult r = compress_network(vgg, plan, data, &data);
  EXPECT_TRUE(r.report.teacher_intact);
  EXPECT_EQ(r.report.projection.steps, 45u);
  EXPECT_LT(r.report.projection.max_orthonormality_error, 1e-10);
  EXPECT_EQ(conv_at(r.network, 1).c_out, 4u);
  EXPECT_EQ(conv_at(r.network, 3).c_out, 8u);
  EXPECT_LT(r.report.cost_after.flops, r.report.cost_before.flops);
  ASSERT_TRUE(r.report.accuracy_no_ft.has_value());
  const auto j = to_json(r.report);
  EXPECT_EQ(j["mode"], "cascaded_greedy");
  EXPECT_EQ(j["layers"].size(), 3u);
}

TEST(Compression, ProjectionLowersLossOnSingleLayer) {
  const NetworkGraph vgg = build_small_vgg(0.5, 4, 3);
  CompressionPlan plan;
  plan.mode = CompressionMode::kSingleLayer;
  plan.layers = {LayerTarget{2, 2, std::nullopt}};
  plan.init = ProxyInit::kRandom;
  plan.projection_steps = 60;
  plan.relaxation_epochs = 0;
  plan.gamma = 0.0;
  plan.batch_size = 16;
  const CompressionResult r = compress_network(vgg, plan, tiny_data(64, 4));
  const auto& losses = r.report.projection.losses;
  ASSERT_EQ(losses.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
}

}  // namespace
}  // namespace cap
