// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>

#include <gtest/gtest.h>

#include "cap/errors.hpp"
#include "cap/metrics.hpp"
#include "cap/network.hpp"

namespace cap {
namespace {

// 2 * c_in * c_out * k^2 * H_out * W_out
std::uint64_t conv_flops(std::uint64_t c_in, std::uint64_t c_out, std::uint64_t k, std::uint64_t h, std::uint64_t w) {
  return 2 * c_in * c_out * k * k * h * w;
}

NetworkGraph chain(std::size_t c_in, std::size_t c_mid, std::size_t c_out, std::size_t hw) {
  NetworkGraph net;
  net.name = "chain";
  net.in_channels = c_in;
  net.in_height = hw;
  net.in_width = hw;
  net.layers.push_back(make_conv(c_in, c_mid, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(make_conv(c_mid, c_out, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  return net;
}

TEST(Costs, SingleConvFlopsAndParams) {
  NetworkGraph net;
  net.in_channels = 3;
  net.in_height = 16;
  net.in_width = 16;
  net.layers.push_back(make_conv(3, 32, 3, 1, 1));
  const CostReport r = count_costs(net, 1);
  EXPECT_EQ(r.flops, 442368u);
  EXPECT_EQ(r.flops, conv_flops(3, 32, 3, 16, 16));
  EXPECT_EQ(r.param_count, 3u * 32 * 9 + 32);
  EXPECT_EQ(count_costs(net, 4).flops, 4 * 442368u);
}

TEST(Costs, StrideShrinksOutput) {
  NetworkGraph net;
  net.in_channels = 2;
  net.in_height = 9;
  net.in_width = 9;
  net.layers.push_back(make_conv(2, 4, 3, 2, 1));
  const CostReport r = count_costs(net, 1);
  EXPECT_EQ(r.flops, conv_flops(2, 4, 3, 5, 5));
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_EQ(r.layers[0].out_height, 5u);
}

TEST(Costs, CascadedPairIsHalfOfReprojectedFactorization) {
  const NetworkGraph net = chain(64, 64, 64, 16);
  const std::map<int, std::size_t> ranks{{0, 32}};
  const CostReport cap = count_costs(apply_plan_shapes(net, ranks), 1);
  const CostReport fac = count_costs(factorized_variant(net, ranks, 3), 1);
  const std::uint64_t cap_pair = conv_flops(64, 32, 3, 16, 16) + conv_flops(32, 64, 3, 16, 16);
  const std::uint64_t fac_pair = conv_flops(64, 32, 3, 16, 16) + conv_flops(32, 64, 3, 16, 16) +
                                 conv_flops(64, 64, 3, 16, 16);
  EXPECT_EQ(cap.flops, cap_pair);
  EXPECT_EQ(fac.flops, fac_pair);
  EXPECT_EQ(2 * cap.flops, fac.flops);
}

TEST(Costs, PeakMemoryOfSequentialChain) {
  const NetworkGraph net = chain(4, 8, 4, 8);
  // conv0 holds input (4x8x8) and output (8x8x8); conv1 the reverse.
  const std::uint64_t elems = 4 * 64 + 8 * 64;
  EXPECT_EQ(count_costs(net, 1).peak_activation_bytes, elems * 4);
  EXPECT_EQ(count_costs(net, 2, 8).peak_activation_bytes, elems * 2 * 8);
  const std::map<int, std::size_t> ranks{{0, 2}};
  EXPECT_EQ(count_costs(apply_plan_shapes(net, ranks), 1).peak_activation_bytes, (4 * 64 + 2 * 64) * 4u);
  // Reprojection step: input, rank-2 intermediate and 8-channel output.
  EXPECT_EQ(count_costs(factorized_variant(net, ranks), 1).peak_activation_bytes, (4 * 64 + 2 * 64 + 8 * 64) * 4u);
}

TEST(Costs, ToyVggMemoryOrderingAtHalfRank) {
  const NetworkGraph vgg = build_small_vgg(1.0, 10, 1);
  std::map<int, std::size_t> ranks;
  for (int id : compressible_layers(vgg)) ranks[id] = conv_at(vgg, id).c_out / 2;
  const auto cap = count_costs(apply_plan_shapes(vgg, ranks), 1).peak_activation_bytes;
  const auto orig = count_costs(vgg, 1).peak_activation_bytes;
  const auto fac = count_costs(factorized_variant(vgg, ranks, 3), 1).peak_activation_bytes;
  EXPECT_LT(cap, orig);
  EXPECT_LT(orig, fac);
}

TEST(Costs, ResidualBlockKeepsInputLive) {
  const NetworkGraph r = build_small_resnet("18-lite", 10, 1);
  const CostReport c = count_costs(r, 1);
  EXPECT_GT(c.flops, 0u);
  EXPECT_EQ(c.param_count, parameter_count(r));
  // The block input stays live across its convs, so the peak exceeds any
  // single conv's input + output.
  std::uint64_t max_io = 0;
  for (const auto& l : c.layers) max_io = std::max<std::uint64_t>(max_io, l.live_bytes);
  EXPECT_EQ(c.peak_activation_bytes, max_io);
}

TEST(Costs, PercentOf) {
  EXPECT_DOUBLE_EQ(percent_of(50, 200), 25.0);
  EXPECT_DOUBLE_EQ(percent_of(3, 0), 100.0);
}

TEST(Costs, JsonCarriesConventions) {
  const auto j = to_json(count_costs(build_small_vgg(1.0, 10, 1), 1));
  EXPECT_EQ(j["flops_convention"], kFlopsConvention);
  EXPECT_EQ(j["memory_convention"], kMemoryConvention);
  EXPECT_TRUE(j["layers"].is_array());
}

TEST(Network, CompressibleLayersSkipProtected) {
  const NetworkGraph vgg = build_small_vgg(1.0, 10, 1);
  EXPECT_EQ(compressible_layers(vgg), (std::vector<int>{1, 2, 3}));
  const NetworkGraph res = build_small_resnet("18-lite", 10, 1);
  for (int id : compressible_layers(res)) {
    EXPECT_FALSE(conv_at(res, id).is_protected);
    EXPECT_EQ(position_in_block(res, id), 1u);
  }
  EXPECT_THROW(build_small_resnet("7-lite", 10, 1), ArgumentError);
}

TEST(Network, PredictIsDeterministic) {
  const NetworkGraph vgg = build_small_vgg(1.0, 10, 3);
  Tensor4 x(Shape4{2, 3, 32, 32}, 0.25);
  const Tensor4 a = predict(vgg, x);
  EXPECT_EQ(a.shape(), (Shape4{2, 10, 1, 1}));
  EXPECT_EQ(hash_tensor(a), hash_tensor(predict(vgg, x)));
  EXPECT_EQ(parameter_hash(vgg), parameter_hash(build_small_vgg(1.0, 10, 3)));
  EXPECT_NE(parameter_hash(vgg), parameter_hash(build_small_vgg(1.0, 10, 4)));
}

}  // namespace
}  // namespace cap
