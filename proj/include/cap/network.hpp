// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cap/autodiff.hpp"
#include "cap/tensor.hpp"

namespace cap {

struct ConvLayer {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 3;
  int stride = 1;
  int padding = 1;
  bool has_bias = true;
  // Excluded from compression: stems, block-final convs and shortcuts.
  bool is_protected = false;
  Tensor4 weight;  // [c_out, c_in, k, k]
  Tensor4 bias;    // [c_out, 1, 1, 1] when has_bias
};

struct ReluLayer {};

struct AvgPoolLayer {
  int kernel = 2;
  int stride = 2;
};

struct GlobalAvgPoolLayer {};

struct LinearLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor4 weight;  // [out, in, 1, 1]
  Tensor4 bias;    // [out, 1, 1, 1]
};

// Basic residual block: conv -> relu -> conv -> ... -> conv, plus the identity
// (or a 1x1 shortcut conv), followed by a relu.
struct ResidualBlock {
  std::vector<ConvLayer> convs;
  std::optional<ConvLayer> shortcut;
};

// A low-rank conv followed by an explicit reprojection conv back to c_out
// channels. Only produced by factorized_variant() for cost comparisons.
struct FactorizedConvLayer {
  ConvLayer reduce;
  ConvLayer reproject;
};

using Layer = std::variant<ConvLayer, ReluLayer, AvgPoolLayer, GlobalAvgPoolLayer, LinearLayer, ResidualBlock,
                           FactorizedConvLayer>;

struct NetworkGraph {
  std::string name;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::vector<Layer> layers;

  bool has_classifier() const;
  std::size_t num_classes() const;
  bool is_residual() const;
};

// ---------------------------------------------------------------------------
// Convolution indexing. Conv ids count every ConvLayer / FactorizedConvLayer
// in execution order: top-level convs, then each block's convs followed by
// its shortcut.
// ---------------------------------------------------------------------------

struct ConvSite {
  int id = 0;
  std::size_t layer = 0;        // index into NetworkGraph::layers
  std::optional<std::size_t> in_block;  // position inside a ResidualBlock
  bool is_shortcut = false;
  bool is_block_final = false;
};

std::vector<ConvSite> conv_sites(const NetworkGraph& net);
std::size_t conv_count(const NetworkGraph& net);
ConvLayer& conv_at(NetworkGraph& net, int id);
const ConvLayer& conv_at(const NetworkGraph& net, int id);

// The conv that consumes conv `id`'s output channels directly (through relu /
// average pooling only), if any.
std::optional<int> conv_successor(const NetworkGraph& net, int id);
bool is_compressible(const NetworkGraph& net, int id);
std::vector<int> compressible_layers(const NetworkGraph& net);
// 1-based position of a conv inside its residual block; 1 for top-level convs.
std::size_t position_in_block(const NetworkGraph& net, int id);
// Layer index of the residual block holding conv `id`, if any.
std::optional<std::size_t> block_of(const NetworkGraph& net, int id);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ParamInfo {
  std::string name;
  int conv_id = -1;  // -1 for the classifier
  bool is_bias = false;
};

// Parameters in a fixed order (layer order; weight before bias).
std::vector<Tensor4*> parameters(NetworkGraph& net);
std::vector<const Tensor4*> parameters(const NetworkGraph& net);
std::vector<ParamInfo> parameter_info(const NetworkGraph& net);
std::size_t parameter_count(const NetworkGraph& net);
std::uint64_t parameter_hash(const NetworkGraph& net);

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardOptions {
  // Conv id -> orthonormal projection P ([c_out, r, 1, 1]) applied to that
  // conv's output; P^T is applied in front of its successor conv.
  const std::map<int, Var>* projections = nullptr;
  // Parameters (indexed as in parameters()) that receive gradients; null
  // means none do.
  const std::vector<bool>* trainable = nullptr;
};

struct ForwardResult {
  Var output;                  // logits for classifiers, final activation otherwise
  std::map<int, Var> taps;     // conv id -> post-activation (block output for block-final convs)
  std::vector<Var> params;     // parallel to parameters()
};

ForwardResult forward(const NetworkGraph& net, Tape& tape, Var input, const ForwardOptions& options = {});
Tensor4 predict(const NetworkGraph& net, const Tensor4& input);

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

// avgpool(2) stem, five 3x3 convs (8w,16w,16w | pool | 32w,32w), global
// average pool and a linear head. The first conv is protected.
NetworkGraph build_small_vgg(double width_multiplier, std::size_t num_classes, std::uint64_t seed);

// "18-lite": three stages (8, 16, 32 channels) of one basic block each;
// "56-lite": three blocks per stage. convs_per_block > 2 gives deeper blocks.
NetworkGraph build_small_resnet(const std::string& depth, std::size_t num_classes, std::uint64_t seed,
                                std::size_t convs_per_block = 2);

// Re-draws every weight with seeded He-normal init and zeroes biases.
void reinitialize(NetworkGraph& net, std::uint64_t seed);

ConvLayer make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel, int stride, int padding, bool bias = true);

}  // namespace cap
