// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cap/network.hpp"
#include "cap/plan.hpp"

namespace cap {

inline constexpr const char* kFlopsConvention =
    "flops = 2 * multiply-accumulates of conv and linear layers; bias adds, activations, pooling and residual adds "
    "are not counted";
inline constexpr const char* kMemoryConvention =
    "peak activation memory = max over a sequential layer schedule of live tensor bytes; a tensor is freed right "
    "after its last consumer; relu and residual adds run in place; a residual block keeps its input live until the "
    "add; a factorized conv holds input, intermediate and output at once";

struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::size_t out_channels = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
  // Live bytes while this step runs.
  std::uint64_t live_bytes = 0;
};

struct CostReport {
  std::size_t batch = 1;
  std::size_t element_bytes = 4;
  std::uint64_t param_count = 0;
  std::uint64_t flops = 0;
  std::uint64_t peak_activation_bytes = 0;
  std::vector<LayerCost> layers;
};

CostReport count_costs(const NetworkGraph& net, std::size_t batch, std::size_t in_channels, std::size_t in_height,
                       std::size_t in_width, std::size_t element_bytes = 4);
CostReport count_costs(const NetworkGraph& net, std::size_t batch, std::size_t element_bytes = 4);

nlohmann::ordered_json to_json(const CostReport& report);

// Percentage of `base`, 100 when base is zero.
double percent_of(std::uint64_t value, std::uint64_t base);

// Shape-only rewrite: conv id gets `rank` output channels and its successor
// `rank` input channels. Weight values are zero-filled.
NetworkGraph apply_plan_shapes(const NetworkGraph& net, const std::map<int, std::size_t>& ranks);
NetworkGraph apply_plan_shapes(const NetworkGraph& net, const CompressionPlan& plan);

// Keeps the original layer sequence but replaces each planned conv by a
// rank-r conv followed by an explicit reprojection conv back to c_out channels
// (kernel `reprojection_kernel`, same padding rule). Top-level convs only.
NetworkGraph factorized_variant(const NetworkGraph& net, const std::map<int, std::size_t>& ranks,
                                std::size_t reprojection_kernel = 1);

}  // namespace cap
