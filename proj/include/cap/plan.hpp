// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cap/network.hpp"

namespace cap {

enum class CompressionMode { kSingleLayer, kCascadedGreedy, kSimultaneous };
// kWarmStart: top-r left singular vectors of the unfolded weight tensor.
// kActivationPca: top-r principal directions of the layer's activations.
enum class ProxyInit { kWarmStart, kActivationPca, kRandom };

struct LayerTarget {
  int layer = 0;
  std::optional<std::size_t> rank;
  std::optional<double> keep_ratio;
};

struct CompressionPlan {
  CompressionMode mode = CompressionMode::kCascadedGreedy;
  double gamma = 1.0;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;

  std::size_t projection_steps = 200;
  double projection_lr = 0.05;
  double projection_momentum = 0.9;
  ProxyInit init = ProxyInit::kWarmStart;
  bool normalize_recon = true;
  bool two_round = false;

  std::size_t relaxation_epochs = 2;
  double relaxation_lr = 0.01;
  double relaxation_momentum = 0.9;

  std::size_t finetune_epochs = 0;
  double finetune_lr = 0.01;
  double finetune_momentum = 0.9;

  // Applied to every compressible layer not listed in `layers`; unset leaves
  // such layers alone.
  std::optional<double> default_keep_ratio;
  std::vector<LayerTarget> layers;
};

CompressionPlan parse_plan(std::string_view text, const std::string& source = "<plan>");
CompressionPlan load_plan(const std::string& path);
std::string plan_to_text(const CompressionPlan& plan);

const char* mode_name(CompressionMode mode);
const char* init_name(ProxyInit init);

// Conv id -> target rank for every layer the plan touches. Throws
// ValidationError for unknown or protected layers and out-of-range ranks.
std::map<int, std::size_t> resolve_ranks(const NetworkGraph& net, const CompressionPlan& plan);

std::size_t rank_for_ratio(std::size_t channels, double keep_ratio);

}  // namespace cap
