// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cap/network.hpp"
#include "cap/training.hpp"

namespace cap {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkGraph network;
  SgdState optimizer;
  // Batch order is a pure function of (data_seed, epoch); together with
  // optimizer.epochs_done this is the complete RNG state.
  std::uint64_t data_seed = 0;
  std::string config_text;
  std::string plan_text;
};

// Little-endian binary: magic, version, topology, named parameter tensors
// (dims header + row-major doubles), optimizer state, RNG state, texts.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Writes `contents` to `path` byte for byte.
void write_file(const std::string& path, std::string_view contents);

}  // namespace cap
