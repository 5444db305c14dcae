// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cap/tensor.hpp"

namespace cap {

struct Dataset {
  Tensor4 images;  // [n, c, h, w]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Batch {
  Tensor4 images;
  std::vector<int> labels;
};

struct DataConfig {
  std::string kind = "synthetic_blobs";  // or cifar10_binary
  std::string path;
  std::uint64_t seed = 7;
  std::size_t train_size = 1024;
  std::size_t test_size = 512;
  std::size_t num_classes = 10;
  double noise = 1.0;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

struct DataSplits {
  Dataset train;
  Dataset test;
};

// Seeded [3,32,32] images in [0,1]: every class owns a sinusoidal texture per
// channel; samples jitter its amplitude and phase and add pixel noise.
// Prototypes depend on prototype_seed only, so splits drawn with different
// sample seeds share classes.
Dataset make_synthetic_blobs(std::size_t count, std::size_t num_classes, double noise, std::uint64_t prototype_seed,
                             std::uint64_t sample_seed);

// CIFAR-10 binary records (1 label byte + 3072 pixel bytes). Reads up to
// `limit` records from the given files in order.
Dataset read_cifar10(const std::vector<std::string>& files, std::size_t limit);

// In place: (x - mean[c]) / stddev[c].
void normalize(Dataset& data, const std::array<double, 3>& mean, const std::array<double, 3>& stddev);

// Loads and normalizes the train/test splits described by the config.
DataSplits load_data(const DataConfig& config);

Batch gather(const Dataset& data, const std::vector<std::size_t>& indices);
Batch slice(const Dataset& data, std::size_t begin, std::size_t end);

// Deterministic permutation of [0, n) for the given (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Endless mini-batch iterator. Each epoch visits a fresh permutation drawn
// from (seed, epoch); the last batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::size_t first_epoch = 0);

  Batch next();
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batches_per_epoch() const noexcept;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace cap
