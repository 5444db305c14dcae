// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "cap/errors.hpp"

namespace cap {

namespace {

constexpr std::size_t kSide = 32;
constexpr std::size_t kChannels = 3;

struct Wave {
  double fx, fy, phase, amplitude, offset;
};

}  // namespace

Dataset make_synthetic_blobs(std::size_t count, std::size_t num_classes, double noise, std::uint64_t prototype_seed,
                             std::uint64_t sample_seed) {
  if (num_classes < 2) throw ArgumentError("synthetic_blobs needs at least 2 classes");
  std::mt19937_64 proto_rng(prototype_seed);
  std::uniform_int_distribution<int> freq(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::array<Wave, kChannels>> protos(num_classes);
  for (auto& p : protos) {
    for (auto& w : p) {
      w.fx = freq(proto_rng) * (unit(proto_rng) < 0.5 ? -1.0 : 1.0);
      w.fy = freq(proto_rng);
      w.phase = 2.0 * std::numbers::pi * unit(proto_rng);
      w.amplitude = 0.2 + 0.2 * unit(proto_rng);
      w.offset = 0.3 + 0.4 * unit(proto_rng);
    }
  }

  Dataset data;
  data.num_classes = num_classes;
  data.images = Tensor4({count, kChannels, kSide, kSide});
  data.labels.resize(count);
  std::mt19937_64 rng(sample_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(i % num_classes);
    data.labels[i] = label;
    const double jitter_amp = 0.7 + 0.6 * unit(rng);
    const double jitter_phase = 0.6 * (unit(rng) - 0.5);
    for (std::size_t c = 0; c < kChannels; ++c) {
      const Wave& w = protos[static_cast<std::size_t>(label)][c];
      for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
          const double arg = 2.0 * std::numbers::pi * (w.fx * static_cast<double>(x) + w.fy * static_cast<double>(y)) /
                                 static_cast<double>(kSide) +
                             w.phase + jitter_phase;
          const double v = w.offset + jitter_amp * w.amplitude * std::sin(arg) + noise * gauss(rng);
          data.images.at(i, c, y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return data;
}

Dataset read_cifar10(const std::vector<std::string>& files, std::size_t limit) {
  constexpr std::size_t kPixels = kChannels * kSide * kSide;
  constexpr std::size_t kRecord = kPixels + 1;
  std::vector<unsigned char> raw;
  for (const auto& f : files) {
    if (raw.size() >= limit * kRecord) break;
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR-10 file '" + f + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % kRecord != 0) throw IoError("'" + f + "' is not a CIFAR-10 binary batch");
    raw.insert(raw.end(), buf.begin(), buf.end());
  }
  const std::size_t n = std::min(limit, raw.size() / kRecord);
  if (n < limit) {
    throw IoError("requested " + std::to_string(limit) + " CIFAR-10 records, found " + std::to_string(n));
  }
  Dataset data;
  data.num_classes = 10;
  data.images = Tensor4({n, kChannels, kSide, kSide});
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + i * kRecord;
    if (rec[0] > 9) throw IoError("bad CIFAR-10 label " + std::to_string(rec[0]) + " in record " + std::to_string(i));
    data.labels[i] = rec[0];
    for (std::size_t p = 0; p < kPixels; ++p) data.images[i * kPixels + p] = rec[1 + p] / 255.0;
  }
  return data;
}

void normalize(Dataset& data, const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
  const Shape4& s = data.images.shape();
  const std::size_t plane = s.h * s.w;
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double m = mean[c % 3];
      const double inv = 1.0 / stddev[c % 3];
      double* p = data.images.data().data() + data.images.index(i, c, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - m) * inv;
    }
  }
}

DataSplits load_data(const DataConfig& config) {
  DataSplits splits;
  if (config.kind == "synthetic_blobs") {
    splits.train = make_synthetic_blobs(config.train_size, config.num_classes, config.noise, config.seed,
                                        config.seed * 2 + 1);
    splits.test = make_synthetic_blobs(config.test_size, config.num_classes, config.noise, config.seed,
                                       config.seed * 2 + 2);
  } else if (config.kind == "cifar10_binary") {
    namespace fs = std::filesystem;
    std::vector<std::string> train_files;
    for (int b = 1; b <= 5; ++b) train_files.push_back((fs::path(config.path) / ("data_batch_" + std::to_string(b) + ".bin")).string());
    splits.train = read_cifar10(train_files, config.train_size);
    splits.test = read_cifar10({(fs::path(config.path) / "test_batch.bin").string()}, config.test_size);
  } else {
    throw ArgumentError("unknown dataset kind '" + config.kind + "'");
  }
  normalize(splits.train, config.mean, config.stddev);
  normalize(splits.test, config.mean, config.stddev);
  return splits;
}

Batch gather(const Dataset& data, const std::vector<std::size_t>& indices) {
  const Shape4& s = data.images.shape();
  const std::size_t per = s.c * s.h * s.w;
  Batch b;
  b.images = Tensor4({indices.size(), s.c, s.h, s.w});
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = data.images.data().subspan(indices[i] * per, per);
    std::copy(src.begin(), src.end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(data.labels[indices[i]]);
  }
  return b;
}

Batch slice(const Dataset& data, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(data, idx);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  // Fisher-Yates by hand: std::shuffle's draw sequence is implementation defined.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::size_t first_epoch)
    : data_(&data), batch_size_(batch_size), seed_(seed), epoch_(first_epoch) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (data.size() == 0) throw ArgumentError("cannot stream an empty dataset");
  order_ = epoch_permutation(data.size(), seed_, epoch_);
}

std::size_t BatchStream::batches_per_epoch() const noexcept {
  return (data_->size() + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::next() {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    order_ = epoch_permutation(data_->size(), seed_, epoch_);
    cursor_ = 0;
  }
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return gather(*data_, idx);
}

}  // namespace cap
