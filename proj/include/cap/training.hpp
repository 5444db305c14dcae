// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cap/autodiff.hpp"
#include "cap/data.hpp"
#include "cap/network.hpp"

namespace cap {

// Momentum buffers parallel to parameters(net), plus the number of completed
// epochs so a resumed run replays the same batch order.
struct SgdState {
  std::vector<Tensor4> velocity;
  std::size_t epochs_done = 0;
  std::size_t steps_done = 0;
};

struct LoopConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine = true;
  std::uint64_t seed = 1;
  // Parameters that are updated; null means all of them.
  const std::vector<bool>* trainable = nullptr;
  // Losses above this (or non-finite) abort with DivergenceError.
  double divergence_limit = 1e6;
};

double cosine_lr(double base, std::size_t step, std::size_t total_steps);

// v = momentum * v + (g + wd * w); w -= lr * v for every masked parameter.
void sgd_update(const std::vector<Tensor4*>& params, const std::vector<Tensor4>& grads,
                const std::vector<bool>& mask, SgdState& state, double lr, double momentum, double weight_decay);

using LossFn = std::function<Var(Tape&, const ForwardResult&, const Batch&)>;

struct EpochLoss {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // on the batches seen, classifiers only
};

// Runs epochs [state.epochs_done, config.epochs) of SGD on `loss`. The learning
// rate follows a cosine schedule over all config.epochs when enabled.
using EpochCallback = std::function<void(const EpochLoss&)>;
std::vector<EpochLoss> run_sgd(NetworkGraph& net, const Dataset& data, const LossFn& loss, const LoopConfig& config,
                               SgdState& state, const EpochCallback& on_epoch = {});

Var classification_loss(Tape& tape, const ForwardResult& fr, const Batch& batch);

double evaluate_accuracy(const NetworkGraph& net, const Dataset& data, std::size_t batch_size = 128);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline constexpr const char* kMetricsCsvHeader = "epoch,lr,train_loss,train_accuracy,test_accuracy";

// Baseline classifier training with cross-entropy.
std::vector<EpochMetrics> train_classifier(NetworkGraph& net, const Dataset& train, const Dataset& test,
                                           const LoopConfig& config, SgdState& state);

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

// Fixed-precision decimal formatting used by every CSV writer.
std::string fmt(double v, int digits = 6);

}  // namespace cap
