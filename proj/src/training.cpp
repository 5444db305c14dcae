// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "cap/errors.hpp"

namespace cap {

double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_update(const std::vector<Tensor4*>& params, const std::vector<Tensor4>& grads,
                const std::vector<bool>& mask, SgdState& state, double lr, double momentum, double weight_decay) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Tensor4* p : params) state.velocity.emplace_back(p->shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    auto w = params[i]->data();
    auto v = state.velocity[i].data();
    const auto g = grads[i].data();
    if (v.size() != w.size() || g.size() != w.size()) throw ShapeError("sgd_update: parameter shape changed");
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum * v[k] + (g[k] + weight_decay * w[k]);
      w[k] -= lr * v[k];
    }
  }
}

Var classification_loss(Tape& tape, const ForwardResult& fr, const Batch& batch) {
  return softmax_cross_entropy(tape, fr.output, batch.labels);
}

namespace {

std::size_t count_correct(const Tensor4& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.shape().c;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

}  // namespace

std::vector<EpochLoss> run_sgd(NetworkGraph& net, const Dataset& data, const LossFn& loss, const LoopConfig& config,
                               SgdState& state, const EpochCallback& on_epoch) {
  std::vector<EpochLoss> out;
  const std::size_t per_epoch = (data.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::vector<bool> mask =
      config.trainable ? *config.trainable : std::vector<bool>(parameters(net).size(), true);
  ForwardOptions options;
  options.trainable = &mask;
  for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    const auto order = epoch_permutation(data.size(), config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    const double epoch_lr = config.cosine ? cosine_lr(config.lr, epoch * per_epoch, total) : config.lr;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, data.size());
      const Batch batch = gather(data, {order.begin() + static_cast<std::ptrdiff_t>(begin),
                                        order.begin() + static_cast<std::ptrdiff_t>(end)});
      Tape tape;
      const Var x = tape.leaf(batch.images);
      const ForwardResult fr = forward(net, tape, x, options);
      const Var l = loss(tape, fr, batch);
      const double value = tape.value(l).item();
      if (!std::isfinite(value) || value > config.divergence_limit) {
        throw DivergenceError("loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(b) + " (lr " + std::to_string(config.lr) + ")");
      }
      loss_sum += value * static_cast<double>(end - begin);
      if (net.has_classifier()) correct += count_correct(tape.value(fr.output), batch.labels);
      tape.backward(l);
      std::vector<Tensor4> grads;
      grads.reserve(fr.params.size());
      for (const Var& p : fr.params) grads.push_back(tape.grad(p));
      const double lr = config.cosine ? cosine_lr(config.lr, state.steps_done, total) : config.lr;
      sgd_update(parameters(net), grads, mask, state, lr, config.momentum, config.weight_decay);
      ++state.steps_done;
    }
    const double n = static_cast<double>(data.size());
    out.push_back(EpochLoss{epoch, epoch_lr, loss_sum / n, static_cast<double>(correct) / n});
    state.epochs_done = epoch + 1;
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

double evaluate_accuracy(const NetworkGraph& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, data.size());
    const Batch b = slice(data, begin, end);
    correct += count_correct(predict(net, b.images), b.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> train_classifier(NetworkGraph& net, const Dataset& train, const Dataset& test,
                                           const LoopConfig& config, SgdState& state) {
  if (!net.has_classifier()) throw ArgumentError("train_classifier needs a network with a linear head");
  if (net.num_classes() != train.num_classes) {
    throw ValidationError("network has " + std::to_string(net.num_classes()) + " outputs, data has " +
                          std::to_string(train.num_classes) + " classes");
  }
  std::vector<EpochMetrics> rows;
  run_sgd(net, train, classification_loss, config, state, [&](const EpochLoss& l) {
    rows.push_back(EpochMetrics{l.epoch, l.lr, l.mean_loss, l.train_accuracy, evaluate_accuracy(net, test)});
  });
  return rows;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream out;
  out << kMetricsCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.epoch << "," << fmt(r.lr, 8) << "," << fmt(r.train_loss, 8) << "," << fmt(r.train_accuracy, 6) << ","
        << fmt(r.test_accuracy, 6) << "\n";
  }
  return out.str();
}

}  // namespace cap
