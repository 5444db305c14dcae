// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "cap/tensor.hpp"

namespace cap {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode gradient tape (Wengert list). Nodes are appended in execution
// order, so the recording order is already a topological order; backward()
// walks it in reverse. A node requires a gradient when any of its inputs does;
// nodes that do not are recorded without a backward closure, which makes
// inference through a tape essentially free.
//
// A tape belongs to a single thread. Independent tapes share no state.
class Tape {
 public:
  // Receives the gradient flowing into the node and accumulates into the
  // node's inputs through Tape::accumulate_grad.
  using BackwardFn = std::function<void(Tape&, const Tensor4& out_grad)>;

  Var leaf(Tensor4 value, bool requires_grad = false);
  Var record(Tensor4 value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor4 value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor4& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() loss w.r.t. v; zeros when v did not
  // contribute to the loss.
  Tensor4 grad(Var v) const;

  // Adds g into v's gradient buffer. No-op when v does not require a gradient.
  void accumulate_grad(Var v, const Tensor4& g);
  // Mutable gradient buffer for in-place accumulation (zero-initialized on first use).
  Tensor4& grad_buffer(Var v);

  // Requires a [1,1,1,1] loss. Clears gradients left by a previous call.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Cross-correlation. weight is [c_out, c_in, k, k], bias has c_out elements.
Var conv2d(Tape& tape, Var input, Var weight, std::optional<Var> bias, int stride, int padding);
Var relu(Tape& tape, Var x);
// P is a [c, r, 1, 1] matrix; output channel j = sum_m P[m, j] * x[m].
Var channel_project(Tape& tape, Var x, Var projection);
Var transpose_matrix(Tape& tape, Var m);
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);
Var sum(Tape& tape, Var a);
Var frobenius_sq(Tape& tape, Var a);
// Mean cross-entropy of softmax(logits) over the batch; logits are [n, k, 1, 1].
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);
Var avg_pool(Tape& tape, Var x, int kernel, int stride);
Var global_avg_pool(Tape& tape, Var x);
Var flatten(Tape& tape, Var x);
// x is [n, in, 1, 1], weight [out, in, 1, 1], bias out elements.
Var linear(Tape& tape, Var x, Var weight, std::optional<Var> bias);

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int padding);

}  // namespace cap
