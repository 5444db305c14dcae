// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cap/autodiff.hpp"
#include "cap/data.hpp"
#include "cap/linalg.hpp"
#include "cap/metrics.hpp"
#include "cap/network.hpp"
#include "cap/plan.hpp"
#include "cap/proxy.hpp"

namespace cap {

// ||teacher - student||_F^2, divided by max(||teacher||_F^2, 1e-12) when
// normalize is set.
double reconstruction_loss(const Tensor4& student, const Tensor4& teacher, bool normalize);
Var reconstruction_loss(Tape& tape, Var student, const Tensor4& teacher, bool normalize);

// sum(recon_terms) + gamma * class_loss.
double mixture_loss(std::span<const double> recon_terms, double class_loss, double gamma);
Var mixture_loss(Tape& tape, std::span<const Var> recon_terms, std::optional<Var> class_loss, double gamma);

enum class Activation { kRelu, kIdentity };

// G(conv(G(project(conv(I, W, b), P)), P^T W_next) + b_next): layer i with its
// output projected to r channels, followed by the next conv reading them back
// through P^T.
Var student_block_forward(Tape& tape, Var input, const ConvLayer& layer, Var projection, const ConvLayer& next,
                          Activation g = Activation::kRelu);
Tensor4 student_block_forward(const Tensor4& input, const ConvLayer& layer, const Matrix& projection,
                              const ConvLayer& next, Activation g = Activation::kRelu);

struct FoldedKernels {
  Tensor4 weight_out;      // [r, c_in, k, k]
  Tensor4 bias_out;        // [r, 1, 1, 1]; empty when the layer has no bias
  Tensor4 next_weight_in;  // [c_next, r, k', k']
};

FoldedKernels fold_kernels(const ConvLayer& layer, const Matrix& projection, const ConvLayer& next);
// Rewrites conv `id` and its successor in place with the folded kernels.
void fold_into(NetworkGraph& net, int id, const Matrix& projection);

struct TeacherTargets {
  std::map<int, Tensor4> taps;
  Tensor4 output;
};

// Frozen copy of the uncompressed network.
class TeacherSnapshot {
 public:
  explicit TeacherSnapshot(const NetworkGraph& net);

  const NetworkGraph& network() const noexcept { return net_; }
  std::uint64_t hash() const noexcept { return hash_; }
  bool intact() const { return parameter_hash(net_) == hash_; }
  TeacherTargets targets(const Tensor4& images) const;

 private:
  NetworkGraph net_;
  std::uint64_t hash_;
};

// Where layer `id`'s reconstruction is measured: the post-activation of the
// first conv downstream of it that is not itself compressed (for residual
// nets this is the block output).
int supervision_point(const NetworkGraph& net, int id, const std::set<int>& compressed);
std::vector<int> supervision_points(const NetworkGraph& net, const std::set<int>& layers,
                                    const std::set<int>& compressed);

struct Objective {
  std::vector<int> points;
  double gamma = 1.0;
  bool normalize = true;
};

// Mixture loss over the objective's supervision points. `terms` receives the
// individual reconstruction values when non-null.
Var compression_objective(Tape& tape, const ForwardResult& fr, const TeacherTargets& targets, const Batch& batch,
                          const Objective& objective, std::vector<double>* terms = nullptr);

struct ProjectionStats {
  std::vector<double> losses;
  double max_orthonormality_error = 0.0;
  std::size_t reperturbations = 0;
  std::size_t steps = 0;
};

// SGD on the proxies in `trainable` (a subset of `proxies`' keys) for `steps`
// mini-batches with all kernels frozen. Every proxy in `proxies` is applied.
ProjectionStats optimize_projection(const NetworkGraph& student, std::map<int, ProjectionProxy>& proxies,
                                    const std::set<int>& trainable, const CompressionPlan& plan,
                                    const TeacherSnapshot& teacher, BatchStream& stream, std::size_t steps);

// Top-r left singular vectors of conv `id`'s post-activation output over the
// first `samples` images of `data`.
Matrix activation_pca(const NetworkGraph& net, int id, std::size_t rank, const Dataset& data, std::size_t samples);

// Top-r left singular vectors of the weight unfolded to [c_out, c_in*k*k].
Matrix weight_basis(const ConvLayer& layer, std::size_t rank);

// Scales column j of an orthonormal basis by 1 - j/(2r). Phi of the result is
// the basis itself, but the singular values are distinct, so the proxy starts
// away from the degenerate-spectrum guard.
Matrix spread_spectrum(Matrix basis);

struct RelaxationStats {
  std::vector<double> epoch_losses;
};

// Trains only the folded kernels: W and b of each compressed conv and the
// input-side W of its successor.
RelaxationStats kernel_relaxation(NetworkGraph& net, const std::set<int>& compressed, const CompressionPlan& plan,
                                  const TeacherSnapshot& teacher, const Dataset& data);

// Mixture-loss training of every parameter with a cosine schedule.
RelaxationStats fine_tune(NetworkGraph& net, const std::set<int>& compressed, const CompressionPlan& plan,
                          const TeacherSnapshot& teacher, const Dataset& data);

std::vector<bool> relaxation_mask(const NetworkGraph& net, const std::set<int>& compressed);

// Reconstruction error at one supervision point summed over the whole set:
// sum ||t - s||^2 / max(sum ||t||^2, 1e-12) (unnormalized when normalize is off).
double reconstruction_error(const NetworkGraph& student, const TeacherSnapshot& teacher, const Dataset& data,
                            int point, bool normalize = true);

struct LayerOutcome {
  int layer = 0;
  std::size_t channels = 0;
  std::size_t rank = 0;
  int supervision_point = 0;
  double recon_error = 0.0;  // held-out, after folding and before relaxation
};

struct CompressionReport {
  CompressionMode mode = CompressionMode::kCascadedGreedy;
  std::vector<LayerOutcome> layers;
  ProjectionStats projection;
  RelaxationStats relaxation;
  RelaxationStats finetune;
  std::size_t relaxation_epochs = 0;
  std::size_t finetune_epochs = 0;
  std::optional<double> base_accuracy;
  std::optional<double> accuracy_no_ft;
  std::optional<double> accuracy_ft;
  CostReport cost_before;
  CostReport cost_after;
  bool teacher_intact = true;
};

struct CompressionResult {
  NetworkGraph network;
  CompressionReport report;
};

// Validates the plan, then optimizes projections per mode, folds them,
// relaxes the folded kernels and optionally fine-tunes. Accuracies are filled
// in when `held_out` is given.
CompressionResult compress_network(const NetworkGraph& net, const CompressionPlan& plan, const Dataset& train,
                                   const Dataset* held_out = nullptr);

nlohmann::ordered_json to_json(const CompressionReport& report);

}  // namespace cap
