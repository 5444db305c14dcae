// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/compression.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/training.hpp"

namespace cap {

namespace {

constexpr double kNormFloor = 1e-12;

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": student " + a.str() + " vs teacher " + b.str());
}

Var apply(Tape& tape, Var x, Activation g) { return g == Activation::kRelu ? relu(tape, x) : x; }

std::string join_ids(const std::set<int>& ids) {
  std::ostringstream s;
  for (int id : ids) s << (s.tellp() > 0 ? "," : "") << id;
  return s.str();
}

}  // namespace

double reconstruction_loss(const Tensor4& student, const Tensor4& teacher, bool normalize) {
  require_same_shape(student.shape(), teacher.shape(), "reconstruction_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < student.numel(); ++i) {
    const double d = teacher[i] - student[i];
    s += d * d;
  }
  return normalize ? s / std::max(squared_norm(teacher.data()), kNormFloor) : s;
}

Var reconstruction_loss(Tape& tape, Var student, const Tensor4& teacher, bool normalize) {
  require_same_shape(tape.value(student).shape(), teacher.shape(), "reconstruction_loss");
  const Var diff = sub(tape, student, tape.leaf(teacher));
  const Var l = frobenius_sq(tape, diff);
  return normalize ? scale(tape, l, 1.0 / std::max(squared_norm(teacher.data()), kNormFloor)) : l;
}

double mixture_loss(std::span<const double> recon_terms, double class_loss, double gamma) {
  if (gamma < 0.0) throw ArgumentError("mixture_loss: gamma must be non-negative");
  double s = 0.0;
  for (double r : recon_terms) s += r;
  return s + gamma * class_loss;
}

Var mixture_loss(Tape& tape, std::span<const Var> recon_terms, std::optional<Var> class_loss, double gamma) {
  if (gamma < 0.0) throw ArgumentError("mixture_loss: gamma must be non-negative");
  std::optional<Var> total;
  for (const Var& r : recon_terms) total = total ? add(tape, *total, r) : r;
  if (class_loss && gamma != 0.0) {
    const Var c = scale(tape, *class_loss, gamma);
    total = total ? add(tape, *total, c) : c;
  }
  return total ? *total : tape.leaf(Tensor4::scalar(0.0));
}

Var student_block_forward(Tape& tape, Var input, const ConvLayer& layer, Var projection, const ConvLayer& next,
                          Activation g) {
  const Shape4& p = tape.value(projection).shape();
  if (p.n != layer.c_out || next.c_in != layer.c_out || p.c > p.n) {
    throw ShapeError("student_block_forward: projection " + p.str() + " does not fit conv " +
                     std::to_string(layer.c_in) + "->" + std::to_string(layer.c_out) + " followed by " +
                     std::to_string(next.c_in) + "->" + std::to_string(next.c_out));
  }
  auto conv = [&](Var x, const ConvLayer& c) {
    const Var w = tape.leaf(c.weight);
    std::optional<Var> b;
    if (c.has_bias) b = tape.leaf(c.bias);
    return conv2d(tape, x, w, b, c.stride, c.padding);
  };
  Var y = apply(tape, channel_project(tape, conv(input, layer), projection), g);
  y = channel_project(tape, y, transpose_matrix(tape, projection));
  return apply(tape, conv(y, next), g);
}

Tensor4 student_block_forward(const Tensor4& input, const ConvLayer& layer, const Matrix& projection,
                              const ConvLayer& next, Activation g) {
  Tape tape;
  const Var out = student_block_forward(tape, tape.leaf(input), layer, tape.leaf(projection.to_tensor()), next, g);
  return tape.value(out);
}

FoldedKernels fold_kernels(const ConvLayer& layer, const Matrix& projection, const ConvLayer& next) {
  const std::size_t c = projection.rows();
  const std::size_t r = projection.cols();
  if (c != layer.c_out || c != next.c_in || r == 0 || r > c) {
    throw ShapeError("fold_kernels: projection " + std::to_string(c) + "x" + std::to_string(r) + " does not fit conv " +
                     std::to_string(layer.c_in) + "->" + std::to_string(layer.c_out) + " followed by " +
                     std::to_string(next.c_in) + "->" + std::to_string(next.c_out));
  }
  FoldedKernels out;
  const std::size_t k2 = layer.kernel * layer.kernel;
  const std::size_t per_out = layer.c_in * k2;
  out.weight_out = Tensor4({r, layer.c_in, layer.kernel, layer.kernel});
  for (std::size_t j = 0; j < r; ++j) {
    double* dst = out.weight_out.data().data() + j * per_out;
    for (std::size_t m = 0; m < c; ++m) {
      const double p = projection(m, j);
      const double* src = layer.weight.data().data() + m * per_out;
      for (std::size_t q = 0; q < per_out; ++q) dst[q] += p * src[q];
    }
  }
  if (layer.has_bias) {
    out.bias_out = Tensor4({r, 1, 1, 1});
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t m = 0; m < c; ++m) out.bias_out[j] += projection(m, j) * layer.bias[m];
  }
  const std::size_t nk2 = next.kernel * next.kernel;
  out.next_weight_in = Tensor4({next.c_out, r, next.kernel, next.kernel});
  for (std::size_t o = 0; o < next.c_out; ++o) {
    for (std::size_t j = 0; j < r; ++j) {
      double* dst = out.next_weight_in.data().data() + (o * r + j) * nk2;
      for (std::size_t m = 0; m < c; ++m) {
        const double p = projection(m, j);
        const double* src = next.weight.data().data() + (o * c + m) * nk2;
        for (std::size_t q = 0; q < nk2; ++q) dst[q] += p * src[q];
      }
    }
  }
  return out;
}

void fold_into(NetworkGraph& net, int id, const Matrix& projection) {
  const auto succ = conv_successor(net, id);
  if (!succ) throw ValidationError("conv " + std::to_string(id) + " has no successor to fold into");
  ConvLayer& layer = conv_at(net, id);
  ConvLayer& next = conv_at(net, *succ);
  FoldedKernels f = fold_kernels(layer, projection, next);
  layer.c_out = projection.cols();
  layer.weight = std::move(f.weight_out);
  if (layer.has_bias) layer.bias = std::move(f.bias_out);
  next.c_in = projection.cols();
  next.weight = std::move(f.next_weight_in);
}

TeacherSnapshot::TeacherSnapshot(const NetworkGraph& net) : net_(net), hash_(parameter_hash(net)) {}

TeacherTargets TeacherSnapshot::targets(const Tensor4& images) const {
  Tape tape;
  const ForwardResult fr = forward(net_, tape, tape.leaf(images));
  TeacherTargets t;
  for (const auto& [id, v] : fr.taps) t.taps.emplace(id, tape.value(v));
  t.output = tape.value(fr.output);
  return t;
}

int supervision_point(const NetworkGraph& net, int id, const std::set<int>& compressed) {
  int cur = id;
  for (;;) {
    const auto next = conv_successor(net, cur);
    if (!next) throw ValidationError("conv " + std::to_string(cur) + " has no successor to supervise at");
    if (!compressed.contains(*next)) return *next;
    cur = *next;
  }
}

std::vector<int> supervision_points(const NetworkGraph& net, const std::set<int>& layers,
                                    const std::set<int>& compressed) {
  std::set<int> points;
  for (int id : layers) points.insert(supervision_point(net, id, compressed));
  return {points.begin(), points.end()};
}

Var compression_objective(Tape& tape, const ForwardResult& fr, const TeacherTargets& targets, const Batch& batch,
                          const Objective& objective, std::vector<double>* terms) {
  std::vector<Var> recon;
  for (int p : objective.points) {
    recon.push_back(reconstruction_loss(tape, fr.taps.at(p), targets.taps.at(p), objective.normalize));
    if (terms) terms->push_back(tape.value(recon.back()).item());
  }
  std::optional<Var> ce;
  if (objective.gamma > 0.0 && tape.value(fr.output).shape().h == 1 && !batch.labels.empty() &&
      tape.value(fr.output).shape().w == 1 && tape.value(fr.output).shape().c > 1) {
    ce = softmax_cross_entropy(tape, fr.output, batch.labels);
  }
  return mixture_loss(tape, recon, ce, objective.gamma);
}

ProjectionStats optimize_projection(const NetworkGraph& student, std::map<int, ProjectionProxy>& proxies,
                                    const std::set<int>& trainable, const CompressionPlan& plan,
                                    const TeacherSnapshot& teacher, BatchStream& stream, std::size_t steps) {
  std::set<int> active;
  for (const auto& [id, p] : proxies) active.insert(id);
  for (int id : trainable) {
    if (!active.contains(id)) throw ArgumentError("trainable conv " + std::to_string(id) + " has no proxy");
  }
  const bool has_head = student.has_classifier();
  Objective objective{supervision_points(student, active, active), has_head ? plan.gamma : 0.0,
                      plan.normalize_recon};
  const std::vector<bool> frozen(parameters(student).size(), false);

  ProjectionStats stats;
  std::uint64_t perturbations_before = 0;
  for (const auto& [id, p] : proxies) perturbations_before += p.perturbations();

  for (std::size_t step = 0; step < steps; ++step) {
    const Batch batch = stream.next();
    const TeacherTargets targets = teacher.targets(batch.images);
    Tape tape;
    std::map<int, Var> projections;
    std::map<int, Var> xs;
    for (auto& [id, proxy] : proxies) {
      const BoundProxy b = bind_proxy(tape, proxy, trainable.contains(id));
      projections[id] = b.projection;
      xs[id] = b.x;
      stats.max_orthonormality_error = std::max(
          stats.max_orthonormality_error, orthonormality_error(Matrix::from_tensor(tape.value(b.projection))));
    }
    ForwardOptions options;
    options.projections = &projections;
    options.trainable = &frozen;
    const ForwardResult fr = forward(student, tape, tape.leaf(batch.images), options);
    const Var loss = compression_objective(tape, fr, targets, batch, objective);
    const double value = tape.value(loss).item();
    if (!std::isfinite(value) || value > 1e6) {
      throw DivergenceError("projection optimization diverged at step " + std::to_string(step) + ": loss " +
                            std::to_string(value) + ", layers [" + join_ids(active) + "], lr " +
                            std::to_string(plan.projection_lr));
    }
    stats.losses.push_back(value);
    ++stats.steps;
    if (trainable.empty()) continue;
    tape.backward(loss);
    for (int id : trainable) {
      sgd_step(proxies.at(id), Matrix::from_tensor(tape.grad(xs.at(id))), plan.projection_lr,
               plan.projection_momentum);
    }
  }
  for (const auto& [id, proxy] : proxies) {
    stats.max_orthonormality_error = std::max(stats.max_orthonormality_error, orthonormality_error(phi(proxy)));
  }
  std::uint64_t perturbations_after = 0;
  for (const auto& [id, p] : proxies) perturbations_after += p.perturbations();
  stats.reperturbations = perturbations_after - perturbations_before;
  return stats;
}

Matrix activation_pca(const NetworkGraph& net, int id, std::size_t rank, const Dataset& data, std::size_t samples) {
  const std::size_t n = std::min(samples, data.size());
  if (n == 0) throw ArgumentError("activation_pca needs data");
  Matrix gram;
  for (std::size_t begin = 0; begin < n; begin += 64) {
    const Batch b = slice(data, begin, std::min(begin + 64, n));
    Tape tape;
    const ForwardResult fr = forward(net, tape, tape.leaf(b.images));
    const Tensor4& a = tape.value(fr.taps.at(id));
    const Shape4& s = a.shape();
    if (gram.rows() == 0) gram = Matrix(s.c, s.c);
    const std::size_t plane = s.h * s.w;
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t p = 0; p < s.c; ++p) {
        const double* xp = a.data().data() + a.index(i, p, 0, 0);
        for (std::size_t q = p; q < s.c; ++q) {
          const double* xq = a.data().data() + a.index(i, q, 0, 0);
          double dot = 0.0;
          for (std::size_t k = 0; k < plane; ++k) dot += xp[k] * xq[k];
          gram(p, q) += dot;
        }
      }
    }
  }
  for (std::size_t p = 0; p < gram.rows(); ++p)
    for (std::size_t q = 0; q < p; ++q) gram(p, q) = gram(q, p);
  const SvdFactors f = thin_svd(gram);
  Matrix out(gram.rows(), rank);
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = 0; j < rank; ++j) out(i, j) = f.u(i, j);
  return out;
}

Matrix weight_basis(const ConvLayer& layer, std::size_t rank) {
  const std::size_t cols = layer.c_in * layer.kernel * layer.kernel;
  Matrix w(layer.c_out, cols, layer.weight.storage());
  return leading_left_singular_vectors(w, rank);
}

Matrix spread_spectrum(Matrix basis) {
  const auto r = static_cast<double>(basis.cols());
  for (std::size_t i = 0; i < basis.rows(); ++i)
    for (std::size_t j = 0; j < basis.cols(); ++j) basis(i, j) *= 1.0 - 0.5 * static_cast<double>(j) / r;
  return basis;
}

std::vector<bool> relaxation_mask(const NetworkGraph& net, const std::set<int>& compressed) {
  std::set<int> successors;
  for (int id : compressed)
    if (const auto s = conv_successor(net, id)) successors.insert(*s);
  std::vector<bool> mask;
  for (const ParamInfo& info : parameter_info(net)) {
    const bool own = info.conv_id >= 0 && compressed.contains(info.conv_id);
    const bool input_side = info.conv_id >= 0 && !info.is_bias && successors.contains(info.conv_id);
    mask.push_back(own || input_side);
  }
  return mask;
}

namespace {

RelaxationStats train_against_teacher(NetworkGraph& net, const std::set<int>& compressed, const CompressionPlan& plan,
                                      const TeacherSnapshot& teacher, const Dataset& data, LoopConfig config) {
  RelaxationStats stats;
  if (config.epochs == 0 || compressed.empty()) return stats;
  const Objective objective{supervision_points(net, compressed, compressed),
                            net.has_classifier() ? plan.gamma : 0.0, plan.normalize_recon};
  const LossFn loss = [&](Tape& tape, const ForwardResult& fr, const Batch& batch) {
    return compression_objective(tape, fr, teacher.targets(batch.images), batch, objective);
  };
  SgdState state;
  for (const EpochLoss& e : run_sgd(net, data, loss, config, state)) stats.epoch_losses.push_back(e.mean_loss);
  return stats;
}

}  // namespace

RelaxationStats kernel_relaxation(NetworkGraph& net, const std::set<int>& compressed, const CompressionPlan& plan,
                                  const TeacherSnapshot& teacher, const Dataset& data) {
  const std::vector<bool> mask = relaxation_mask(net, compressed);
  LoopConfig config;
  config.epochs = plan.relaxation_epochs;
  config.batch_size = plan.batch_size;
  config.lr = plan.relaxation_lr;
  config.momentum = plan.relaxation_momentum;
  config.cosine = false;
  config.seed = plan.seed + 101;
  config.trainable = &mask;
  return train_against_teacher(net, compressed, plan, teacher, data, config);
}

RelaxationStats fine_tune(NetworkGraph& net, const std::set<int>& compressed, const CompressionPlan& plan,
                          const TeacherSnapshot& teacher, const Dataset& data) {
  LoopConfig config;
  config.epochs = plan.finetune_epochs;
  config.batch_size = plan.batch_size;
  config.lr = plan.finetune_lr;
  config.momentum = plan.finetune_momentum;
  config.cosine = true;
  config.seed = plan.seed + 202;
  return train_against_teacher(net, compressed, plan, teacher, data, config);
}

double reconstruction_error(const NetworkGraph& student, const TeacherSnapshot& teacher, const Dataset& data,
                            int point, bool normalize) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += 128) {
    const Batch b = slice(data, begin, std::min(begin + 128, data.size()));
    Tape tape;
    const ForwardResult fr = forward(student, tape, tape.leaf(b.images));
    const Tensor4& s = tape.value(fr.taps.at(point));
    const TeacherTargets t = teacher.targets(b.images);
    const Tensor4& target = t.taps.at(point);
    num += reconstruction_loss(s, target, false);
    den += squared_norm(target.data());
  }
  return normalize ? num / std::max(den, kNormFloor) : num;
}

CompressionResult compress_network(const NetworkGraph& net, const CompressionPlan& plan, const Dataset& train,
                                   const Dataset* held_out) {
  const std::map<int, std::size_t> ranks = resolve_ranks(net, plan);
  std::map<int, std::size_t> active;
  for (const auto& [id, r] : ranks)
    if (r < conv_at(net, id).c_out) active[id] = r;

  const TeacherSnapshot teacher(net);
  CompressionResult result{net, {}};
  CompressionReport& report = result.report;
  report.mode = plan.mode;
  report.cost_before = count_costs(net, 1);
  if (held_out) report.base_accuracy = evaluate_accuracy(net, *held_out);

  BatchStream stream(train, plan.batch_size, plan.seed);
  auto make_proxy = [&](int id, std::size_t r, const NetworkGraph& student) {
    const std::size_t c = conv_at(student, id).c_out;
    const std::uint64_t seed = plan.seed * 1000003ULL + static_cast<std::uint64_t>(id);
    switch (plan.init) {
      case ProxyInit::kWarmStart:
        return init_proxy(c, r, seed, spread_spectrum(weight_basis(conv_at(student, id), r)));
      case ProxyInit::kActivationPca:
        return init_proxy(c, r, seed, spread_spectrum(activation_pca(student, id, r, train, 256)));
      case ProxyInit::kRandom: break;
    }
    return init_proxy(c, r, seed);
  };
  auto merge = [&](const ProjectionStats& s) {
    report.projection.losses.insert(report.projection.losses.end(), s.losses.begin(), s.losses.end());
    report.projection.max_orthonormality_error =
        std::max(report.projection.max_orthonormality_error, s.max_orthonormality_error);
    report.projection.reperturbations += s.reperturbations;
    report.projection.steps += s.steps;
  };

  std::set<int> folded;
  if (plan.mode == CompressionMode::kSimultaneous) {
    std::map<int, ProjectionProxy> proxies;
    for (const auto& [id, r] : active) proxies.emplace(id, make_proxy(id, r, result.network));
    std::map<std::size_t, int> per_block;
    for (const auto& [id, r] : active)
      if (const auto b = block_of(net, id)) ++per_block[*b];
    const bool split = plan.two_round && std::any_of(per_block.begin(), per_block.end(),
                                                     [](const auto& kv) { return kv.second > 1; });
    if (split) {
      std::set<int> odd, even;
      for (const auto& [id, r] : active) (position_in_block(net, id) % 2 == 1 ? odd : even).insert(id);
      std::map<int, ProjectionProxy> first;
      for (int id : odd) first.emplace(id, proxies.at(id));
      merge(optimize_projection(result.network, first, odd, plan, teacher, stream, plan.projection_steps));
      for (int id : odd) proxies.insert_or_assign(id, first.at(id));
      merge(optimize_projection(result.network, proxies, even, plan, teacher, stream, plan.projection_steps));
    } else {
      std::set<int> all;
      for (const auto& [id, r] : active) all.insert(id);
      merge(optimize_projection(result.network, proxies, all, plan, teacher, stream, plan.projection_steps));
    }
    for (const auto& [id, proxy] : proxies) {
      fold_into(result.network, id, phi(proxy));
      folded.insert(id);
    }
  } else {
    for (const auto& [id, r] : active) {
      std::map<int, ProjectionProxy> proxies;
      proxies.emplace(id, make_proxy(id, r, result.network));
      merge(optimize_projection(result.network, proxies, {id}, plan, teacher, stream, plan.projection_steps));
      fold_into(result.network, id, phi(proxies.at(id)));
      folded.insert(id);
    }
  }

  const Dataset& eval_data = held_out ? *held_out : train;
  for (const auto& [id, r] : ranks) {
    LayerOutcome o;
    o.layer = id;
    o.channels = conv_at(net, id).c_out;
    o.rank = r;
    o.supervision_point = supervision_point(net, id, folded);
    o.recon_error = folded.contains(id)
                        ? reconstruction_error(result.network, teacher, eval_data, o.supervision_point,
                                               plan.normalize_recon)
                        : 0.0;
    report.layers.push_back(o);
  }

  report.relaxation_epochs = plan.relaxation_epochs;
  report.relaxation = kernel_relaxation(result.network, folded, plan, teacher, train);
  if (held_out) report.accuracy_no_ft = evaluate_accuracy(result.network, *held_out);
  report.finetune_epochs = plan.finetune_epochs;
  if (plan.finetune_epochs > 0) {
    report.finetune = fine_tune(result.network, folded, plan, teacher, train);
    if (held_out) report.accuracy_ft = evaluate_accuracy(result.network, *held_out);
  }
  report.cost_after = count_costs(result.network, 1);
  report.teacher_intact = teacher.intact();
  return result;
}

nlohmann::ordered_json to_json(const CompressionReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["mode"] = mode_name(report.mode);
  j["flops_pct"] = percent_of(report.cost_after.flops, report.cost_before.flops);
  j["param_pct"] = percent_of(report.cost_after.param_count, report.cost_before.param_count);
  j["peak_mem_pct"] = percent_of(report.cost_after.peak_activation_bytes, report.cost_before.peak_activation_bytes);
  j["base_acc"] = opt(report.base_accuracy);
  j["acc_no_ft"] = opt(report.accuracy_no_ft);
  j["acc_ft"] = opt(report.accuracy_ft);
  j["relaxation_epochs"] = report.relaxation_epochs;
  j["finetune_epochs"] = report.finetune_epochs;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : report.layers) {
    nlohmann::ordered_json e;
    e["layer"] = l.layer;
    e["channels"] = l.channels;
    e["rank"] = l.rank;
    e["supervision_point"] = l.supervision_point;
    e["recon_error"] = l.recon_error;
    layers.push_back(e);
  }
  j["layers"] = layers;
  nlohmann::ordered_json proj;
  proj["steps"] = report.projection.steps;
  proj["first_loss"] = report.projection.losses.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(report.projection.losses.front());
  proj["final_loss"] = report.projection.losses.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(report.projection.losses.back());
  proj["max_orthonormality_error"] = report.projection.max_orthonormality_error;
  proj["reperturbations"] = report.projection.reperturbations;
  j["projection"] = proj;
  j["relaxation_losses"] = report.relaxation.epoch_losses;
  j["finetune_losses"] = report.finetune.epoch_losses;
  j["teacher_intact"] = report.teacher_intact;
  j["cost_before"] = to_json(report.cost_before);
  j["cost_after"] = to_json(report.cost_after);
  return j;
}

}  // namespace cap
