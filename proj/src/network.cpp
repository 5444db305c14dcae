// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/network.hpp"

#include <cmath>
#include <random>

#include "cap/errors.hpp"

namespace cap {

bool NetworkGraph::has_classifier() const {
  return !layers.empty() && std::holds_alternative<LinearLayer>(layers.back());
}

std::size_t NetworkGraph::num_classes() const {
  return has_classifier() ? std::get<LinearLayer>(layers.back()).out : 0;
}

bool NetworkGraph::is_residual() const {
  for (const auto& layer : layers)
    if (std::holds_alternative<ResidualBlock>(layer)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Conv indexing
// ---------------------------------------------------------------------------

std::vector<ConvSite> conv_sites(const NetworkGraph& net) {
  std::vector<ConvSite> sites;
  int id = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& layer = net.layers[li];
    if (std::holds_alternative<ConvLayer>(layer) || std::holds_alternative<FactorizedConvLayer>(layer)) {
      sites.push_back(ConvSite{id++, li, std::nullopt, false, false});
    } else if (const auto* block = std::get_if<ResidualBlock>(&layer)) {
      for (std::size_t j = 0; j < block->convs.size(); ++j) {
        sites.push_back(ConvSite{id++, li, j, false, j + 1 == block->convs.size()});
      }
      if (block->shortcut) sites.push_back(ConvSite{id++, li, std::nullopt, true, false});
    }
  }
  return sites;
}

std::size_t conv_count(const NetworkGraph& net) { return conv_sites(net).size(); }

namespace {

const ConvSite& site_of(const std::vector<ConvSite>& sites, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= sites.size()) {
    throw ArgumentError("no convolution with id " + std::to_string(id));
  }
  return sites[static_cast<std::size_t>(id)];
}

}  // namespace

const ConvLayer& conv_at(const NetworkGraph& net, int id) {
  const auto sites = conv_sites(net);
  const ConvSite& s = site_of(sites, id);
  const Layer& layer = net.layers[s.layer];
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) return *conv;
  if (std::holds_alternative<FactorizedConvLayer>(layer)) {
    throw ArgumentError("convolution " + std::to_string(id) + " is a factorized pair");
  }
  const auto& block = std::get<ResidualBlock>(layer);
  if (s.is_shortcut) return *block.shortcut;
  return block.convs[*s.in_block];
}

ConvLayer& conv_at(NetworkGraph& net, int id) {
  return const_cast<ConvLayer&>(conv_at(static_cast<const NetworkGraph&>(net), id));
}

std::optional<int> conv_successor(const NetworkGraph& net, int id) {
  const auto sites = conv_sites(net);
  const ConvSite& s = site_of(sites, id);
  const Layer& layer = net.layers[s.layer];
  if (std::holds_alternative<FactorizedConvLayer>(layer)) return std::nullopt;
  if (std::holds_alternative<ResidualBlock>(layer)) {
    if (s.is_shortcut || s.is_block_final) return std::nullopt;
    return id + 1;
  }
  for (std::size_t li = s.layer + 1; li < net.layers.size(); ++li) {
    const Layer& next = net.layers[li];
    if (std::holds_alternative<ReluLayer>(next) || std::holds_alternative<AvgPoolLayer>(next)) continue;
    if (std::holds_alternative<ConvLayer>(next)) return id + 1;
    return std::nullopt;
  }
  return std::nullopt;
}

bool is_compressible(const NetworkGraph& net, int id) {
  const auto sites = conv_sites(net);
  const ConvSite& s = site_of(sites, id);
  if (std::holds_alternative<FactorizedConvLayer>(net.layers[s.layer])) return false;
  if (conv_at(net, id).is_protected) return false;
  return conv_successor(net, id).has_value();
}

std::vector<int> compressible_layers(const NetworkGraph& net) {
  std::vector<int> ids;
  for (const auto& s : conv_sites(net))
    if (is_compressible(net, s.id)) ids.push_back(s.id);
  return ids;
}

std::size_t position_in_block(const NetworkGraph& net, int id) {
  const auto sites = conv_sites(net);
  const ConvSite& s = site_of(sites, id);
  return s.in_block ? *s.in_block + 1 : 1;
}

std::optional<std::size_t> block_of(const NetworkGraph& net, int id) {
  const auto sites = conv_sites(net);
  const ConvSite& s = site_of(sites, id);
  if (std::holds_alternative<ResidualBlock>(net.layers[s.layer])) return s.layer;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

template <class Net, class Fn>
void visit_params(Net& net, Fn&& fn) {
  int id = 0;
  auto conv = [&](auto& c, int cid, const std::string& name) {
    fn(c.weight, ParamInfo{name + ".weight", cid, false});
    if (c.has_bias) fn(c.bias, ParamInfo{name + ".bias", cid, true});
  };
  for (auto& layer : net.layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      conv(*c, id, "conv" + std::to_string(id));
      ++id;
    } else if (auto* f = std::get_if<FactorizedConvLayer>(&layer)) {
      conv(f->reduce, id, "conv" + std::to_string(id) + ".reduce");
      conv(f->reproject, id, "conv" + std::to_string(id) + ".reproject");
      ++id;
    } else if (auto* b = std::get_if<ResidualBlock>(&layer)) {
      for (auto& bc : b->convs) {
        conv(bc, id, "conv" + std::to_string(id));
        ++id;
      }
      if (b->shortcut) {
        conv(*b->shortcut, id, "conv" + std::to_string(id));
        ++id;
      }
    } else if (auto* l = std::get_if<LinearLayer>(&layer)) {
      fn(l->weight, ParamInfo{"fc.weight", -1, false});
      fn(l->bias, ParamInfo{"fc.bias", -1, true});
    }
  }
}

}  // namespace

std::vector<Tensor4*> parameters(NetworkGraph& net) {
  std::vector<Tensor4*> out;
  visit_params(net, [&](Tensor4& t, const ParamInfo&) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor4*> parameters(const NetworkGraph& net) {
  std::vector<const Tensor4*> out;
  visit_params(net, [&](const Tensor4& t, const ParamInfo&) { out.push_back(&t); });
  return out;
}

std::vector<ParamInfo> parameter_info(const NetworkGraph& net) {
  std::vector<ParamInfo> out;
  visit_params(net, [&](const Tensor4&, const ParamInfo& info) { out.push_back(info); });
  return out;
}

std::size_t parameter_count(const NetworkGraph& net) {
  std::size_t n = 0;
  for (const Tensor4* t : parameters(net)) n += t->numel();
  return n;
}

std::uint64_t parameter_hash(const NetworkGraph& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor4* t : parameters(net)) h = hash_tensor(*t, h);
  return h;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

class ForwardBuilder {
 public:
  ForwardBuilder(Tape& tape, const ForwardOptions& options) : tape_(tape), options_(options) {}

  Var param(const Tensor4& t) {
    const std::size_t index = result.params.size();
    const bool train = options_.trainable && index < options_.trainable->size() && (*options_.trainable)[index];
    const Var v = tape_.leaf(t, train);
    result.params.push_back(v);
    return v;
  }

  // Runs one conv, applying a pending P^T in front and this conv's own P after.
  Var conv(const ConvLayer& c, int id, Var in, std::optional<Var>& pending) {
    if (pending) {
      in = channel_project(tape_, in, transpose_matrix(tape_, *pending));
      pending.reset();
    }
    const Var w = param(c.weight);
    std::optional<Var> b;
    if (c.has_bias) b = param(c.bias);
    Var out = conv2d(tape_, in, w, b, c.stride, c.padding);
    if (options_.projections) {
      auto it = options_.projections->find(id);
      if (it != options_.projections->end()) {
        out = channel_project(tape_, out, it->second);
        pending = it->second;
      }
    }
    return out;
  }

  Tape& tape() { return tape_; }
  ForwardResult result;

 private:
  Tape& tape_;
  const ForwardOptions& options_;
};

}  // namespace

ForwardResult forward(const NetworkGraph& net, Tape& tape, Var input, const ForwardOptions& options) {
  const Shape4& in_shape = tape.value(input).shape();
  if (in_shape.c != net.in_channels) {
    throw ShapeError("network " + net.name + " expects " + std::to_string(net.in_channels) +
                     " input channels, got input " + in_shape.str());
  }
  ForwardBuilder fb(tape, options);
  Var x = input;
  int id = 0;
  std::optional<Var> pending;
  int last_conv = -1;

  auto require_no_pending = [&](const char* where) {
    if (pending) {
      throw ValidationError(std::string("projection on conv ") + std::to_string(last_conv) +
                            " has no successor conv before " + where);
    }
  };

  for (const Layer& layer : net.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      x = fb.conv(*c, id, x, pending);
      fb.result.taps[id] = x;
      last_conv = id;
      ++id;
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      x = relu(tape, x);
      if (last_conv >= 0) fb.result.taps[last_conv] = x;
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      x = avg_pool(tape, x, p->kernel, p->stride);
      last_conv = -1;
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      require_no_pending("global pooling");
      x = global_avg_pool(tape, x);
      last_conv = -1;
    } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
      require_no_pending("the classifier");
      const Var w = fb.param(l->weight);
      const Var b = fb.param(l->bias);
      x = linear(tape, flatten(tape, x), w, b);
      last_conv = -1;
    } else if (const auto* f = std::get_if<FactorizedConvLayer>(&layer)) {
      require_no_pending("a factorized conv");
      std::optional<Var> none;
      Var mid = fb.conv(f->reduce, -1, x, none);
      x = fb.conv(f->reproject, -1, mid, none);
      fb.result.taps[id] = x;
      last_conv = id;
      ++id;
    } else if (const auto* block = std::get_if<ResidualBlock>(&layer)) {
      require_no_pending("a residual block");
      const Var block_in = x;
      Var h = x;
      std::optional<Var> inner_pending;
      const int first_id = id;
      for (std::size_t j = 0; j < block->convs.size(); ++j) {
        h = fb.conv(block->convs[j], id, h, inner_pending);
        if (j + 1 < block->convs.size()) {
          h = relu(tape, h);
          fb.result.taps[id] = h;
        }
        ++id;
      }
      if (inner_pending) {
        throw ValidationError("projection on the final conv of the residual block starting at conv " +
                              std::to_string(first_id));
      }
      Var skip = block_in;
      if (block->shortcut) {
        std::optional<Var> none;
        skip = fb.conv(*block->shortcut, -1, block_in, none);
        ++id;
      }
      x = relu(tape, add(tape, h, skip));
      fb.result.taps[id - (block->shortcut ? 2 : 1)] = x;
      last_conv = -1;
    }
  }
  require_no_pending("the end of the network");
  fb.result.output = x;
  return std::move(fb.result);
}

Tensor4 predict(const NetworkGraph& net, const Tensor4& input) {
  Tape tape;
  const Var x = tape.leaf(input);
  return tape.value(forward(net, tape, x).output);
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

ConvLayer make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel, int stride, int padding, bool bias) {
  ConvLayer c;
  c.c_in = c_in;
  c.c_out = c_out;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.has_bias = bias;
  c.weight = Tensor4(Shape4{c_out, c_in, kernel, kernel});
  if (bias) c.bias = Tensor4(Shape4{c_out, 1, 1, 1});
  return c;
}

void reinitialize(NetworkGraph& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto params = parameters(net);
  const auto info = parameter_info(net);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor4& t = *params[i];
    if (info[i].is_bias) {
      t.fill(0.0);
      continue;
    }
    const Shape4& s = t.shape();
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    t = random_normal(s, std::sqrt(2.0 / fan_in), rng);
  }
  // The classifier uses a unit-gain fan-in scale instead of the He gain.
  if (net.has_classifier()) {
    auto& fc = std::get<LinearLayer>(net.layers.back());
    for (auto& v : fc.weight.storage()) v *= std::sqrt(0.5);
  }
}

namespace {

std::size_t scaled(std::size_t base, double mult) {
  const auto v = static_cast<long>(std::lround(static_cast<double>(base) * mult));
  return static_cast<std::size_t>(std::max(1L, v));
}

LinearLayer make_linear(std::size_t in, std::size_t out) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.weight = Tensor4(Shape4{out, in, 1, 1});
  l.bias = Tensor4(Shape4{out, 1, 1, 1});
  return l;
}

}  // namespace

NetworkGraph build_small_vgg(double width_multiplier, std::size_t num_classes, std::uint64_t seed) {
  if (!(width_multiplier > 0.0)) throw ArgumentError("build_small_vgg: width multiplier must be positive");
  if (num_classes < 2) throw ArgumentError("build_small_vgg: need at least two classes");
  const std::size_t c0 = scaled(8, width_multiplier);
  const std::size_t c1 = scaled(16, width_multiplier);
  const std::size_t c2 = scaled(32, width_multiplier);
  NetworkGraph net;
  net.name = "small_vgg";
  net.layers.push_back(AvgPoolLayer{2, 2});
  ConvLayer stem = make_conv(3, c0, 3, 1, 1);
  stem.is_protected = true;
  net.layers.push_back(stem);
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(make_conv(c0, c1, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(make_conv(c1, c1, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(AvgPoolLayer{2, 2});
  net.layers.push_back(make_conv(c1, c2, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(make_conv(c2, c2, 3, 1, 1));
  net.layers.push_back(ReluLayer{});
  net.layers.push_back(GlobalAvgPoolLayer{});
  net.layers.push_back(make_linear(c2, num_classes));
  reinitialize(net, seed);
  return net;
}

NetworkGraph build_small_resnet(const std::string& depth, std::size_t num_classes, std::uint64_t seed,
                                std::size_t convs_per_block) {
  std::size_t blocks_per_stage = 0;
  if (depth == "18-lite") {
    blocks_per_stage = 1;
  } else if (depth == "56-lite") {
    blocks_per_stage = 3;
  } else {
    throw ArgumentError("build_small_resnet: unsupported depth '" + depth + "' (use 18-lite or 56-lite)");
  }
  if (num_classes < 2) throw ArgumentError("build_small_resnet: need at least two classes");
  if (convs_per_block < 2) throw ArgumentError("build_small_resnet: blocks need at least two convs");

  NetworkGraph net;
  net.name = "small_resnet_" + depth;
  net.layers.push_back(AvgPoolLayer{2, 2});
  ConvLayer stem = make_conv(3, 8, 3, 1, 1);
  stem.is_protected = true;
  net.layers.push_back(stem);
  net.layers.push_back(ReluLayer{});

  const std::size_t widths[] = {8, 16, 32};
  std::size_t c_in = 8;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::size_t c_out = widths[stage];
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      ResidualBlock block;
      block.convs.push_back(make_conv(c_in, c_out, 3, stride, 1));
      for (std::size_t j = 1; j < convs_per_block; ++j) block.convs.push_back(make_conv(c_out, c_out, 3, 1, 1));
      block.convs.back().is_protected = true;
      if (stride != 1 || c_in != c_out) {
        block.shortcut = make_conv(c_in, c_out, 1, stride, 0);
        block.shortcut->is_protected = true;
      }
      net.layers.push_back(std::move(block));
      c_in = c_out;
    }
  }
  net.layers.push_back(GlobalAvgPoolLayer{});
  net.layers.push_back(make_linear(c_in, num_classes));
  reinitialize(net, seed);
  return net;
}

}  // namespace cap
