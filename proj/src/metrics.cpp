// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/metrics.hpp"

#include <algorithm>

#include "cap/errors.hpp"

namespace cap {

namespace {

struct Dims {
  std::size_t c = 0, h = 0, w = 0;
  std::uint64_t elems() const { return static_cast<std::uint64_t>(c) * h * w; }
};

class CostCounter {
 public:
  CostCounter(std::size_t batch, std::size_t element_bytes) {
    report.batch = batch;
    report.element_bytes = element_bytes;
  }

  std::uint64_t bytes(const Dims& d) const { return d.elems() * report.batch * report.element_bytes; }

  Dims conv(const ConvLayer& c, const Dims& in, const std::string& name, std::uint64_t extra_live) {
    if (c.c_in != in.c) {
      throw ShapeError(name + " expects " + std::to_string(c.c_in) + " input channels, got " + std::to_string(in.c));
    }
    Dims out{c.c_out, conv_output_size(in.h, c.kernel, c.stride, c.padding),
             conv_output_size(in.w, c.kernel, c.stride, c.padding)};
    LayerCost lc = entry(name, "conv", out);
    lc.params = static_cast<std::uint64_t>(c.c_out) * c.c_in * c.kernel * c.kernel + (c.has_bias ? c.c_out : 0);
    lc.flops = 2ULL * c.c_out * c.c_in * c.kernel * c.kernel * out.h * out.w * report.batch;
    lc.live_bytes = extra_live + bytes(in) + bytes(out);
    push(lc);
    return out;
  }

  LayerCost entry(const std::string& name, const std::string& kind, const Dims& out) const {
    LayerCost lc;
    lc.name = name;
    lc.kind = kind;
    lc.out_channels = out.c;
    lc.out_height = out.h;
    lc.out_width = out.w;
    return lc;
  }

  void push(const LayerCost& lc) {
    report.param_count += lc.params;
    report.flops += lc.flops;
    report.peak_activation_bytes = std::max(report.peak_activation_bytes, lc.live_bytes);
    report.layers.push_back(lc);
  }

  CostReport report;
};

}  // namespace

CostReport count_costs(const NetworkGraph& net, std::size_t batch, std::size_t in_channels, std::size_t in_height,
                       std::size_t in_width, std::size_t element_bytes) {
  CostCounter cc(batch, element_bytes);
  if (net.layers.empty()) return cc.report;
  Dims d{in_channels, in_height, in_width};
  cc.report.peak_activation_bytes = cc.bytes(d);
  int id = 0;
  std::size_t pools = 0, relus = 0, blocks = 0;
  for (const Layer& layer : net.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      d = cc.conv(*c, d, "conv" + std::to_string(id++), 0);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      LayerCost lc = cc.entry("relu" + std::to_string(relus++), "relu", d);
      lc.live_bytes = cc.bytes(d);
      cc.push(lc);
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      const Dims out{d.c, conv_output_size(d.h, p->kernel, p->stride, 0),
                     conv_output_size(d.w, p->kernel, p->stride, 0)};
      LayerCost lc = cc.entry("pool" + std::to_string(pools++), "avgpool", out);
      lc.live_bytes = cc.bytes(d) + cc.bytes(out);
      cc.push(lc);
      d = out;
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      const Dims out{d.c, 1, 1};
      LayerCost lc = cc.entry("gap", "global_avgpool", out);
      lc.live_bytes = cc.bytes(d) + cc.bytes(out);
      cc.push(lc);
      d = out;
    } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
      if (l->in != d.elems()) {
        throw ShapeError("classifier expects " + std::to_string(l->in) + " features, got " + std::to_string(d.elems()));
      }
      const Dims out{l->out, 1, 1};
      LayerCost lc = cc.entry("fc", "linear", out);
      lc.params = static_cast<std::uint64_t>(l->in) * l->out + l->out;
      lc.flops = 2ULL * l->in * l->out * batch;
      lc.live_bytes = cc.bytes(d) + cc.bytes(out);
      cc.push(lc);
      d = out;
    } else if (const auto* f = std::get_if<FactorizedConvLayer>(&layer)) {
      const std::string name = "conv" + std::to_string(id++);
      const Dims mid{f->reduce.c_out, conv_output_size(d.h, f->reduce.kernel, f->reduce.stride, f->reduce.padding),
                     conv_output_size(d.w, f->reduce.kernel, f->reduce.stride, f->reduce.padding)};
      cc.conv(f->reduce, d, name + ".reduce", 0);
      // The input stays live until the reprojection finishes.
      const Dims out = cc.conv(f->reproject, mid, name + ".reproject", cc.bytes(d));
      d = out;
    } else if (const auto* block = std::get_if<ResidualBlock>(&layer)) {
      const Dims block_in = d;
      const std::uint64_t keep = cc.bytes(block_in);
      const std::string prefix = "block" + std::to_string(blocks++) + ".";
      Dims h = d;
      for (std::size_t j = 0; j < block->convs.size(); ++j) {
        // The first conv reads the block input itself, which is already counted.
        h = cc.conv(block->convs[j], h, prefix + "conv" + std::to_string(id++), j == 0 ? 0 : keep);
      }
      Dims skip = block_in;
      std::uint64_t add_live = cc.bytes(h) + keep;
      if (block->shortcut) {
        skip = cc.conv(*block->shortcut, block_in, prefix + "shortcut" + std::to_string(id++), cc.bytes(h));
        add_live = cc.bytes(h) + cc.bytes(skip);
      }
      if (skip.c != h.c || skip.h != h.h || skip.w != h.w) throw ShapeError(prefix + " skip dims mismatch");
      LayerCost lc = cc.entry(prefix + "add", "residual_add", h);
      lc.live_bytes = add_live;
      cc.push(lc);
      d = h;
    }
  }
  return cc.report;
}

CostReport count_costs(const NetworkGraph& net, std::size_t batch, std::size_t element_bytes) {
  return count_costs(net, batch, net.in_channels, net.in_height, net.in_width, element_bytes);
}

double percent_of(std::uint64_t value, std::uint64_t base) {
  if (base == 0) return 100.0;
  return 100.0 * static_cast<double>(value) / static_cast<double>(base);
}

nlohmann::ordered_json to_json(const CostReport& report) {
  nlohmann::ordered_json j;
  j["batch"] = report.batch;
  j["element_bytes"] = report.element_bytes;
  j["param_count"] = report.param_count;
  j["flops"] = report.flops;
  j["peak_activation_bytes"] = report.peak_activation_bytes;
  j["flops_convention"] = kFlopsConvention;
  j["memory_convention"] = kMemoryConvention;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : report.layers) {
    nlohmann::ordered_json e;
    e["name"] = l.name;
    e["kind"] = l.kind;
    e["params"] = l.params;
    e["flops"] = l.flops;
    e["out_shape"] = {l.out_channels, l.out_height, l.out_width};
    e["live_bytes"] = l.live_bytes;
    layers.push_back(e);
  }
  j["layers"] = layers;
  return j;
}

NetworkGraph apply_plan_shapes(const NetworkGraph& net, const std::map<int, std::size_t>& ranks) {
  NetworkGraph out = net;
  for (const auto& [id, r] : ranks) {
    if (id < 0 || static_cast<std::size_t>(id) >= conv_count(net)) {
      throw ValidationError("plan references missing conv " + std::to_string(id));
    }
    if (!is_compressible(net, id)) throw ValidationError("conv " + std::to_string(id) + " is protected");
    ConvLayer& c = conv_at(out, id);
    if (r < 1 || r > c.c_out) {
      throw ValidationError("rank " + std::to_string(r) + " for conv " + std::to_string(id) + " outside [1, " +
                            std::to_string(c.c_out) + "]");
    }
    c.c_out = r;
    c.weight = Tensor4({r, c.c_in, c.kernel, c.kernel});
    if (c.has_bias) c.bias = Tensor4({r, 1, 1, 1});
    ConvLayer& next = conv_at(out, *conv_successor(net, id));
    next.c_in = r;
    next.weight = Tensor4({next.c_out, r, next.kernel, next.kernel});
  }
  return out;
}

NetworkGraph apply_plan_shapes(const NetworkGraph& net, const CompressionPlan& plan) {
  return apply_plan_shapes(net, resolve_ranks(net, plan));
}

NetworkGraph factorized_variant(const NetworkGraph& net, const std::map<int, std::size_t>& ranks,
                                std::size_t reprojection_kernel) {
  NetworkGraph out = net;
  for (const auto& [id, r] : ranks) {
    if (!is_compressible(net, id)) throw ValidationError("conv " + std::to_string(id) + " is protected");
    const auto sites = conv_sites(net);
    const ConvSite& site = sites.at(static_cast<std::size_t>(id));
    if (site.in_block) throw ValidationError("factorized_variant supports top-level convs only");
    const ConvLayer& c = conv_at(net, id);
    if (r < 1 || r > c.c_out) throw ValidationError("rank out of range for conv " + std::to_string(id));
    FactorizedConvLayer f;
    f.reduce = make_conv(c.c_in, r, c.kernel, c.stride, c.padding, c.has_bias);
    const auto pad = static_cast<int>(reprojection_kernel / 2);
    f.reproject = make_conv(r, c.c_out, reprojection_kernel, 1, pad, false);
    out.layers[site.layer] = f;
  }
  return out;
}

}  // namespace cap
