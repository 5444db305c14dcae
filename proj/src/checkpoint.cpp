// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cap/config.hpp"
#include "cap/errors.hpp"

namespace cap {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

enum class Tag : std::uint8_t { kConv = 1, kRelu, kAvgPool, kGlobalAvgPool, kLinear, kBlock, kFactorized };

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void i32(std::int32_t v) { pod(v); }
  void u8(std::uint8_t v) { pod(v); }
  void str(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void tensor(const Tensor4& t) {
    const Shape4& s = t.shape();
    u64(s.n);
    u64(s.c);
    u64(s.h);
    u64(s.w);
    out_.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Tensor4 tensor() {
    Shape4 s{u64(), u64(), u64(), u64()};
    const std::uint64_t bytes = s.numel() * sizeof(double);
    need(bytes);
    std::vector<double> data(s.numel());
    std::memcpy(data.data(), in_.data() + pos_, bytes);
    pos_ += bytes;
    return Tensor4(s, std::move(data));
  }
  void expect_end() const {
    if (pos_ != in_.size()) throw IoError("checkpoint has " + std::to_string(in_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_conv(Writer& w, const ConvLayer& c) {
  w.u64(c.c_in);
  w.u64(c.c_out);
  w.u64(c.kernel);
  w.i32(c.stride);
  w.i32(c.padding);
  w.u8(c.has_bias);
  w.u8(c.is_protected);
}

ConvLayer read_conv(Reader& r) {
  ConvLayer c;
  c.c_in = r.u64();
  c.c_out = r.u64();
  c.kernel = r.u64();
  c.stride = r.i32();
  c.padding = r.i32();
  c.has_bias = r.u8() != 0;
  c.is_protected = r.u8() != 0;
  c.weight = Tensor4({c.c_out, c.c_in, c.kernel, c.kernel});
  if (c.has_bias) c.bias = Tensor4({c.c_out, 1, 1, 1});
  return c;
}

void write_topology(Writer& w, const NetworkGraph& net) {
  w.str(net.name);
  w.u64(net.in_channels);
  w.u64(net.in_height);
  w.u64(net.in_width);
  w.u64(net.layers.size());
  for (const Layer& layer : net.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kConv));
      write_conv(w, *c);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kRelu));
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kAvgPool));
      w.i32(p->kernel);
      w.i32(p->stride);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kGlobalAvgPool));
    } else if (const auto* l = std::get_if<LinearLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kLinear));
      w.u64(l->in);
      w.u64(l->out);
    } else if (const auto* b = std::get_if<ResidualBlock>(&layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kBlock));
      w.u64(b->convs.size());
      for (const auto& c : b->convs) write_conv(w, c);
      w.u8(b->shortcut.has_value());
      if (b->shortcut) write_conv(w, *b->shortcut);
    } else if (const auto* f = std::get_if<FactorizedConvLayer>(&layer)) {
      w.u8(static_cast<std::uint8_t>(Tag::kFactorized));
      write_conv(w, f->reduce);
      write_conv(w, f->reproject);
    }
  }
}

NetworkGraph read_topology(Reader& r) {
  NetworkGraph net;
  net.name = r.str();
  net.in_channels = r.u64();
  net.in_height = r.u64();
  net.in_width = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto tag = static_cast<Tag>(r.u8());
    switch (tag) {
      case Tag::kConv: net.layers.emplace_back(read_conv(r)); break;
      case Tag::kRelu: net.layers.emplace_back(ReluLayer{}); break;
      case Tag::kAvgPool: {
        AvgPoolLayer p;
        p.kernel = r.i32();
        p.stride = r.i32();
        net.layers.emplace_back(p);
        break;
      }
      case Tag::kGlobalAvgPool: net.layers.emplace_back(GlobalAvgPoolLayer{}); break;
      case Tag::kLinear: {
        LinearLayer l;
        l.in = r.u64();
        l.out = r.u64();
        l.weight = Tensor4({l.out, l.in, 1, 1});
        l.bias = Tensor4({l.out, 1, 1, 1});
        net.layers.emplace_back(std::move(l));
        break;
      }
      case Tag::kBlock: {
        ResidualBlock b;
        const std::uint64_t convs = r.u64();
        for (std::uint64_t j = 0; j < convs; ++j) b.convs.push_back(read_conv(r));
        if (r.u8() != 0) b.shortcut = read_conv(r);
        net.layers.emplace_back(std::move(b));
        break;
      }
      case Tag::kFactorized: {
        FactorizedConvLayer f;
        f.reduce = read_conv(r);
        f.reproject = read_conv(r);
        net.layers.emplace_back(std::move(f));
        break;
      }
      default: throw IoError("checkpoint has unknown layer tag " + std::to_string(static_cast<int>(tag)));
    }
  }
  return net;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.pod(c);
  w.pod(kCheckpointVersion);
  write_topology(w, ckpt.network);
  const auto params = parameters(ckpt.network);
  const auto info = parameter_info(ckpt.network);
  w.u64(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(info[i].name);
    w.tensor(*params[i]);
  }
  w.u64(ckpt.optimizer.epochs_done);
  w.u64(ckpt.optimizer.steps_done);
  w.u64(ckpt.optimizer.velocity.size());
  for (const auto& v : ckpt.optimizer.velocity) w.tensor(v);
  w.u64(ckpt.data_seed);
  w.str(ckpt.config_text);
  w.str(ckpt.plan_text);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("not a checkpoint (bad magic)");
  }
  Reader r(bytes.substr(8));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.network = read_topology(r);
  const auto params = parameters(ckpt.network);
  const auto info = parameter_info(ckpt.network);
  const std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw IoError("checkpoint stores " + std::to_string(count) + " tensors, topology needs " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = r.str();
    Tensor4 t = r.tensor();
    if (name != info[i].name || t.shape() != params[i]->shape()) {
      throw IoError("checkpoint tensor '" + name + "' " + t.shape().str() + " does not match '" + info[i].name +
                    "' " + params[i]->shape().str());
    }
    *params[i] = std::move(t);
  }
  ckpt.optimizer.epochs_done = r.u64();
  ckpt.optimizer.steps_done = r.u64();
  const std::uint64_t nv = r.u64();
  for (std::uint64_t i = 0; i < nv; ++i) ckpt.optimizer.velocity.push_back(r.tensor());
  ckpt.data_seed = r.u64();
  ckpt.config_text = r.str();
  ckpt.plan_text = r.str();
  r.expect_end();
  return ckpt;
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_text_file(path)); }

}  // namespace cap
