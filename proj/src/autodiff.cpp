// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cap/errors.hpp"

namespace cap {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Var Tape::leaf(Tensor4 value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor4{}, requires_grad, false, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor4 value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor4 value, std::span<const Var> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return requires_grad(v); });
  nodes_.push_back(Node{std::move(value), Tensor4{}, needs, false, needs ? std::move(backward) : nullptr});
  return Var{nodes_.size() - 1};
}

Tensor4 Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.has_grad) return node.grad;
  return Tensor4(node.value.shape());
}

Tensor4& Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id);
  if (!node.has_grad) {
    node.grad = Tensor4(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::accumulate_grad(Var v, const Tensor4& g) {
  if (!requires_grad(v)) return;
  Tensor4& buf = grad_buffer(v);
  if (buf.shape() != g.shape()) {
    throw ShapeError("gradient shape " + g.shape().str() + " does not match value " + buf.shape().str());
  }
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw ArgumentError("backward() needs a scalar loss, got shape " + value(loss).shape().str());
  }
  for (auto& node : nodes_) {
    node.grad = Tensor4{};
    node.has_grad = false;
  }
  if (!requires_grad(loss)) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    // Closures only touch gradients of earlier nodes; nodes_ never grows here.
    node.backward(*this, node.grad);
  }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

struct ConvGeometry {
  std::size_t n, c_in, h, w;
  std::size_t c_out, k;
  std::size_t oh, ow;
  int stride, pad;

  std::size_t patch() const { return c_in * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

// cols is [c_in*k*k, oh*ow] for image `img`.
void im2col(const double* x, const ConvGeometry& g, std::vector<double>& cols) {
  const std::size_t pixels = g.pixels();
  cols.assign(g.patch() * pixels, 0.0);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const double* plane = x + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols.data() + ((ci * g.k + ki) * g.k + kj) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            row[oy * g.ow + ox] = plane[iy * static_cast<long>(g.w) + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& cols, const ConvGeometry& g, double* dx) {
  const std::size_t pixels = g.pixels();
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    double* plane = dx + ci * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols.data() + ((ci * g.k + ki) * g.k + kj) * pixels;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kj);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            plane[iy * static_cast<long>(g.w) + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

ConvGeometry conv_geometry(const Tensor4& x, const Tensor4& w, int stride, int pad) {
  const Shape4& xs = x.shape();
  const Shape4& ws = w.shape();
  if (stride <= 0) throw ArgumentError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (pad < 0) throw ArgumentError("conv2d: padding must be non-negative, got " + std::to_string(pad));
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels but weight " + ws.str() + " expects " + std::to_string(ws.c));
  }
  if (ws.h != ws.w) throw ShapeError("conv2d: weight " + ws.str() + " must have a square kernel");
  if (ws.h > xs.h + 2 * static_cast<std::size_t>(pad) || ws.w > xs.w + 2 * static_cast<std::size_t>(pad)) {
    throw ShapeError("conv2d: kernel of weight " + ws.str() + " larger than padded input " + xs.str());
  }
  ConvGeometry g{};
  g.n = xs.n;
  g.c_in = xs.c;
  g.h = xs.h;
  g.w = xs.w;
  g.c_out = ws.n;
  g.k = ws.h;
  g.stride = stride;
  g.pad = pad;
  g.oh = conv_output_size(xs.h, g.k, stride, pad);
  g.ow = conv_output_size(xs.w, g.k, stride, pad);
  return g;
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int padding) {
  return (in + 2 * static_cast<std::size_t>(padding) - kernel) / static_cast<std::size_t>(stride) + 1;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

Var conv2d(Tape& tape, Var input, Var weight, std::optional<Var> bias, int stride, int padding) {
  const Tensor4& x = tape.value(input);
  const Tensor4& w = tape.value(weight);
  const ConvGeometry g = conv_geometry(x, w, stride, padding);
  if (bias && tape.value(*bias).numel() != g.c_out) {
    throw ShapeError("conv2d: bias " + tape.value(*bias).shape().str() + " does not match weight " +
                     w.shape().str());
  }

  Tensor4 out(Shape4{g.n, g.c_out, g.oh, g.ow});
  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  std::vector<double> cols;
  for (std::size_t img = 0; img < g.n; ++img) {
    im2col(x.data().data() + img * g.c_in * g.h * g.w, g, cols);
    double* o = out.data().data() + img * g.c_out * pixels;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      double* orow = o + co * pixels;
      const double b0 = bias ? tape.value(*bias)[co] : 0.0;
      std::fill(orow, orow + pixels, b0);
      const double* wrow = w.data().data() + co * patch;
      for (std::size_t q = 0; q < patch; ++q) {
        const double wv = wrow[q];
        const double* crow = cols.data() + q * pixels;
        for (std::size_t p = 0; p < pixels; ++p) orow[p] += wv * crow[p];
      }
    }
  }

  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(out), inputs, [input, weight, bias, g](Tape& t, const Tensor4& grad) {
    const Tensor4& xv = t.value(input);
    const Tensor4& wv = t.value(weight);
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    const bool need_b = bias && t.requires_grad(*bias);
    const std::size_t patch = g.patch();
    const std::size_t pixels = g.pixels();
    double* dx = need_x ? t.grad_buffer(input).data().data() : nullptr;
    double* dw = need_w ? t.grad_buffer(weight).data().data() : nullptr;
    double* db = need_b ? t.grad_buffer(*bias).data().data() : nullptr;
    std::vector<double> cols;
    std::vector<double> dcols;
    for (std::size_t img = 0; img < g.n; ++img) {
      const double* go = grad.data().data() + img * g.c_out * pixels;
      if (need_b) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
          double s = 0.0;
          for (std::size_t p = 0; p < pixels; ++p) s += go[co * pixels + p];
          db[co] += s;
        }
      }
      if (need_w) {
        im2col(xv.data().data() + img * g.c_in * g.h * g.w, g, cols);
        for (std::size_t co = 0; co < g.c_out; ++co) {
          const double* grow = go + co * pixels;
          for (std::size_t q = 0; q < patch; ++q) {
            const double* crow = cols.data() + q * pixels;
            double s = 0.0;
            for (std::size_t p = 0; p < pixels; ++p) s += grow[p] * crow[p];
            dw[co * patch + q] += s;
          }
        }
      }
      if (need_x) {
        dcols.assign(patch * pixels, 0.0);
        for (std::size_t co = 0; co < g.c_out; ++co) {
          const double* grow = go + co * pixels;
          const double* wrow = wv.data().data() + co * patch;
          for (std::size_t q = 0; q < patch; ++q) {
            const double w0 = wrow[q];
            double* drow = dcols.data() + q * pixels;
            for (std::size_t p = 0; p < pixels; ++p) drow[p] += w0 * grow[p];
          }
        }
        col2im_add(dcols, g, dx + img * g.c_in * g.h * g.w);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and channel mixing
// ---------------------------------------------------------------------------

Var relu(Tape& tape, Var x) {
  Tensor4 out = tape.value(x);
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor4& grad) {
    const Tensor4& xv = t.value(x);
    Tensor4& dx = t.grad_buffer(x);
    // Subgradient at exactly zero is taken as 0.
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      if (xv[i] > 0.0) dx[i] += grad[i];
    }
  });
}

Var channel_project(Tape& tape, Var x, Var projection) {
  const Tensor4& xv = tape.value(x);
  const Tensor4& pv = tape.value(projection);
  const Shape4& xs = xv.shape();
  const Shape4& ps = pv.shape();
  if (ps.h != 1 || ps.w != 1 || ps.n != xs.c) {
    throw ShapeError("channel_project: input " + xs.str() + " with " + std::to_string(xs.c) +
                     " channels does not match projection " + ps.str());
  }
  const std::size_t c = xs.c;
  const std::size_t r = ps.c;
  const std::size_t pixels = xs.h * xs.w;
  Tensor4 out(Shape4{xs.n, r, xs.h, xs.w});
  for (std::size_t img = 0; img < xs.n; ++img) {
    const double* xi = xv.data().data() + img * c * pixels;
    double* oi = out.data().data() + img * r * pixels;
    for (std::size_t j = 0; j < r; ++j) {
      double* orow = oi + j * pixels;
      for (std::size_t m = 0; m < c; ++m) {
        const double p = pv[m * r + j];
        const double* xrow = xi + m * pixels;
        for (std::size_t q = 0; q < pixels; ++q) orow[q] += p * xrow[q];
      }
    }
  }
  return tape.record(std::move(out), {x, projection},
                     [x, projection, c, r, pixels, n = xs.n](Tape& t, const Tensor4& grad) {
                       const Tensor4& xv = t.value(x);
                       const Tensor4& pv = t.value(projection);
                       if (t.requires_grad(x)) {
                         Tensor4& dx = t.grad_buffer(x);
                         for (std::size_t img = 0; img < n; ++img) {
                           const double* gi = grad.data().data() + img * r * pixels;
                           double* di = dx.data().data() + img * c * pixels;
                           for (std::size_t m = 0; m < c; ++m) {
                             double* drow = di + m * pixels;
                             for (std::size_t j = 0; j < r; ++j) {
                               const double p = pv[m * r + j];
                               const double* grow = gi + j * pixels;
                               for (std::size_t q = 0; q < pixels; ++q) drow[q] += p * grow[q];
                             }
                           }
                         }
                       }
                       if (t.requires_grad(projection)) {
                         Tensor4& dp = t.grad_buffer(projection);
                         for (std::size_t m = 0; m < c; ++m) {
                           for (std::size_t j = 0; j < r; ++j) {
                             double s = 0.0;
                             for (std::size_t img = 0; img < n; ++img) {
                               const double* xrow = xv.data().data() + (img * c + m) * pixels;
                               const double* grow = grad.data().data() + (img * r + j) * pixels;
                               for (std::size_t q = 0; q < pixels; ++q) s += xrow[q] * grow[q];
                             }
                             dp[m * r + j] += s;
                           }
                         }
                       }
                     });
}

Var transpose_matrix(Tape& tape, Var m) {
  const Tensor4& mv = tape.value(m);
  const Shape4& s = mv.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("transpose_matrix: expected [rows, cols, 1, 1], got " + s.str());
  Tensor4 out = Tensor4::matrix(s.c, s.n);
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < s.c; ++j) out.at(j, i) = mv.at(i, j);
  return tape.record(std::move(out), {m}, [m, rows = s.n, cols = s.c](Tape& t, const Tensor4& grad) {
    Tensor4& dm = t.grad_buffer(m);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) dm[i * cols + j] += grad[j * rows + i];
  });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape("add", tape.value(a), tape.value(b));
  Tensor4 out = tape.value(a);
  const Tensor4& bv = tape.value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor4& grad) {
    t.accumulate_grad(a, grad);
    t.accumulate_grad(b, grad);
  });
}

Var sub(Tape& tape, Var a, Var b) {
  require_same_shape("sub", tape.value(a), tape.value(b));
  Tensor4 out = tape.value(a);
  const Tensor4& bv = tape.value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor4& grad) {
    t.accumulate_grad(a, grad);
    if (t.requires_grad(b)) {
      Tensor4& db = t.grad_buffer(b);
      for (std::size_t i = 0; i < grad.numel(); ++i) db[i] -= grad[i];
    }
  });
}

Var scale(Tape& tape, Var a, double factor) {
  Tensor4 out = tape.value(a);
  for (auto& v : out.storage()) v *= factor;
  return tape.record(std::move(out), {a}, [a, factor](Tape& t, const Tensor4& grad) {
    Tensor4& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < grad.numel(); ++i) da[i] += factor * grad[i];
  });
}

Var sum(Tape& tape, Var a) {
  double s = 0.0;
  for (double v : tape.value(a).data()) s += v;
  return tape.record(Tensor4::scalar(s), {a}, [a](Tape& t, const Tensor4& grad) {
    Tensor4& da = t.grad_buffer(a);
    const double g = grad[0];
    for (auto& v : da.storage()) v += g;
  });
}

Var frobenius_sq(Tape& tape, Var a) {
  double s = 0.0;
  for (double v : tape.value(a).data()) s += v * v;
  return tape.record(Tensor4::scalar(s), {a}, [a](Tape& t, const Tensor4& grad) {
    const Tensor4& av = t.value(a);
    Tensor4& da = t.grad_buffer(a);
    const double g = 2.0 * grad[0];
    for (std::size_t i = 0; i < av.numel(); ++i) da[i] += g * av[i];
  });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor4& lv = tape.value(logits);
  const Shape4& s = lv.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax_cross_entropy: logits must be [n, k, 1, 1], got " + s.str());
  if (labels.size() != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  }
  const std::size_t n = s.n;
  const std::size_t k = s.c;
  Tensor4 probs(s);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
    }
    const double* row = lv.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[label] - mx - std::log(z));
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record(Tensor4::scalar(loss), {logits},
                     [logits, probs = std::move(probs), owned = std::move(owned), n, k](Tape& t, const Tensor4& grad) {
                       Tensor4& dl = t.grad_buffer(logits);
                       const double g = grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double target = static_cast<int>(j) == owned[i] ? 1.0 : 0.0;
                           dl[i * k + j] += g * (probs[i * k + j] - target);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Pooling, reshaping, dense
// ---------------------------------------------------------------------------

Var avg_pool(Tape& tape, Var x, int kernel, int stride) {
  const Tensor4& xv = tape.value(x);
  const Shape4& s = xv.shape();
  if (kernel <= 0 || stride <= 0) throw ArgumentError("avg_pool: kernel and stride must be positive");
  if (static_cast<std::size_t>(kernel) > s.h || static_cast<std::size_t>(kernel) > s.w) {
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel) + " larger than input " + s.str());
  }
  const std::size_t k = static_cast<std::size_t>(kernel);
  const std::size_t st = static_cast<std::size_t>(stride);
  const std::size_t oh = (s.h - k) / st + 1;
  const std::size_t ow = (s.w - k) / st + 1;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor4 out(Shape4{s.n, s.c, oh, ow});
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const double* plane = xv.data().data() + p * s.h * s.w;
    double* o = out.data().data() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) acc += plane[(oy * st + a) * s.w + ox * st + b];
        o[oy * ow + ox] = acc * inv;
      }
  }
  return tape.record(std::move(out), {x}, [x, s, k, st, oh, ow, inv](Tape& t, const Tensor4& grad) {
    Tensor4& dx = t.grad_buffer(x);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      double* plane = dx.data().data() + p * s.h * s.w;
      const double* g = grad.data().data() + p * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double v = g[oy * ow + ox] * inv;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) plane[(oy * st + a) * s.w + ox * st + b] += v;
        }
    }
  });
}

Var global_avg_pool(Tape& tape, Var x) {
  const Tensor4& xv = tape.value(x);
  const Shape4& s = xv.shape();
  const std::size_t pixels = s.h * s.w;
  const double inv = 1.0 / static_cast<double>(pixels);
  Tensor4 out(Shape4{s.n, s.c, 1, 1});
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    double acc = 0.0;
    for (std::size_t q = 0; q < pixels; ++q) acc += xv[p * pixels + q];
    out[p] = acc * inv;
  }
  return tape.record(std::move(out), {x}, [x, s, pixels, inv](Tape& t, const Tensor4& grad) {
    Tensor4& dx = t.grad_buffer(x);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      const double v = grad[p] * inv;
      for (std::size_t q = 0; q < pixels; ++q) dx[p * pixels + q] += v;
    }
  });
}

Var flatten(Tape& tape, Var x) {
  const Shape4 s = tape.value(x).shape();
  Tensor4 out = tape.value(x).reshaped(Shape4{s.n, s.c * s.h * s.w, 1, 1});
  return tape.record(std::move(out), {x}, [x, s](Tape& t, const Tensor4& grad) {
    t.accumulate_grad(x, grad.reshaped(s));
  });
}

Var linear(Tape& tape, Var x, Var weight, std::optional<Var> bias) {
  const Tensor4& xv = tape.value(x);
  const Tensor4& wv = tape.value(weight);
  const Shape4& xs = xv.shape();
  const Shape4& ws = wv.shape();
  if (xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 || ws.c != xs.c) {
    throw ShapeError("linear: input " + xs.str() + " does not match weight " + ws.str());
  }
  const std::size_t n = xs.n;
  const std::size_t in = xs.c;
  const std::size_t outf = ws.n;
  if (bias && tape.value(*bias).numel() != outf) {
    throw ShapeError("linear: bias " + tape.value(*bias).shape().str() + " does not match weight " + ws.str());
  }
  Tensor4 out(Shape4{n, outf, 1, 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < outf; ++o) {
      double acc = bias ? tape.value(*bias)[o] : 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += wv[o * in + j] * xv[i * in + j];
      out[i * outf + o] = acc;
    }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(out), inputs, [x, weight, bias, n, in, outf](Tape& t, const Tensor4& grad) {
    const Tensor4& xv = t.value(x);
    const Tensor4& wv = t.value(weight);
    if (t.requires_grad(x)) {
      Tensor4& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < outf; ++o) {
          const double g = grad[i * outf + o];
          for (std::size_t j = 0; j < in; ++j) dx[i * in + j] += g * wv[o * in + j];
        }
    }
    if (t.requires_grad(weight)) {
      Tensor4& dw = t.grad_buffer(weight);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < outf; ++o) {
          const double g = grad[i * outf + o];
          for (std::size_t j = 0; j < in; ++j) dw[o * in + j] += g * xv[i * in + j];
        }
    }
    if (bias && t.requires_grad(*bias)) {
      Tensor4& db = t.grad_buffer(*bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < outf; ++o) db[o] += grad[i * outf + o];
    }
  });
}

}  // namespace cap
