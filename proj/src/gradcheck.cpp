// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/linalg.hpp"
#include "cap/proxy.hpp"

namespace cap {

namespace {

double norm(const Tensor4& t) { return frobenius_norm(t); }

Tensor4 uniform(Shape4 s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor4 t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Entries bounded away from zero so relu kinks stay out of FD reach.
Tensor4 off_kink(Shape4 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor4 t(s);
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Var squared_error(Tape& tape, Var y, const Tensor4& target) {
  return frobenius_sq(tape, sub(tape, y, tape.leaf(target)));
}

// Relu whose backward ignores the activation mask.
Var corrupted_relu(Tape& tape, Var x) {
  Tensor4 out = tape.value(x);
  for (double& v : out.data()) v = std::max(v, 0.0);
  return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor4& g) { t.accumulate_grad(x, g); });
}

// Singular values apart by at least 1e-2 relative (in sigma^2) and singular
// vector signs stable under small perturbations.
bool well_conditioned(const Matrix& x) {
  const SvdFactors f = thin_svd(x);
  const std::size_t m = f.sigma.size();
  const double s0 = f.sigma[0] * f.sigma[0];
  if (s0 == 0.0) return false;
  for (std::size_t i = 0; i < m; ++i) {
    if (f.sigma[i] * f.sigma[i] < 1e-2 * s0) return false;
    for (std::size_t j = i + 1; j < m; ++j)
      if (std::abs(f.sigma[i] * f.sigma[i] - f.sigma[j] * f.sigma[j]) < 1e-2 * s0) return false;
  }
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> mags;
    for (std::size_t i = 0; i < f.u.rows(); ++i) mags.push_back(std::abs(f.u(i, j)));
    std::sort(mags.rbegin(), mags.rend());
    if (mags.size() > 1 && mags[0] - mags[1] < 1e-3) return false;
  }
  return true;
}

Matrix random_matrix(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix x(n, m);
  for (double& v : x.data()) v = d(rng);
  return x;
}

Matrix well_conditioned_matrix(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  for (;;) {
    Matrix x = random_matrix(n, m, rng);
    if (well_conditioned(x)) return x;
  }
}

double rel_error(const Matrix& a, const Matrix& b) {
  const double d = frobenius_norm(a - b);
  return d / std::max({frobenius_norm(a), frobenius_norm(b), 1e-12});
}

struct Case {
  std::string suite;
  std::string name;
  // Returns the relative error for one random instance.
  std::function<double(std::mt19937_64&)> instance;
};

std::vector<Case> autodiff_cases() {
  std::vector<Case> cases;
  const std::string s = "tensor-autodiff";
  auto conv_case = [&](std::string name, int stride, int pad, bool bias) {
    cases.push_back({s, std::move(name), [=](std::mt19937_64& rng) {
      const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4), k = pick(rng, 1, 3);
      const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
      std::vector<Tensor4> in{uniform({n, ci, h, w}, rng), uniform({co, ci, k, k}, rng)};
      if (bias) in.push_back(uniform({co, 1, 1, 1}, rng));
      const std::size_t oh = conv_output_size(h, k, stride, pad), ow = conv_output_size(w, k, stride, pad);
      const Tensor4 target = uniform({n, co, oh, ow}, rng);
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) {
            std::optional<Var> b;
            if (bias) b = v[2];
            return squared_error(t, conv2d(t, v[0], v[1], b, stride, pad), target);
          },
          in, 1e-6);
    }});
  };
  conv_case("conv2d_s1_p1_bias", 1, 1, true);
  conv_case("conv2d_s2_p0_nobias", 2, 0, false);
  conv_case("conv2d_s2_p1_bias", 2, 1, true);

  auto unary = [&](std::string name, std::function<Var(Tape&, Var)> op, bool kink) {
    cases.push_back({s, std::move(name), [=](std::mt19937_64& rng) {
      const Shape4 shape{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 2, 6), pick(rng, 2, 6)};
      const Tensor4 x = kink ? off_kink(shape, rng) : uniform(shape, rng);
      Tape probe;
      const Shape4 out = probe.value(op(probe, probe.leaf(x))).shape();
      const Tensor4 target = uniform(out, rng);
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) {
            const Var y = op(t, v[0]);
            return t.value(y).numel() == 1 ? y : squared_error(t, y, target);
          },
          {x}, 1e-6);
    }});
  };
  unary("relu", [](Tape& t, Var x) { return relu(t, x); }, true);
  unary("scale", [](Tape& t, Var x) { return scale(t, x, -1.7); }, false);
  unary("sum", [](Tape& t, Var x) { return sum(t, x); }, false);
  unary("frobenius_sq", [](Tape& t, Var x) { return frobenius_sq(t, x); }, false);
  unary("avg_pool_2x2", [](Tape& t, Var x) { return avg_pool(t, x, 2, 2); }, false);
  unary("avg_pool_2x1", [](Tape& t, Var x) { return avg_pool(t, x, 2, 1); }, false);
  unary("global_avg_pool", [](Tape& t, Var x) { return global_avg_pool(t, x); }, false);
  unary("flatten", [](Tape& t, Var x) { return flatten(t, x); }, false);

  auto binary = [&](std::string name, std::function<Var(Tape&, Var, Var)> op) {
    cases.push_back({s, std::move(name), [=](std::mt19937_64& rng) {
      const Shape4 shape{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6)};
      const Tensor4 target = uniform(shape, rng);
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) { return squared_error(t, op(t, v[0], v[1]), target); },
          {uniform(shape, rng), uniform(shape, rng)}, 1e-6);
    }});
  };
  binary("add", [](Tape& t, Var a, Var b) { return add(t, a, b); });
  binary("sub", [](Tape& t, Var a, Var b) { return sub(t, a, b); });

  cases.push_back({s, "channel_project", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 4), r = pick(rng, 1, c), h = pick(rng, 1, 6),
                      w = pick(rng, 1, 6);
    const Tensor4 target = uniform({n, r, h, w}, rng);
    return gradient_rel_error(
        [&](Tape& t, const std::vector<Var>& v) { return squared_error(t, channel_project(t, v[0], v[1]), target); },
        {uniform({n, c, h, w}, rng), uniform({c, r, 1, 1}, rng)}, 1e-6);
  }});
  cases.push_back({s, "transpose_matrix", [](std::mt19937_64& rng) {
    const std::size_t a = pick(rng, 1, 6), b = pick(rng, 1, 6);
    const Tensor4 target = uniform({b, a, 1, 1}, rng);
    return gradient_rel_error(
        [&](Tape& t, const std::vector<Var>& v) { return squared_error(t, transpose_matrix(t, v[0]), target); },
        {uniform({a, b, 1, 1}, rng)}, 1e-6);
  }});
  cases.push_back({s, "linear", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
    const Tensor4 target = uniform({n, out, 1, 1}, rng);
    return gradient_rel_error(
        [&](Tape& t, const std::vector<Var>& v) { return squared_error(t, linear(t, v[0], v[1], v[2]), target); },
        {uniform({n, in, 1, 1}, rng), uniform({out, in, 1, 1}, rng), uniform({out, 1, 1, 1}, rng)}, 1e-6);
  }});
  cases.push_back({s, "softmax_cross_entropy", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 6);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
    return gradient_rel_error(
        [&](Tape& t, const std::vector<Var>& v) { return softmax_cross_entropy(t, v[0], labels); },
        {uniform({n, k, 1, 1}, rng, -3.0, 3.0)}, 1e-6);
  }});
  cases.push_back({s, "conv_relu_pool_chain", [](std::mt19937_64& rng) {
    // Composite graph with fan-out: the input feeds both the conv and a skip.
    const std::size_t c = pick(rng, 1, 3);
    for (;;) {
      const Tensor4 x = uniform({1, c, 4, 4}, rng);
      const Tensor4 w = uniform({c, c, 3, 3}, rng);
      const Tensor4 b = uniform({c, 1, 1, 1}, rng);
      Tape probe;
      const Var pre = conv2d(probe, probe.leaf(x), probe.leaf(w), probe.leaf(b), 1, 1);
      const auto vals = probe.value(add(probe, pre, probe.leaf(x))).data();
      if (std::any_of(vals.begin(), vals.end(), [](double v) { return std::abs(v) < 1e-2; })) continue;
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) {
            const Var y = relu(t, add(t, conv2d(t, v[0], v[1], v[2], 1, 1), v[0]));
            return frobenius_sq(t, avg_pool(t, y, 2, 2));
          },
          {x, w, b}, 1e-6);
    }
  }});
  return cases;
}

std::vector<Case> svd_cases(const GradcheckOptions& o) {
  std::vector<Case> cases;
  const std::string s = "linalg-svd";
  cases.push_back({s, "svd_backward_uv_loss", [o](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, o.max_cols), n = pick(rng, m, o.max_rows);
    const Matrix x = well_conditioned_matrix(n, m, rng);
    const Matrix a = random_matrix(n, m, rng), b = random_matrix(m, m, rng);
    auto loss = [&](const Matrix& xx) {
      const SvdFactors f = thin_svd(xx);
      double l = 0.0;
      for (std::size_t i = 0; i < a.data().size(); ++i) l += a.data()[i] * f.u.data()[i];
      for (std::size_t i = 0; i < b.data().size(); ++i) l += b.data()[i] * f.v.data()[i];
      return l;
    };
    const SvdFactors f = thin_svd(x);
    const Matrix analytic = svd_backward(f, make_svd_grad_context(f), a, b);
    Matrix fd(n, m);
    for (std::size_t i = 0; i < x.data().size(); ++i) {
      Matrix xp = x, xm = x;
      xp.data()[i] += o.step;
      xm.data()[i] -= o.step;
      fd.data()[i] = (loss(xp) - loss(xm)) / (2.0 * o.step);
    }
    return rel_error(analytic, fd);
  }});
  cases.push_back({s, "svd_backward_polar_target", [o](std::mt19937_64& rng) {
    const std::size_t m = pick(rng, 1, o.max_cols), n = pick(rng, m, o.max_rows);
    const Matrix x = well_conditioned_matrix(n, m, rng);
    const Tensor4 target = random_matrix(n, m, rng).to_tensor();
    return gradient_rel_error([&](Tape& t, const std::vector<Var>& v) { return squared_error(t, phi(t, v[0]), target); },
                              {x.to_tensor()}, o.step);
  }});
  return cases;
}

std::vector<Case> proxy_cases(const GradcheckOptions& o) {
  std::vector<Case> cases;
  const std::string s = "proxy-projection";
  cases.push_back({s, "proxy_channel_projection", [o](std::mt19937_64& rng) {
    // X -> Phi(X) -> project -> relu -> back-project -> loss.
    const std::size_t r = pick(rng, 1, o.max_cols), c = pick(rng, std::max<std::size_t>(r, 2), o.max_rows);
    const Matrix x = well_conditioned_matrix(c, r, rng);
    for (;;) {
      const Tensor4 act = uniform({2, c, 3, 3}, rng);
      Tape probe;
      const Var pre = channel_project(probe, probe.leaf(act), phi(probe, probe.leaf(x.to_tensor())));
      const auto vals = probe.value(pre).data();
      if (std::any_of(vals.begin(), vals.end(), [](double v) { return std::abs(v) < 1e-2; })) continue;
      const Tensor4 target = uniform({2, c, 3, 3}, rng);
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) {
            const Var p = phi(t, v[0]);
            const Var y = relu(t, channel_project(t, t.leaf(act), p));
            return squared_error(t, channel_project(t, y, transpose_matrix(t, p)), target);
          },
          {x.to_tensor()}, o.step);
    }
  }});
  cases.push_back({s, "orthonormal_x_sum_loss", [o](std::mt19937_64& rng) {
    // sigma = 1s: the analytic gradient comes from a re-perturbed proxy, the
    // FD reference from the exact orthonormal X.
    const std::size_t r = pick(rng, 1, o.max_cols), c = pick(rng, r, o.max_rows);
    const Matrix q = polar_factor(thin_svd(random_matrix(c, r, rng)));
    ProjectionProxy proxy(q, rng());
    Tape tape;
    const BoundProxy b = bind_proxy(tape, proxy, true);
    tape.backward(sum(tape, b.projection));
    const Matrix analytic = Matrix::from_tensor(tape.grad(b.x));
    auto loss = [](const Matrix& xx) {
      const Matrix p = polar_factor(thin_svd(xx));
      double l = 0.0;
      for (double v : p.data()) l += v;
      return l;
    };
    Matrix fd(c, r);
    for (std::size_t i = 0; i < q.data().size(); ++i) {
      Matrix xp = q, xm = q;
      xp.data()[i] += o.step;
      xm.data()[i] -= o.step;
      fd.data()[i] = (loss(xp) - loss(xm)) / (2.0 * o.step);
    }
    return rel_error(analytic, fd);
  }});
  return cases;
}

}  // namespace

double gradient_rel_error(const LossBuilder& build, const std::vector<Tensor4>& inputs, double step) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  const Var loss = build(tape, leaves);
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor4 analytic = tape.grad(leaves[k]);
    Tensor4 fd(inputs[k].shape());
    std::vector<Tensor4> probe = inputs;
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      auto eval = [&](double delta) {
        probe[k][i] = inputs[k][i] + delta;
        Tape t;
        std::vector<Var> v;
        for (const auto& p : probe) v.push_back(t.leaf(p));
        return t.value(build(t, v)).item();
      };
      fd[i] = (eval(step) - eval(-step)) / (2.0 * step);
      probe[k][i] = inputs[k][i];
    }
    Tensor4 diff = analytic;
    for (std::size_t i = 0; i < diff.numel(); ++i) diff[i] -= fd[i];
    worst = std::max(worst, norm(diff) / std::max({norm(analytic), norm(fd), 1e-12}));
  }
  return worst;
}

std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& options) {
  std::vector<Case> cases = autodiff_cases();
  for (auto& c : svd_cases(options)) cases.push_back(std::move(c));
  for (auto& c : proxy_cases(options)) cases.push_back(std::move(c));
  if (options.include_corrupted) {
    cases.push_back({"negative-control", "corrupted_relu_backward", [](std::mt19937_64& rng) {
      const Tensor4 x = off_kink({1, 2, 3, 3}, rng);
      const Tensor4 target = uniform({1, 2, 3, 3}, rng);
      return gradient_rel_error(
          [&](Tape& t, const std::vector<Var>& v) { return squared_error(t, corrupted_relu(t, v[0]), target); }, {x},
          1e-6);
    }});
  }
  std::vector<GradcheckCase> out;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    std::mt19937_64 rng(options.seed * 7919ULL + ci);
    GradcheckCase r{cases[ci].suite, cases[ci].name, options.instances, 0.0, true};
    for (std::size_t i = 0; i < options.instances; ++i) r.max_rel_error = std::max(r.max_rel_error, cases[ci].instance(rng));
    r.passed = r.max_rel_error < options.tolerance;
    out.push_back(r);
  }
  return out;
}

bool all_passed(const std::vector<GradcheckCase>& cases) {
  return std::all_of(cases.begin(), cases.end(), [](const GradcheckCase& c) { return c.passed; });
}

std::string gradcheck_csv(const std::vector<GradcheckCase>& cases, double tolerance) {
  std::ostringstream out;
  out << kGradcheckCsvHeader << "\n";
  char buf[32];
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof(buf), "%.3e", c.max_rel_error);
    std::string tol(32, '\0');
    tol.resize(static_cast<std::size_t>(std::snprintf(tol.data(), tol.size(), "%.0e", tolerance)));
    out << c.suite << "," << c.name << "," << c.instances << "," << buf << "," << tol << ","
        << (c.passed ? "PASS" : "FAIL") << "\n";
  }
  return out.str();
}

}  // namespace cap
