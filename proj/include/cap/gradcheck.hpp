// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cap/autodiff.hpp"

namespace cap {

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t instances = 50;
  // Upper bounds for the proxy / SVD cases (rows x rank).
  std::size_t max_rows = 8;
  std::size_t max_cols = 3;
  double step = 1e-6;
  double tolerance = 1e-4;
  // Adds a case with a deliberately wrong backward pass, which must fail.
  bool include_corrupted = false;
};

struct GradcheckCase {
  std::string suite;
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Builds a scalar loss from leaves holding `inputs` (in order).
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// max over inputs of ||analytic - fd|| / max(||analytic||, ||fd||, 1e-12), with
// central differences of the given step.
double gradient_rel_error(const LossBuilder& build, const std::vector<Tensor4>& inputs, double step);

std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& options);
bool all_passed(const std::vector<GradcheckCase>& cases);

inline constexpr const char* kGradcheckCsvHeader = "suite,case,instances,max_rel_error,tolerance,status";
std::string gradcheck_csv(const std::vector<GradcheckCase>& cases, double tolerance);

}  // namespace cap
