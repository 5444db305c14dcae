// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/errors.hpp"

#include <sstream>

namespace cap {

namespace {

std::string degenerate_message(std::size_t first, std::size_t second, double gap, double threshold) {
  std::ostringstream os;
  os.precision(6);
  os << "degenerate singular spectrum: pair (" << first << ", " << second << ") has squared gap " << gap
     << " below guard " << threshold << "; re-perturb the proxy matrix";
  return os.str();
}

}  // namespace

DegenerateSpectrumError::DegenerateSpectrumError(std::size_t first, std::size_t second, double gap,
                                                 double threshold)
    : NumericError(degenerate_message(first, second, gap, threshold)),
      first_(first),
      second_(second),
      gap_(gap) {}

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

}  // namespace cap
