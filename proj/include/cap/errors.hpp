// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cap {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two singular values (or one singular value and zero) are too close for the
// SVD backward pass. `first`/`second` index the offending pair; a collapsed
// smallest singular value is reported as (m-1, m-1).
class DegenerateSpectrumError : public NumericError {
 public:
  DegenerateSpectrumError(std::size_t first, std::size_t second, double gap, double threshold);

  std::size_t first() const noexcept { return first_; }
  std::size_t second() const noexcept { return second_; }
  double gap() const noexcept { return gap_; }

 private:
  std::size_t first_;
  std::size_t second_;
  double gap_;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cap
