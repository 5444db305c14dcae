// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cap {

// Flat `key = value` text, UTF-8, with `#` comments and blank lines.
class KeyValueFile {
 public:
  struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
  };

  static KeyValueFile parse(std::string_view text, std::string source = "<config>");
  static KeyValueFile load(const std::string& path);

  const std::string& source() const noexcept { return source_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const Entry* find(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key) != nullptr; }

  std::string get_string(std::string_view key, std::string fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::size_t get_size(std::string_view key, std::size_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<double> get_doubles(std::string_view key, std::vector<double> fallback) const;
  std::vector<std::int64_t> get_ints(std::string_view key, std::vector<std::int64_t> fallback) const;

  // Throws ParseError at the first key that is neither listed nor matches one
  // of the `prefix*suffix` patterns.
  void require_known(const std::vector<std::string>& keys,
                     const std::vector<std::pair<std::string, std::string>>& patterns = {}) const;

  [[noreturn]] void fail(const Entry& entry, const std::string& message) const;

 private:
  std::string source_;
  std::vector<Entry> entries_;
};

std::string read_text_file(const std::string& path);

}  // namespace cap
