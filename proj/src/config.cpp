// Copyright 2026 The CaP Authors
// SPDX-License-Identifier: Apache-2.0

#include "cap/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cap/errors.hpp"

namespace cap {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string source) {
  KeyValueFile file;
  file.source_ = std::move(source);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    ++line_no;
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(file.source_, line_no, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(file.source_, line_no, "empty key");
    if (value.empty()) throw ParseError(file.source_, line_no, "empty value for '" + std::string(key) + "'");
    if (file.find(key)) throw ParseError(file.source_, line_no, "duplicate key '" + std::string(key) + "'");
    file.entries_.push_back(Entry{std::string(key), std::string(value), line_no});
  }
  return file;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

KeyValueFile KeyValueFile::load(const std::string& path) { return parse(read_text_file(path), path); }

const KeyValueFile::Entry* KeyValueFile::find(std::string_view key) const {
  for (const auto& e : entries_)
    if (e.key == key) return &e;
  return nullptr;
}

void KeyValueFile::fail(const Entry& entry, const std::string& message) const {
  throw ParseError(source_, entry.line, "'" + entry.key + "': " + message);
}

std::string KeyValueFile::get_string(std::string_view key, std::string fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

std::int64_t KeyValueFile::get_int(std::string_view key, std::int64_t fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::int64_t v = 0;
  const auto* b = e->value.data();
  const auto [ptr, ec] = std::from_chars(b, b + e->value.size(), v);
  if (ec != std::errc() || ptr != b + e->value.size()) fail(*e, "expected an integer, got '" + e->value + "'");
  return v;
}

std::size_t KeyValueFile::get_size(std::string_view key, std::size_t fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  const std::int64_t v = get_int(key, 0);
  if (v < 0) fail(*e, "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

double KeyValueFile::get_double(std::string_view key, double fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(e->value, &used);
    if (used != e->value.size()) fail(*e, "expected a number, got '" + e->value + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(*e, "expected a number, got '" + e->value + "'");
  }
}

bool KeyValueFile::get_bool(std::string_view key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  fail(*e, "expected true/false, got '" + e->value + "'");
}

std::vector<double> KeyValueFile::get_doubles(std::string_view key, std::vector<double> fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) fail(*e, "bad list element '" + item + "'");
    } catch (const std::logic_error&) {
      fail(*e, "bad list element '" + item + "'");
    }
  }
  return out;
}

std::vector<std::int64_t> KeyValueFile::get_ints(std::string_view key, std::vector<std::int64_t> fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(e->value)) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) fail(*e, "bad list element '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void KeyValueFile::require_known(const std::vector<std::string>& keys,
                                 const std::vector<std::pair<std::string, std::string>>& patterns) const {
  for (const auto& e : entries_) {
    if (std::find(keys.begin(), keys.end(), e.key) != keys.end()) continue;
    const bool matched = std::any_of(patterns.begin(), patterns.end(), [&](const auto& p) {
      return e.key.size() > p.first.size() + p.second.size() && e.key.starts_with(p.first) &&
             e.key.ends_with(p.second);
    });
    if (!matched) fail(e, "unknown key");
  }
}

}  // namespace cap
