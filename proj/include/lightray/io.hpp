#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "lightray/errors.hpp"

namespace lightray {

using Json = nlohmann::json;

/// Locale-independent 17-significant-digit rendering.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, end);
}

/// Rectangular table of real columns, written as comma-separated text with a
/// header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row) {
    if (row.size() != header.size()) throw InvalidArgument("CSV row width does not match header");
    rows.push_back(std::move(row));
  }

  [[nodiscard]] std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InvalidArgument("no CSV column named " + std::string(name));
  }

  [[nodiscard]] std::vector<double> values(std::string_view name) const {
    const auto c = column(name);
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r[c]);
    return v;
  }

  [[nodiscard]] double max_of(std::string_view name) const {
    const auto c = column(name);
    double m = -INFINITY;
    for (const auto& r : rows) m = std::max(m, r[c]);
    return m;
  }

  void write(std::ostream& os) const {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_double(r[i]);
      os << '\n';
    }
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write(out);
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }
};

/// {max, mean, count} over a sample; NaNs are skipped.
inline Json summary_stats(const std::vector<double>& values) {
  double mx = 0.0, sum = 0.0;
  std::size_t count = 0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    mx = count == 0 ? v : std::max(mx, v);
    sum += v;
    ++count;
  }
  return Json{{"max", mx}, {"mean", count ? sum / static_cast<double>(count) : 0.0}, {"count", count}};
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace lightray
