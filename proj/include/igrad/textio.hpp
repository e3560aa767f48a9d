#pragma once

// Locale-independent number <-> text helpers. Everything written by this
// library (datasets, CSVs, checkpoints) goes through std::to_chars /
// std::from_chars: shortest round-trip decimal for human-facing files and
// hex floats where bitwise fidelity matters.

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace igrad {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double failed");
  return std::string(buf, p);
}

inline std::string fmt_double_hex(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  if (ec != std::errc{}) throw std::runtime_error("fmt_double_hex failed");
  return std::string(buf, p);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("cannot parse number: '" + std::string(s) + "'");
  return v;
}

inline double parse_double_hex(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("cannot parse hex float: '" + std::string(s) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("cannot parse integer: '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("cannot parse unsigned integer: '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_hex64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("cannot parse hex value: '" + std::string(s) + "'");
  return v;
}

}  // namespace igrad
