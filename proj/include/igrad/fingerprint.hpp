#pragma once

// FNV-1a hashing for content fingerprints (model parameters, datasets).
// Fingerprints are stable across runs and platforms because they hash the
// raw IEEE-754 bit patterns, never formatted text.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace igrad {

class Fnv1a {
 public:
  void mix(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      hash_ ^= (v >> (8 * i)) & 0xff;
      hash_ *= 0x100000001b3ULL;
    }
  }
  void mix(double v) { mix(std::bit_cast<std::uint64_t>(v)); }
  void mix(std::span<const double> vs) {
    for (double v : vs) mix(v);
  }
  void mix(std::string_view s) {
    for (char c : s) {
      hash_ ^= static_cast<unsigned char>(c);
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string fingerprint_hex(std::uint64_t fp);

}  // namespace igrad
