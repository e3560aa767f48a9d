#include "igrad/fingerprint.hpp"

#include <charconv>

namespace igrad {

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[16];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, fp, 16);
  (void)ec;
  std::string s(buf, end);
  return std::string(16 - s.size(), '0') + s;
}

}  // namespace igrad
