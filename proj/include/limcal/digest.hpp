#pragma once

#include <bit>
#include <cstdint>
#include <string_view>

#include "limcal/matrix.hpp"

namespace limcal {

// 64-bit FNV-1a accumulator.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  void u64(std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, 8);
  }

  void text(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }

  // Name, shape and the IEEE-754 bit pattern of every entry.
  void tensor(std::string_view name, const Matrix& m) {
    text(name);
    u64(m.rows());
    u64(m.cols());
    for (double v : m.values()) u64(std::bit_cast<std::uint64_t>(v));
  }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace limcal
