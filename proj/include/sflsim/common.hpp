#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sflsim {

using ClientId = std::size_t;
using Label = std::size_t;

/// Inconsistent tensor or parameter shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf showed up during training or evaluation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration or input file.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// FNV-1a over raw bytes. Used for config hashes and parameter fingerprints.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(std::as_bytes(std::span(s.data(), s.size()))); }
  void update(double v) { update(std::bit_cast<std::uint64_t>(v)); }
  void update(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xffU;
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

}  // namespace sflsim
