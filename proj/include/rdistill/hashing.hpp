#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace rdistill {

// 64-bit FNV-1a. Used for artifact checksums and config fingerprints, not
// for anything adversarial.
class Fnv1a64 {
 public:
  void update(std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view s) {
  Fnv1a64 h;
  h.update(s);
  return h.hex();
}

inline std::string fnv1a_hex(std::span<const unsigned char> bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.hex();
}

}  // namespace rdistill
