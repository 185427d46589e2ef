#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>

namespace argus {

// Incremental FNV-1a (64-bit). Used for parameter fingerprints, checkpoint
// blob checksums and config hashes. Not cryptographic; collision resistance
// is irrelevant here, run-to-run stability is what matters.
struct Fnv1a {
  uint64_t state = 0xcbf29ce484222325ull;

  void update(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(T));
  }
  uint64_t digest() const { return state; }
};

inline uint64_t fnv1a(const void* data, size_t n) {
  Fnv1a h;
  h.update(data, n);
  return h.digest();
}

inline std::string hex64(uint64_t v) {
  static const char* k = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = k[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace argus
