#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace biounet {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
  return splitmix64(seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

/// FNV-1a over raw bytes.
inline std::uint64_t hash_bytes(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t hash_span(std::span<const T> values, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  return hash_bytes(values.data(), values.size_bytes(), seed);
}

inline std::uint64_t hash_string(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  return hash_bytes(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t value);

}  // namespace biounet
