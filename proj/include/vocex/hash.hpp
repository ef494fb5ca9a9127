#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vocex {

// FNV-1a 64-bit. Used for artifact manifests and config hashes; stable across
// platforms and runs, which std::hash does not guarantee.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes);
std::string fnv1a64_file_hex(const std::string& path);

}  // namespace vocex
