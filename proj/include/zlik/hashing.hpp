#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace zlik {

// 64-bit FNV-1a. Stable across platforms; used for config/file hashes and
// for the hashed text embedder.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for stream `index` of a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::string hex64(std::uint64_t h);

// FNV-1a over a file's bytes, as 16 hex digits. Throws MissingArtifactError.
std::string hash_file(const std::filesystem::path& path);

}  // namespace zlik
