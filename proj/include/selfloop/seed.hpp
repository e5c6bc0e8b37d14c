#pragma once

// Deterministic substream derivation and small hashing helpers.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace selfloop {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

enum class SeedPurpose { DataGen, Split, ModelInit, Train, Sample, Cycle, Diversity };

constexpr std::string_view purpose_label(SeedPurpose p) noexcept {
  switch (p) {
    case SeedPurpose::DataGen: return "datagen";
    case SeedPurpose::Split: return "split";
    case SeedPurpose::ModelInit: return "model-init";
    case SeedPurpose::Train: return "train";
    case SeedPurpose::Sample: return "sample";
    case SeedPurpose::Cycle: return "cycle";
    case SeedPurpose::Diversity: return "diversity";
  }
  return "";
}

/// Keyed hash of (master seed, purpose label, generation). The master seed
/// keys every mixing round so distinct masters give unrelated streams.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                    std::uint64_t t) noexcept {
  std::uint64_t h = splitmix64(master ^ 0x5ee1f00d5ee1f00dULL);
  h = splitmix64(h ^ fnv1a(label));
  h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, SeedPurpose p, std::uint64_t t) noexcept {
  return derive_seed(master, purpose_label(p), t);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace selfloop
