#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace gausspac {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kSqrt2 = 1.41421356237309504880;

/// Standard normal density.
inline double normal_pdf(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }

/// Standard normal CDF, via erfc so the left tail keeps full precision.
inline double normal_cdf(double t) { return 0.5 * std::erfc(-t / kSqrt2); }

/// Upper tail P(Z > u) for Z standard normal.
inline double normal_sf(double u) { return 0.5 * std::erfc(u / kSqrt2); }

// splitmix64, used to derive independent RNG streams from a root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t s1, std::uint64_t s2) {
  return mix_seed(mix_seed(root, s1), s2);
}

// FNV-1a over raw bytes; used for checkpoint and config integrity stamps.
inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw std::invalid_argument(what + " must be finite");
}

}  // namespace gausspac
