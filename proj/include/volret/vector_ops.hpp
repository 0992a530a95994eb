#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace volret {

/// Norm deviation above which a vector is renormalized on load.
inline constexpr double kNormTolerance = 1e-6;

/// Inner product accumulated in double. Every slice-level score in the
/// engine goes through this function so exact and approximate search agree
/// bit-for-bit on the score of a given pair.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double sum = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return sum;
}

inline double l2_norm(std::span<const float> v) noexcept { return std::sqrt(dot(v, v)); }

inline bool all_finite(std::span<const float> v) noexcept {
  for (float x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

/// Scales `v` to unit length when its norm is off by more than kNormTolerance.
/// Returns false for zero vectors, which cannot be normalized.
inline bool normalize_in_place(std::span<float> v) noexcept {
  const double norm = l2_norm(v);
  if (!(norm > 0.0)) return false;
  if (std::abs(norm - 1.0) <= kNormTolerance) return true;
  for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
  return true;
}

}  // namespace volret
