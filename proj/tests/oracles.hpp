#pragma once

// Independent reference computations used only by tests.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace ernn::testing {

/// O(n^2) DFT, forward, unscaled.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

/// Per-level enumeration of multiplying butterflies: level j >= 3 has
/// (n/2) / 2^(j-2) of them, each one complex multiplication.
inline std::uint64_t enumerate_fft_mults(std::size_t n, unsigned real_per_complex = 4) {
  std::uint64_t complex_mults = 0;
  std::size_t levels = 0;
  while ((std::size_t{1} << levels) < n) ++levels;
  for (std::size_t j = 3; j <= levels; ++j) {
    std::size_t butterflies = n / 2;
    for (std::size_t s = 0; s < j - 2; ++s) butterflies /= 2;
    complex_mults += butterflies;
  }
  return complex_mults * real_per_complex;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace ernn::testing
