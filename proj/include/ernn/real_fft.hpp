#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ernn::fft {

using Complex = std::complex<double>;

/// The length/2 + 1 non-redundant bins of the DFT of a real sequence.
///
/// The remaining bins follow from conjugate symmetry,
/// full[k] == conj(full[length - k]). Bins 0 and length/2 are real.
struct HalfSpectrum {
  std::size_t length = 0;
  std::vector<Complex> bins;

  static HalfSpectrum zeros(std::size_t length);

  static constexpr std::size_t bin_count(std::size_t length) noexcept { return length / 2 + 1; }
};

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// Forward transform, unscaled. Length must be a power of two.
HalfSpectrum rfft(std::span<const double> x);

/// Inverse transform, scaled by 1/length.
std::vector<double> irfft(const HalfSpectrum& s);

/// acc[k] += w[k] * x[k] on every retained bin. Returns the number of real
/// multiplications performed (bins 0 and length/2 are real products).
std::uint64_t spectral_mac(HalfSpectrum& acc, const HalfSpectrum& w, const HalfSpectrum& x);

/// How many real multiplications one complex product is charged.
enum class ComplexMultCost : unsigned { kFourReal = 4, kThreeReal = 3 };

/// Real multiplications in one length-point FFT (or IFFT).
///
/// Levels 1 and 2 have only trivial twiddles (+-1, +-i). Level j >= 3
/// multiplies in (length/2) * 2^-(j-2) butterflies.
std::uint64_t fft_real_mult_count(std::size_t length,
                                  ComplexMultCost cost = ComplexMultCost::kFourReal);

/// Real multiplications in one half-spectrum element-wise product.
std::uint64_t spectral_product_mult_count(std::size_t length,
                                          ComplexMultCost cost = ComplexMultCost::kFourReal);

}  // namespace ernn::fft
