#include "ernn/real_fft.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "ernn/errors.hpp"

namespace ernn::fft {
namespace {

constexpr double kSymmetryTolerance = 1e-9;

struct Plan {
  std::size_t n = 0;
  std::vector<std::size_t> bitrev;
  std::vector<Complex> twiddles;  // exp(-2 pi i k / n), k < n/2
};

std::unique_ptr<Plan> make_plan(std::size_t n) {
  auto plan = std::make_unique<Plan>();
  plan->n = n;
  plan->bitrev.resize(n);
  const int bits = std::countr_zero(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
    plan->bitrev[i] = r;
  }
  plan->twiddles.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan->twiddles[k] = {std::cos(angle), std::sin(angle)};
  }
  // Exact values at the quarter points keep the trivial levels exact.
  if (n >= 4) plan->twiddles[n / 4] = {0.0, -1.0};
  return plan;
}

// One plan per power of two, built on first use and read-only afterwards.
const Plan& plan_for(std::size_t n) {
  static std::array<std::once_flag, 64> flags;
  static std::array<std::unique_ptr<Plan>, 64> plans;
  const auto slot = static_cast<std::size_t>(std::countr_zero(n));
  std::call_once(flags[slot], [&] { plans[slot] = make_plan(n); });
  return *plans[slot];
}

void transform(std::vector<Complex>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n < 2) return;
  const Plan& plan = plan_for(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = plan.bitrev[i];
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t half = 1; half < n; half <<= 1) {
    const std::size_t stride = n / (2 * half);
    for (std::size_t start = 0; start < n; start += 2 * half) {
      for (std::size_t k = 0; k < half; ++k) {
        Complex w = plan.twiddles[k * stride];
        if (inverse) w = std::conj(w);
        const Complex t = w * data[start + k + half];
        data[start + k + half] = data[start + k] - t;
        data[start + k] += t;
      }
    }
  }
}

void require_length(std::size_t n) {
  if (!is_power_of_two(n)) {
    throw InvalidLengthError("transform length must be a nonzero power of two, got " +
                             std::to_string(n));
  }
}

}  // namespace

HalfSpectrum HalfSpectrum::zeros(std::size_t length) {
  require_length(length);
  return HalfSpectrum{length, std::vector<Complex>(bin_count(length))};
}

HalfSpectrum rfft(std::span<const double> x) {
  require_length(x.size());
  std::vector<Complex> data(x.begin(), x.end());
  transform(data, false);
  HalfSpectrum out{x.size(), {}};
  out.bins.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(HalfSpectrum::bin_count(x.size())));
  // Real-input symmetry holds exactly in theory; drop rounding residue.
  out.bins.front().imag(0.0);
  out.bins.back().imag(0.0);
  return out;
}

std::vector<double> irfft(const HalfSpectrum& s) {
  require_length(s.length);
  const std::size_t n = s.length;
  if (s.bins.size() != HalfSpectrum::bin_count(n)) {
    throw MalformedSpectrumError("half spectrum of length " + std::to_string(n) + " needs " +
                                 std::to_string(HalfSpectrum::bin_count(n)) + " bins, got " +
                                 std::to_string(s.bins.size()));
  }
  if (std::abs(s.bins.front().imag()) > kSymmetryTolerance ||
      std::abs(s.bins.back().imag()) > kSymmetryTolerance) {
    throw MalformedSpectrumError("bins 0 and length/2 must be real");
  }
  std::vector<Complex> full(n);
  full[0] = s.bins[0].real();
  for (std::size_t k = 1; k < n / 2; ++k) {
    full[k] = s.bins[k];
    full[n - k] = std::conj(s.bins[k]);
  }
  if (n >= 2) full[n / 2] = s.bins[n / 2].real();
  transform(full, true);
  std::vector<double> out(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = full[i].real() * scale;
  return out;
}

std::uint64_t spectral_mac(HalfSpectrum& acc, const HalfSpectrum& w, const HalfSpectrum& x) {
  if (acc.length != w.length || acc.length != x.length || acc.bins.size() != w.bins.size() ||
      acc.bins.size() != x.bins.size()) {
    throw DimensionError("spectral_mac operands differ in length");
  }
  const std::size_t last = acc.bins.size() - 1;
  std::uint64_t mults = 0;
  for (std::size_t k = 0; k < acc.bins.size(); ++k) {
    if (k == 0 || k == last) {
      acc.bins[k] += w.bins[k].real() * x.bins[k].real();
      mults += 1;
    } else {
      const Complex a = w.bins[k];
      const Complex b = x.bins[k];
      acc.bins[k] += Complex(a.real() * b.real() - a.imag() * b.imag(),
                             a.real() * b.imag() + a.imag() * b.real());
      mults += 4;
    }
  }
  return mults;
}

std::uint64_t fft_real_mult_count(std::size_t length, ComplexMultCost cost) {
  if (length < 4) return 0;
  require_length(length);
  return static_cast<std::uint64_t>(cost) * (length / 2 - 2);
}

std::uint64_t spectral_product_mult_count(std::size_t length, ComplexMultCost cost) {
  require_length(length);
  if (length == 1) return 1;
  return 2 + static_cast<std::uint64_t>(cost) * (length / 2 - 1);
}

}  // namespace ernn::fft
