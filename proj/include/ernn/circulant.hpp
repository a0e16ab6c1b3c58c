#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ernn/real_fft.hpp"

namespace ernn {

/// An m x n matrix made of a p x q grid of L_b x L_b circulant blocks.
///
/// Each block is stored as one generator vector w, which is the block's
/// first column: Block[k][l] = w[(k - l) mod L_b]. With this convention
/// Block * x == irfft(rfft(w) * rfft(x)) under the standard DFT.
///
/// Generators are stored row-major over the block grid, block (i, j) at
/// offset (i * q + j) * L_b.
class BlockCirculantMatrix {
 public:
  BlockCirculantMatrix() = default;

  /// All-zero matrix. Throws PartitionError unless block_size divides rows
  /// and cols.
  BlockCirculantMatrix(std::size_t rows, std::size_t cols, std::size_t block_size);

  BlockCirculantMatrix(std::size_t rows, std::size_t cols, std::size_t block_size,
                       std::vector<double> generators);

  /// Square identity: generator e_0 on the diagonal blocks.
  static BlockCirculantMatrix identity(std::size_t n, std::size_t block_size);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t block_size() const noexcept { return block_; }
  std::size_t block_rows() const noexcept { return block_ ? rows_ / block_ : 0; }
  std::size_t block_cols() const noexcept { return block_ ? cols_ / block_ : 0; }

  std::span<const double> generator(std::size_t i, std::size_t j) const;
  std::span<double> generator(std::size_t i, std::size_t j);

  const std::vector<double>& generators() const noexcept { return generators_; }
  std::vector<double>& generators() noexcept { return generators_; }

  /// Dense entry (r, c).
  double at(std::size_t r, std::size_t c) const;

  std::size_t parameter_count() const noexcept { return generators_.size(); }

  friend bool operator==(const BlockCirculantMatrix&, const BlockCirculantMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t block_ = 0;
  std::vector<double> generators_;
};

/// Throws PartitionError unless block_size > 0 divides both dimensions.
void require_partition(std::size_t rows, std::size_t cols, std::size_t block_size);

Eigen::MatrixXd expand_to_dense(const BlockCirculantMatrix& m);

/// Direct O(mn) product with the dense expansion.
std::vector<double> matvec_dense_oracle(const BlockCirculantMatrix& m, std::span<const double> x);

/// Precomputed half spectra of every generator. Requires a power-of-two
/// block size.
class SpectralWeights {
 public:
  SpectralWeights() = default;
  explicit SpectralWeights(const BlockCirculantMatrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t block_size() const noexcept { return block_; }
  std::size_t block_rows() const noexcept { return block_ ? rows_ / block_ : 0; }
  std::size_t block_cols() const noexcept { return block_ ? cols_ / block_ : 0; }

  const fft::HalfSpectrum& spectrum(std::size_t i, std::size_t j) const {
    return spectra_[i * block_cols() + j];
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t block_ = 0;
  std::vector<fft::HalfSpectrum> spectra_;
};

/// Caller-owned accumulator for transform calls and real multiplications.
struct TransformCounters {
  std::uint64_t forward = 0;
  std::uint64_t inverse = 0;
  std::uint64_t fft_mults = 0;
  std::uint64_t elementwise_mults = 0;

  std::uint64_t total_mults() const noexcept { return fft_mults + elementwise_mults; }
};

/// Per-block FFT -> multiply -> IFFT, summed in the time domain.
/// Uses p*q forward and p*q inverse transforms.
std::vector<double> matvec_fft(const SpectralWeights& w, std::span<const double> x,
                               TransformCounters* counters = nullptr);

/// One forward transform per input segment, frequency-domain accumulation
/// per output segment, one inverse transform per output segment.
std::vector<double> matvec_decoupled(const SpectralWeights& w, std::span<const double> x,
                                     TransformCounters* counters = nullptr);

/// Nearest block-circulant matrix in Frobenius norm: each generator entry
/// is the mean of its block's circulant diagonal.
BlockCirculantMatrix project_to_block_circulant(const Eigen::MatrixXd& dense, std::size_t block_size);

/// True when every block of dense is exactly circulant (bitwise equality
/// along each circulant diagonal).
bool is_block_circulant(const Eigen::MatrixXd& dense, std::size_t block_size);

struct CompressionRatio {
  std::uint64_t dense_parameters = 0;
  std::uint64_t compressed_parameters = 0;

  /// dense : compressed, reduced. Equal to (L_b, 1) for every valid shape.
  std::uint64_t numerator() const noexcept;
  std::uint64_t denominator() const noexcept;
  double value() const noexcept {
    return static_cast<double>(dense_parameters) / static_cast<double>(compressed_parameters);
  }
};

CompressionRatio compression_ratio(std::size_t rows, std::size_t cols, std::size_t block_size);

}  // namespace ernn
