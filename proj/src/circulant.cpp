#include "ernn/circulant.hpp"

#include <numeric>
#include <string>

#include "ernn/errors.hpp"

namespace ernn {

void require_partition(std::size_t rows, std::size_t cols, std::size_t block_size) {
  if (block_size == 0 || rows % block_size != 0 || cols % block_size != 0) {
    throw PartitionError("block size " + std::to_string(block_size) + " does not divide " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

BlockCirculantMatrix::BlockCirculantMatrix(std::size_t rows, std::size_t cols, std::size_t block_size)
    : rows_(rows), cols_(cols), block_(block_size) {
  require_partition(rows, cols, block_size);
  generators_.assign(rows * cols / block_size, 0.0);
}

BlockCirculantMatrix::BlockCirculantMatrix(std::size_t rows, std::size_t cols, std::size_t block_size,
                                           std::vector<double> generators)
    : rows_(rows), cols_(cols), block_(block_size), generators_(std::move(generators)) {
  require_partition(rows, cols, block_size);
  if (generators_.size() != rows * cols / block_size) {
    throw DimensionError("expected " + std::to_string(rows * cols / block_size) +
                         " generator values, got " + std::to_string(generators_.size()));
  }
}

BlockCirculantMatrix BlockCirculantMatrix::identity(std::size_t n, std::size_t block_size) {
  BlockCirculantMatrix m(n, n, block_size);
  for (std::size_t i = 0; i < m.block_rows(); ++i) m.generator(i, i)[0] = 1.0;
  return m;
}

std::span<const double> BlockCirculantMatrix::generator(std::size_t i, std::size_t j) const {
  return {generators_.data() + (i * block_cols() + j) * block_, block_};
}

std::span<double> BlockCirculantMatrix::generator(std::size_t i, std::size_t j) {
  return {generators_.data() + (i * block_cols() + j) * block_, block_};
}

double BlockCirculantMatrix::at(std::size_t r, std::size_t c) const {
  const std::size_t k = r % block_;
  const std::size_t l = c % block_;
  return generator(r / block_, c / block_)[(k + block_ - l) % block_];
}

Eigen::MatrixXd expand_to_dense(const BlockCirculantMatrix& m) {
  Eigen::MatrixXd dense(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      dense(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m.at(r, c);
  return dense;
}

std::vector<double> matvec_dense_oracle(const BlockCirculantMatrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) {
    throw DimensionError("input length " + std::to_string(x.size()) + " != cols " +
                         std::to_string(m.cols()));
  }
  const Eigen::MatrixXd dense = expand_to_dense(m);
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c)
      acc += dense(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
    out[r] = acc;
  }
  return out;
}

SpectralWeights::SpectralWeights(const BlockCirculantMatrix& m)
    : rows_(m.rows()), cols_(m.cols()), block_(m.block_size()) {
  if (!fft::is_power_of_two(block_)) {
    throw InvalidLengthError("FFT paths need a power-of-two block size, got " + std::to_string(block_));
  }
  spectra_.reserve(block_rows() * block_cols());
  for (std::size_t i = 0; i < block_rows(); ++i)
    for (std::size_t j = 0; j < block_cols(); ++j) spectra_.push_back(fft::rfft(m.generator(i, j)));
}

namespace {

void require_input(const SpectralWeights& w, std::span<const double> x) {
  if (x.size() != w.cols()) {
    throw DimensionError("input length " + std::to_string(x.size()) + " != cols " +
                         std::to_string(w.cols()));
  }
}

}  // namespace

std::vector<double> matvec_fft(const SpectralWeights& w, std::span<const double> x,
                               TransformCounters* counters) {
  require_input(w, x);
  const std::size_t lb = w.block_size();
  const std::uint64_t fft_cost = fft::fft_real_mult_count(lb);
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.block_rows(); ++i) {
    for (std::size_t j = 0; j < w.block_cols(); ++j) {
      const auto xs = fft::rfft(x.subspan(j * lb, lb));
      auto prod = fft::HalfSpectrum::zeros(lb);
      const auto mults = fft::spectral_mac(prod, w.spectrum(i, j), xs);
      const auto block_out = fft::irfft(prod);
      for (std::size_t k = 0; k < lb; ++k) out[i * lb + k] += block_out[k];
      if (counters) {
        counters->forward += 1;
        counters->inverse += 1;
        counters->fft_mults += 2 * fft_cost;
        counters->elementwise_mults += mults;
      }
    }
  }
  return out;
}

std::vector<double> matvec_decoupled(const SpectralWeights& w, std::span<const double> x,
                                     TransformCounters* counters) {
  require_input(w, x);
  const std::size_t lb = w.block_size();
  const std::uint64_t fft_cost = fft::fft_real_mult_count(lb);

  std::vector<fft::HalfSpectrum> segments;
  segments.reserve(w.block_cols());
  for (std::size_t j = 0; j < w.block_cols(); ++j) segments.push_back(fft::rfft(x.subspan(j * lb, lb)));

  std::uint64_t elementwise = 0;
  std::vector<double> out(w.rows());
  for (std::size_t i = 0; i < w.block_rows(); ++i) {
    auto acc = fft::HalfSpectrum::zeros(lb);
    for (std::size_t j = 0; j < w.block_cols(); ++j) elementwise += fft::spectral_mac(acc, w.spectrum(i, j), segments[j]);
    const auto block_out = fft::irfft(acc);
    std::copy(block_out.begin(), block_out.end(), out.begin() + static_cast<std::ptrdiff_t>(i * lb));
  }
  if (counters) {
    counters->forward += w.block_cols();
    counters->inverse += w.block_rows();
    counters->fft_mults += (w.block_cols() + w.block_rows()) * fft_cost;
    counters->elementwise_mults += elementwise;
  }
  return out;
}

BlockCirculantMatrix project_to_block_circulant(const Eigen::MatrixXd& dense, std::size_t block_size) {
  const auto rows = static_cast<std::size_t>(dense.rows());
  const auto cols = static_cast<std::size_t>(dense.cols());
  BlockCirculantMatrix out(rows, cols, block_size);
  const double inv = 1.0 / static_cast<double>(block_size);
  for (std::size_t i = 0; i < out.block_rows(); ++i) {
    for (std::size_t j = 0; j < out.block_cols(); ++j) {
      auto g = out.generator(i, j);
      const auto entry = [&](std::size_t k, std::size_t l) {
        return dense(static_cast<Eigen::Index>(i * block_size + k), static_cast<Eigen::Index>(j * block_size + l));
      };
      // Mean taken as offset from the diagonal's first entry, so a diagonal of
      // equal values maps back to that value exactly.
      for (std::size_t d = 0; d < block_size; ++d) {
        const double anchor = entry(d, 0);
        double spread = 0.0;
        for (std::size_t l = 1; l < block_size; ++l) spread += entry((d + l) % block_size, l) - anchor;
        g[d] = anchor + spread * inv;
      }
    }
  }
  return out;
}

bool is_block_circulant(const Eigen::MatrixXd& dense, std::size_t block_size) {
  const auto rows = static_cast<std::size_t>(dense.rows());
  const auto cols = static_cast<std::size_t>(dense.cols());
  if (block_size == 0 || rows % block_size != 0 || cols % block_size != 0) return false;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      // Each entry must equal its successor along the circulant diagonal.
      const std::size_t base_r = r - r % block_size;
      const std::size_t base_c = c - c % block_size;
      const std::size_t nr = base_r + (r % block_size + 1) % block_size;
      const std::size_t nc = base_c + (c % block_size + 1) % block_size;
      if (dense(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) !=
          dense(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nc)))
        return false;
    }
  }
  return true;
}

std::uint64_t CompressionRatio::numerator() const noexcept {
  return dense_parameters / std::gcd(dense_parameters, compressed_parameters);
}

std::uint64_t CompressionRatio::denominator() const noexcept {
  return compressed_parameters / std::gcd(dense_parameters, compressed_parameters);
}

CompressionRatio compression_ratio(std::size_t rows, std::size_t cols, std::size_t block_size) {
  require_partition(rows, cols, block_size);
  return {static_cast<std::uint64_t>(rows) * cols, static_cast<std::uint64_t>(rows) * cols / block_size};
}

}  // namespace ernn
