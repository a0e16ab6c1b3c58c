#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ernn/layer_spec.hpp"
#include "ernn/real_fft.hpp"

namespace ernn::cost {

/// Real multiplications of one decoupled block-circulant matvec:
/// q forward FFTs, p*q half-spectrum products and p inverse FFTs.
/// block_size == 1 gives rows * cols. Throws PartitionError.
std::uint64_t layer_mult_count(std::size_t rows, std::size_t cols, std::size_t block_size,
                               fft::ComplexMultCost cost = fft::ComplexMultCost::kFourReal);

/// (block size, count / dense count) for each power of two in
/// [1, max_block] that partitions a rows x cols matrix.
std::vector<std::pair<std::size_t, double>> normalized_curve(std::size_t rows, std::size_t cols,
                                                             std::size_t max_block = 128);

/// Matrix-product multiplications of one time step of the whole stack.
std::uint64_t model_mult_count(const LayerSpec& spec);

/// Point-wise multiplications per step: peepholes (3H) for LSTM, the reset
/// product (H) for GRU.
std::uint64_t pointwise_mult_count(const LayerSpec& spec);

/// Compressed parameters: m*n/L per matrix plus every bias and peephole.
std::uint64_t parameter_count(const LayerSpec& spec);

std::uint64_t matrix_storage_bytes(std::size_t rows, std::size_t cols, std::size_t block_size, int bits);

/// parameter_count * bits, rounded up to whole bytes.
std::uint64_t model_storage_bytes(const LayerSpec& spec, int bits);

inline constexpr double kDefaultReserve = 0.125;

/// Smallest power-of-two block size (used for every matrix) whose storage
/// fits in (1 - reserve) * capacity. Block sizes that do not partition the
/// matrices are skipped. Throws InfeasibleError when nothing up to 1024
/// fits, ConfigError on bad arguments.
std::size_t min_block_size_for_capacity(const LayerSpec& spec, int bits, std::uint64_t capacity_bytes,
                                        double reserve_fraction = kDefaultReserve);

/// min(floor(dsp / dsp_per_pe), floor(lut / lut_per_pe)). Throws
/// ConfigError when a per-PE cost is zero.
std::uint64_t pe_count(std::uint64_t dsp_total, std::uint64_t lut_total, std::uint64_t dsp_per_pe,
                       std::uint64_t lut_per_pe);

struct CostReport {
  LayerSpec spec;
  int bits = 12;
  std::uint64_t mults_per_step = 0;
  std::uint64_t dense_mults_per_step = 0;
  double normalized = 1.0;
  std::uint64_t pointwise_mults = 0;
  std::uint64_t parameters = 0;
  std::uint64_t storage_bytes = 0;
  std::uint64_t capacity_bytes = 0;  // 0 = not checked
  double reserve_fraction = kDefaultReserve;
  bool fits = true;
  /// Smallest fitting block size; empty when unchecked or infeasible.
  std::optional<std::size_t> min_block;
  std::optional<std::uint64_t> pes;

  /// Aligned columns for people.
  std::string to_text() const;
  /// key=value lines after a one-line schema header.
  std::string to_structured() const;
};

CostReport cost_report(const LayerSpec& spec, int bits, std::uint64_t capacity_bytes = 0,
                       double reserve_fraction = kDefaultReserve);

/// Task metric for a candidate spec; higher is better.
using AccuracyOracle = std::function<double(const LayerSpec&)>;

struct ExploreConfig {
  std::uint64_t capacity_bytes = 0;
  int bits = 12;
  double reserve_fraction = kDefaultReserve;
  std::size_t upper_bound = 64;  // 32 or 64
  double tolerance = 0.0;        // allowed drop below the baseline metric
};

struct ExploreStep {
  int step = 0;
  std::string action;
  LayerSpec spec;
  std::optional<double> metric;
  std::uint64_t storage_bytes = 0;
  bool accepted = false;
};

struct ExplorationResult {
  LayerSpec spec;
  double baseline = 0.0;
  std::optional<double> metric;  // of the returned spec, when evaluated
  std::size_t lower_bound = 1;
  std::size_t upper_bound = 64;
  std::size_t oracle_calls = 0;
  bool constraint_violated = false;  // no block size met the tolerance
  std::vector<ExploreStep> log;

  std::string to_text() const;
};

/// Phase-I exploration. Step one bounds the block size from below by the
/// storage budget; step two binary-searches the powers of two up to
/// cfg.upper_bound for the largest one within tolerance of the dense
/// baseline; step three tries GRU at that block size, then one doubled
/// block size for the input/output matrices. Accepted specs always fit.
ExplorationResult phase1_explore(const LayerSpec& base, const AccuracyOracle& oracle, const ExploreConfig& cfg);

}  // namespace ernn::cost
