#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ernn/rnn_cells.hpp"

namespace ernn::quant {

/// Signed fixed point. A code k represents k * 2^-frac_bits * scale, with
/// k in [-2^(total_bits-1), 2^(total_bits-1) - 1]. `scale` is a power of two
/// and carries the range that frac_bits alone cannot.
struct FixedPointFormat {
  int total_bits = 12;
  int frac_bits = 11;
  double scale = 1.0;

  double ulp() const noexcept;
  std::int64_t min_code() const noexcept { return -(std::int64_t{1} << (total_bits - 1)); }
  std::int64_t max_code() const noexcept { return (std::int64_t{1} << (total_bits - 1)) - 1; }
  double min_value() const noexcept { return static_cast<double>(min_code()) * ulp(); }
  double max_value() const noexcept { return static_cast<double>(max_code()) * ulp(); }

  /// Throws ConfigError.
  void validate() const;

  bool operator==(const FixedPointFormat&) const = default;
};

struct SaturationCounter {
  std::uint64_t values = 0;
  std::uint64_t saturated = 0;

  double rate() const noexcept { return values ? static_cast<double>(saturated) / static_cast<double>(values) : 0.0; }
};

struct QuantizedTensor {
  FixedPointFormat format;
  std::vector<std::int32_t> codes;
  std::vector<std::size_t> shape;
};

/// Largest precision whose range holds every value after rounding.
/// All-zero input gives frac_bits = total_bits - 1, scale 1.
/// Throws NumericError on non-finite values, DimensionError when empty.
FixedPointFormat analyze_range(std::span<const double> values, int total_bits = 12);

/// Round to nearest even, saturating.
std::int32_t quantize_value(double v, const FixedPointFormat& fmt, SaturationCounter* sat = nullptr);
double dequantize_value(std::int32_t code, const FixedPointFormat& fmt) noexcept;

QuantizedTensor quantize(std::span<const double> values, const FixedPointFormat& fmt,
                         SaturationCounter* sat = nullptr);
std::vector<double> dequantize(const QuantizedTensor& q);

/// Value after a quantize/dequantize round trip.
double round_trip(double v, const FixedPointFormat& fmt, SaturationCounter* sat = nullptr);

/// Monotone piecewise-linear approximation with a breakpoint at 0 and
/// exact saturation outside [-domain, domain].
class PiecewiseLinear {
 public:
  enum class Kind { kSigmoid, kTanh };

  /// Throws ConfigError when segments < 2.
  PiecewiseLinear(Kind kind, int segments);

  double operator()(double x) const noexcept;
  Kind kind() const noexcept { return kind_; }
  int segments() const noexcept { return static_cast<int>(nodes_x_.size()) - 1; }
  double domain() const noexcept { return nodes_x_.back(); }

 private:
  Kind kind_;
  std::vector<double> nodes_x_;
  std::vector<double> nodes_y_;
};

inline constexpr int kDefaultSegments = 64;

double pwl_sigmoid(double x, int segments = kDefaultSegments);
double pwl_tanh(double x, int segments = kDefaultSegments);

struct QuantConfig {
  int weight_bits = 12;
  int data_bits = 12;
  /// PWL segments per activation; 0 uses exact activations, which isolates
  /// the fixed-point error.
  int pwl_segments = kDefaultSegments;

  void validate() const;

  bool operator==(const QuantConfig&) const = default;
};

/// Formats for one matrix: its weight spectra, the time-domain input, the
/// input spectra and the time-domain output.
struct MatrixQuant {
  std::size_t layer = 0;
  rnn::Role role = rnn::Role::kLstmGates;
  FixedPointFormat weights, input, input_spectrum, output;

  bool operator==(const MatrixQuant&) const = default;
};

struct VectorQuant {
  std::size_t layer = 0;
  rnn::Role role = rnn::Role::kBiasI;
  FixedPointFormat format;

  bool operator==(const VectorQuant&) const = default;
};

/// Formats of the recurrent state, re-quantized after every step.
struct StateQuant {
  std::size_t layer = 0;
  FixedPointFormat c, y;

  bool operator==(const StateQuant&) const = default;
};

/// Static per-layer scaling chosen from weights and a calibration run.
struct QuantPlan {
  QuantConfig config;
  std::vector<MatrixQuant> matrices;
  std::vector<VectorQuant> vectors;
  std::vector<StateQuant> states;

  bool operator==(const QuantPlan&) const = default;
};

/// Analyses weight and spectrum ranges and runs the double-precision
/// network over `calibration` to fix the activation formats.
QuantPlan calibrate(const rnn::ModelParams& model, const std::vector<rnn::Sequence>& calibration,
                    const QuantConfig& config);

/// Fixed-point inference: quantized inputs, weight spectra and input spectra,
/// integer complex multiply-accumulate, re-quantized outputs and state,
/// PWL activations.
class QuantizedNetwork {
 public:
  QuantizedNetwork(rnn::ModelParams model, QuantPlan plan);

  const QuantPlan& plan() const noexcept { return plan_; }
  const rnn::ModelParams& model() const noexcept { return model_; }

  /// Quantized weight spectra of one matrix: per block (row-major over the
  /// grid) the half spectrum as interleaved real/imaginary codes.
  const QuantizedTensor& weight_codes(std::size_t matrix_index) const { return weights_.at(matrix_index); }

  rnn::Sequence run_sequence(const rnn::Sequence& xs, SaturationCounter* sat = nullptr) const;

 private:
  rnn::ModelParams model_;
  QuantPlan plan_;
  std::vector<QuantizedTensor> weights_;
  std::vector<rnn::LayerParams> quantized_layers_;  // vectors rounded to their formats
  std::vector<double> readout_bias_;
};

struct DeviationReport {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  std::uint64_t compared = 0;
  SaturationCounter saturation;
  bool saturation_warning = false;  // more than 1% of values saturated

  std::string to_text() const;
};

struct QuantizedInference {
  std::vector<rnn::Sequence> outputs;
  std::vector<rnn::Sequence> reference;
  DeviationReport report;
};

/// Calibrates on `calibration` (or on `inputs` when empty), runs both
/// pipelines on `inputs` and compares them.
QuantizedInference quantized_inference(const rnn::ModelParams& model, const std::vector<rnn::Sequence>& inputs,
                                       const QuantConfig& config,
                                       const std::vector<rnn::Sequence>& calibration = {});

}  // namespace ernn::quant
