#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ernn/circulant.hpp"

namespace ernn::rnn {

enum class CellType : std::uint8_t { kLstm = 1, kGru = 2 };

/// Activation for the LSTM cell-input term g_t. The default is the logistic
/// sigmoid; kTanh gives the common textbook cell.
enum class CellInputActivation : std::uint8_t { kSigmoid = 0, kTanh = 1 };

/// Identifies a tensor inside a model. Values are stable: they are written
/// into model files.
enum class Role : std::uint8_t {
  kLstmGates = 1,        // W_(ifco)(xr), rows ordered i, f, g, o
  kLstmProjection = 2,   // W_ym
  kGruGates = 3,         // W_(rz)(xc), rows ordered r, z
  kGruCandidateInput = 4,
  kGruCandidateState = 5,
  kReadout = 6,
  kPeepholeI = 16,
  kPeepholeF = 17,
  kPeepholeO = 18,
  kBiasI = 19,
  kBiasF = 20,
  kBiasG = 21,
  kBiasO = 22,
  kBiasR = 23,
  kBiasZ = 24,
  kBiasCandidate = 25,
  kReadoutBias = 26,
};

const char* role_name(Role r) noexcept;
bool is_matrix_role(Role r) noexcept;

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t cell_dim = 0;
  /// Width of y_t. Equals cell_dim when there is no projection.
  std::size_t output_dim = 0;
  bool has_projection = false;
  CellInputActivation cell_input = CellInputActivation::kSigmoid;

  BlockCirculantMatrix gates;       // (4 * cell) x (input + output)
  BlockCirculantMatrix projection;  // output x cell; unused without projection
  std::vector<double> peephole_i, peephole_f, peephole_o;
  std::vector<double> bias_i, bias_f, bias_g, bias_o;

  /// All-zero parameters. projection_dim == 0 means no projection.
  /// Throws PartitionError naming the smallest input padding when
  /// input + output is not a multiple of the gate block size.
  static LstmParams zeros(std::size_t input_dim, std::size_t cell_dim, std::size_t projection_dim,
                          std::size_t gate_block, std::size_t projection_block);

  void validate() const;
};

struct GruParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  BlockCirculantMatrix gates;            // (2 * hidden) x (input + hidden), rows r then z
  BlockCirculantMatrix candidate_input;  // hidden x input
  BlockCirculantMatrix candidate_state;  // hidden x hidden
  std::vector<double> bias_r, bias_z, bias_candidate;

  static GruParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t block,
                         std::size_t input_block);

  void validate() const;
};

using LayerParams = std::variant<LstmParams, GruParams>;

/// Dense (or block-circulant) linear read-out applied to the last layer.
struct Readout {
  BlockCirculantMatrix weights;
  std::vector<double> bias;
};

struct ModelParams {
  CellType cell = CellType::kLstm;
  std::vector<LayerParams> layers;
  std::optional<Readout> readout;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;
};

struct CellState {
  std::vector<double> c;
  std::vector<double> y;  // y_{t-1} for LSTM; unused for GRU (c is the output)
  std::size_t t = 0;
};

/// Structural operation counts for one or more steps.
struct StepCounters {
  TransformCounters transforms;
  std::uint64_t matvecs = 0;
  std::uint64_t pointwise_mults = 0;
};

/// LSTM parameters with precomputed weight spectra.
class LstmCell {
 public:
  explicit LstmCell(LstmParams params);

  const LstmParams& params() const noexcept { return params_; }
  const SpectralWeights& gate_spectra() const noexcept { return gates_; }
  const SpectralWeights& projection_spectra() const noexcept { return projection_; }
  CellState initial_state() const;

 private:
  LstmParams params_;
  SpectralWeights gates_;
  SpectralWeights projection_;
};

class GruCell {
 public:
  explicit GruCell(GruParams params);

  const GruParams& params() const noexcept { return params_; }
  const SpectralWeights& gate_spectra() const noexcept { return gates_; }
  const SpectralWeights& candidate_input_spectra() const noexcept { return candidate_input_; }
  const SpectralWeights& candidate_state_spectra() const noexcept { return candidate_state_; }
  CellState initial_state() const;

 private:
  GruParams params_;
  SpectralWeights gates_;
  SpectralWeights candidate_input_;
  SpectralWeights candidate_state_;
};

struct StepOutput {
  std::vector<double> output;
  CellState state;
};

StepOutput lstm_step(const LstmCell& cell, std::span<const double> x, const CellState& state,
                     StepCounters* counters = nullptr);

StepOutput gru_step(const GruCell& cell, std::span<const double> x, const CellState& state,
                    StepCounters* counters = nullptr);

using Sequence = std::vector<std::vector<double>>;

/// A stack of cells plus an optional read-out, ready for inference.
class Network {
 public:
  explicit Network(ModelParams params);

  const ModelParams& params() const noexcept { return params_; }

  /// Runs from the zero state. Output t depends only on inputs 0..t.
  Sequence run_sequence(const Sequence& xs, StepCounters* counters = nullptr) const;

 private:
  ModelParams params_;
  std::vector<std::variant<LstmCell, GruCell>> cells_;
  std::optional<SpectralWeights> readout_;
};

}  // namespace ernn::rnn
