#include "ernn/rnn_cells.hpp"

#include <cmath>
#include <string>

#include "cell_math.hpp"
#include "ernn/errors.hpp"

namespace ernn::rnn {

const char* role_name(Role r) noexcept {
  switch (r) {
    case Role::kLstmGates: return "lstm_gates";
    case Role::kLstmProjection: return "lstm_projection";
    case Role::kGruGates: return "gru_gates";
    case Role::kGruCandidateInput: return "gru_candidate_input";
    case Role::kGruCandidateState: return "gru_candidate_state";
    case Role::kReadout: return "readout";
    case Role::kPeepholeI: return "peephole_i";
    case Role::kPeepholeF: return "peephole_f";
    case Role::kPeepholeO: return "peephole_o";
    case Role::kBiasI: return "bias_i";
    case Role::kBiasF: return "bias_f";
    case Role::kBiasG: return "bias_g";
    case Role::kBiasO: return "bias_o";
    case Role::kBiasR: return "bias_r";
    case Role::kBiasZ: return "bias_z";
    case Role::kBiasCandidate: return "bias_candidate";
    case Role::kReadoutBias: return "readout_bias";
  }
  return "unknown";
}

bool is_matrix_role(Role r) noexcept { return static_cast<unsigned>(r) < 16; }

namespace {

void require_size(const std::vector<double>& v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(n));
  }
}

void require_shape(const BlockCirculantMatrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(what) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

// Smallest pad >= 0 with (width + pad) % block == 0.
std::size_t padding_for(std::size_t width, std::size_t block) { return (block - width % block) % block; }

}  // namespace

LstmParams LstmParams::zeros(std::size_t input_dim, std::size_t cell_dim, std::size_t projection_dim,
                             std::size_t gate_block, std::size_t projection_block) {
  LstmParams p;
  p.input_dim = input_dim;
  p.cell_dim = cell_dim;
  p.has_projection = projection_dim != 0;
  p.output_dim = p.has_projection ? projection_dim : cell_dim;
  const std::size_t fused_cols = input_dim + p.output_dim;
  if (gate_block == 0 || fused_cols % gate_block != 0) {
    throw PartitionError("LSTM input " + std::to_string(input_dim) + " + recurrent " + std::to_string(p.output_dim) +
                         " is not a multiple of block size " + std::to_string(gate_block) + "; pad the input by " +
                         std::to_string(gate_block ? padding_for(fused_cols, gate_block) : 0));
  }
  p.gates = BlockCirculantMatrix(4 * cell_dim, fused_cols, gate_block);
  if (p.has_projection) p.projection = BlockCirculantMatrix(projection_dim, cell_dim, projection_block);
  for (auto* v : {&p.peephole_i, &p.peephole_f, &p.peephole_o, &p.bias_i, &p.bias_f, &p.bias_g, &p.bias_o})
    v->assign(cell_dim, 0.0);
  return p;
}

void LstmParams::validate() const {
  if (cell_dim == 0 || input_dim == 0) throw DimensionError("LSTM dimensions must be positive");
  if (!has_projection && output_dim != cell_dim) throw DimensionError("LSTM without projection must output cell_dim");
  require_shape(gates, 4 * cell_dim, input_dim + output_dim, "LSTM gate matrix");
  if (has_projection) require_shape(projection, output_dim, cell_dim, "LSTM projection");
  require_size(peephole_i, cell_dim, "peephole_i");
  require_size(peephole_f, cell_dim, "peephole_f");
  require_size(peephole_o, cell_dim, "peephole_o");
  require_size(bias_i, cell_dim, "bias_i");
  require_size(bias_f, cell_dim, "bias_f");
  require_size(bias_g, cell_dim, "bias_g");
  require_size(bias_o, cell_dim, "bias_o");
}

GruParams GruParams::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t block, std::size_t input_block) {
  GruParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const std::size_t fused_cols = input_dim + hidden_dim;
  if (block == 0 || fused_cols % block != 0) {
    throw PartitionError("GRU input " + std::to_string(input_dim) + " + hidden " + std::to_string(hidden_dim) +
                         " is not a multiple of block size " + std::to_string(block) + "; pad the input by " +
                         std::to_string(block ? padding_for(fused_cols, block) : 0));
  }
  p.gates = BlockCirculantMatrix(2 * hidden_dim, fused_cols, block);
  p.candidate_input = BlockCirculantMatrix(hidden_dim, input_dim, input_block);
  p.candidate_state = BlockCirculantMatrix(hidden_dim, hidden_dim, block);
  for (auto* v : {&p.bias_r, &p.bias_z, &p.bias_candidate}) v->assign(hidden_dim, 0.0);
  return p;
}

void GruParams::validate() const {
  if (hidden_dim == 0 || input_dim == 0) throw DimensionError("GRU dimensions must be positive");
  require_shape(gates, 2 * hidden_dim, input_dim + hidden_dim, "GRU gate matrix");
  require_shape(candidate_input, hidden_dim, input_dim, "GRU candidate input matrix");
  require_shape(candidate_state, hidden_dim, hidden_dim, "GRU candidate state matrix");
  require_size(bias_r, hidden_dim, "bias_r");
  require_size(bias_z, hidden_dim, "bias_z");
  require_size(bias_candidate, hidden_dim, "bias_candidate");
}

std::size_t ModelParams::input_dim() const {
  if (layers.empty()) return 0;
  return std::visit([](const auto& p) { return p.input_dim; }, layers.front());
}

std::size_t ModelParams::output_dim() const {
  if (readout) return readout->weights.rows();
  if (layers.empty()) return 0;
  return std::visit(
      [](const auto& p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, LstmParams>)
          return p.output_dim;
        else
          return p.hidden_dim;
      },
      layers.back());
}

void ModelParams::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  std::size_t width = input_dim();
  for (const auto& layer : layers) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if ((std::is_same_v<T, LstmParams>) != (cell == CellType::kLstm))
            throw DimensionError("layer cell type differs from model cell type");
          p.validate();
          if (p.input_dim != width) throw DimensionError("layer input width does not match previous layer output");
          if constexpr (std::is_same_v<T, LstmParams>)
            width = p.output_dim;
          else
            width = p.hidden_dim;
        },
        layer);
  }
  if (readout) {
    require_shape(readout->weights, readout->weights.rows(), width, "readout");
    require_size(readout->bias, readout->weights.rows(), "readout bias");
  }
}

LstmCell::LstmCell(LstmParams params) : params_(std::move(params)) {
  params_.validate();
  gates_ = SpectralWeights(params_.gates);
  if (params_.has_projection) projection_ = SpectralWeights(params_.projection);
}

CellState LstmCell::initial_state() const {
  return CellState{std::vector<double>(params_.cell_dim, 0.0), std::vector<double>(params_.output_dim, 0.0), 0};
}

GruCell::GruCell(GruParams params) : params_(std::move(params)) {
  params_.validate();
  gates_ = SpectralWeights(params_.gates);
  candidate_input_ = SpectralWeights(params_.candidate_input);
  candidate_state_ = SpectralWeights(params_.candidate_state);
}

CellState GruCell::initial_state() const {
  return CellState{std::vector<double>(params_.hidden_dim, 0.0), {}, 0};
}

namespace {

void check_state(const CellState& s, std::size_t c_len, std::size_t y_len) {
  if (s.c.size() != c_len || s.y.size() != y_len) throw DimensionError("cell state does not match parameters");
}

template <class Lookup>
auto counting_matvec(Lookup&& lookup, StepCounters* counters) {
  return [lookup = std::forward<Lookup>(lookup), counters](Role role, std::span<const double> v) {
    if (counters) counters->matvecs += 1;
    return matvec_decoupled(lookup(role), v, counters ? &counters->transforms : nullptr);
  };
}

}  // namespace

StepOutput lstm_step(const LstmCell& cell, std::span<const double> x, const CellState& state, StepCounters* counters) {
  const auto& p = cell.params();
  if (x.size() != p.input_dim) {
    throw DimensionError("LSTM input length " + std::to_string(x.size()) + " != " + std::to_string(p.input_dim));
  }
  check_state(state, p.cell_dim, p.output_dim);
  auto mv = counting_matvec(
      [&cell](Role r) -> const SpectralWeights& {
        return r == Role::kLstmGates ? cell.gate_spectra() : cell.projection_spectra();
      },
      counters);
  auto out = detail::lstm_math(p, x, state, mv, detail::ExactActivations{}, counters);
  require_finite(out.output, "LSTM output");
  require_finite(out.state.c, "LSTM cell state");
  return out;
}

StepOutput gru_step(const GruCell& cell, std::span<const double> x, const CellState& state, StepCounters* counters) {
  const auto& p = cell.params();
  if (x.size() != p.input_dim) {
    throw DimensionError("GRU input length " + std::to_string(x.size()) + " != " + std::to_string(p.input_dim));
  }
  check_state(state, p.hidden_dim, 0);
  auto mv = counting_matvec(
      [&cell](Role r) -> const SpectralWeights& {
        switch (r) {
          case Role::kGruGates: return cell.gate_spectra();
          case Role::kGruCandidateInput: return cell.candidate_input_spectra();
          default: return cell.candidate_state_spectra();
        }
      },
      counters);
  auto out = detail::gru_math(p, x, state, mv, detail::ExactActivations{}, counters);
  require_finite(out.output, "GRU output");
  return out;
}

Network::Network(ModelParams params) : params_(std::move(params)) {
  params_.validate();
  for (const auto& layer : params_.layers) {
    if (const auto* lstm = std::get_if<LstmParams>(&layer))
      cells_.emplace_back(LstmCell(*lstm));
    else
      cells_.emplace_back(GruCell(std::get<GruParams>(layer)));
  }
  if (params_.readout) readout_ = SpectralWeights(params_.readout->weights);
}

Sequence Network::run_sequence(const Sequence& xs, StepCounters* counters) const {
  if (xs.empty()) throw DimensionError("run_sequence needs at least one input vector");
  std::vector<CellState> states;
  states.reserve(cells_.size());
  for (const auto& cell : cells_) std::visit([&](const auto& c) { states.push_back(c.initial_state()); }, cell);

  Sequence outputs;
  outputs.reserve(xs.size());
  for (const auto& x : xs) {
    std::vector<double> h = x;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      StepOutput step = std::visit(
          [&](const auto& c) {
            if constexpr (std::is_same_v<std::decay_t<decltype(c)>, LstmCell>)
              return lstm_step(c, h, states[l], counters);
            else
              return gru_step(c, h, states[l], counters);
          },
          cells_[l]);
      h = std::move(step.output);
      states[l] = std::move(step.state);
    }
    if (readout_) {
      if (counters) counters->matvecs += 1;
      h = matvec_decoupled(*readout_, h, counters ? &counters->transforms : nullptr);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += params_.readout->bias[k];
    }
    outputs.push_back(std::move(h));
  }
  return outputs;
}

}  // namespace ernn::rnn
