#pragma once

// Cell equations shared by the floating-point and fixed-point pipelines.
// MatVec is called as mv(Role, std::span<const double>) -> std::vector<double>.

#include <cmath>
#include <span>
#include <vector>

#include "ernn/rnn_cells.hpp"

namespace ernn::rnn::detail {

inline double exact_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct ExactActivations {
  double sigmoid(double v) const { return exact_sigmoid(v); }
  double tanh(double v) const { return std::tanh(v); }
};

inline std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <class MatVec, class Act>
StepOutput lstm_math(const LstmParams& p, std::span<const double> x, const CellState& s, MatVec&& mv,
                     const Act& act, StepCounters* counters) {
  const std::size_t h = p.cell_dim;
  const auto z = mv(Role::kLstmGates, concat(x, s.y));

  StepOutput out;
  out.state.c.resize(h);
  out.state.t = s.t + 1;
  std::vector<double> m(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double c_prev = s.c[k];
    const double i = act.sigmoid(z[k] + p.peephole_i[k] * c_prev + p.bias_i[k]);
    const double f = act.sigmoid(z[h + k] + p.peephole_f[k] * c_prev + p.bias_f[k]);
    const double g_pre = z[2 * h + k] + p.bias_g[k];
    const double g = p.cell_input == CellInputActivation::kSigmoid ? act.sigmoid(g_pre) : act.tanh(g_pre);
    const double c = f * c_prev + g * i;
    const double o = act.sigmoid(z[3 * h + k] + p.peephole_o[k] * c + p.bias_o[k]);
    out.state.c[k] = c;
    m[k] = o * act.tanh(c);
  }
  if (counters) counters->pointwise_mults += 3 * h;  // peephole products

  out.output = p.has_projection ? mv(Role::kLstmProjection, m) : std::move(m);
  out.state.y = out.output;
  return out;
}

template <class MatVec, class Act>
StepOutput gru_math(const GruParams& p, std::span<const double> x, const CellState& s, MatVec&& mv,
                    const Act& act, StepCounters* counters) {
  const std::size_t h = p.hidden_dim;
  const auto u = mv(Role::kGruGates, concat(x, s.c));
  std::vector<double> r(h), z(h), reset_state(h);
  for (std::size_t k = 0; k < h; ++k) {
    r[k] = act.sigmoid(u[k] + p.bias_r[k]);
    z[k] = act.sigmoid(u[h + k] + p.bias_z[k]);
    reset_state[k] = r[k] * s.c[k];
  }
  if (counters) counters->pointwise_mults += h;
  const auto from_input = mv(Role::kGruCandidateInput, x);
  const auto from_state = mv(Role::kGruCandidateState, reset_state);

  StepOutput out;
  out.state.c.resize(h);
  out.state.t = s.t + 1;
  for (std::size_t k = 0; k < h; ++k) {
    const double cand = act.tanh(from_input[k] + from_state[k] + p.bias_candidate[k]);
    out.state.c[k] = (1.0 - z[k]) * s.c[k] + z[k] * cand;
  }
  out.output = out.state.c;
  return out;
}

}  // namespace ernn::rnn::detail
