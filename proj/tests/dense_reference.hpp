#pragma once

// Straight-line dense LSTM/GRU used as an oracle for the FFT-based cells.

#include <cmath>
#include <variant>
#include <vector>

#include "ernn/circulant.hpp"
#include "ernn/rnn_cells.hpp"

namespace ernn::testing {

inline std::vector<double> dense_mv(const BlockCirculantMatrix& m, const std::vector<double>& x) {
  const Eigen::MatrixXd d = expand_to_dense(m);
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r] += d(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
  return out;
}

inline double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct DenseState {
  std::vector<double> c, y;
};

inline std::vector<double> dense_lstm_step(const rnn::LstmParams& p, const std::vector<double>& x, DenseState& s) {
  const std::size_t h = p.cell_dim;
  std::vector<double> in = x;
  in.insert(in.end(), s.y.begin(), s.y.end());
  const auto z = dense_mv(p.gates, in);
  std::vector<double> c(h), m(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double i = sig(z[k] + p.peephole_i[k] * s.c[k] + p.bias_i[k]);
    const double f = sig(z[h + k] + p.peephole_f[k] * s.c[k] + p.bias_f[k]);
    const double gp = z[2 * h + k] + p.bias_g[k];
    const double g = p.cell_input == rnn::CellInputActivation::kSigmoid ? sig(gp) : std::tanh(gp);
    c[k] = f * s.c[k] + g * i;
    const double o = sig(z[3 * h + k] + p.peephole_o[k] * c[k] + p.bias_o[k]);
    m[k] = o * std::tanh(c[k]);
  }
  s.c = c;
  s.y = p.has_projection ? dense_mv(p.projection, m) : m;
  return s.y;
}

inline std::vector<double> dense_gru_step(const rnn::GruParams& p, const std::vector<double>& x, DenseState& s) {
  const std::size_t h = p.hidden_dim;
  std::vector<double> in = x;
  in.insert(in.end(), s.c.begin(), s.c.end());
  const auto u = dense_mv(p.gates, in);
  std::vector<double> r(h), z(h), rc(h);
  for (std::size_t k = 0; k < h; ++k) {
    r[k] = sig(u[k] + p.bias_r[k]);
    z[k] = sig(u[h + k] + p.bias_z[k]);
    rc[k] = r[k] * s.c[k];
  }
  const auto a = dense_mv(p.candidate_input, x);
  const auto b = dense_mv(p.candidate_state, rc);
  for (std::size_t k = 0; k < h; ++k) {
    const double cand = std::tanh(a[k] + b[k] + p.bias_candidate[k]);
    s.c[k] = (1.0 - z[k]) * s.c[k] + z[k] * cand;
  }
  return s.c;
}

inline rnn::Sequence dense_run(const rnn::ModelParams& model, const rnn::Sequence& xs) {
  std::vector<DenseState> states;
  for (const auto& layer : model.layers) {
    if (const auto* l = std::get_if<rnn::LstmParams>(&layer))
      states.push_back({std::vector<double>(l->cell_dim, 0.0), std::vector<double>(l->output_dim, 0.0)});
    else
      states.push_back({std::vector<double>(std::get<rnn::GruParams>(layer).hidden_dim, 0.0), {}});
  }
  rnn::Sequence out;
  for (const auto& x : xs) {
    std::vector<double> h = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      if (const auto* lp = std::get_if<rnn::LstmParams>(&model.layers[l]))
        h = dense_lstm_step(*lp, h, states[l]);
      else
        h = dense_gru_step(std::get<rnn::GruParams>(model.layers[l]), h, states[l]);
    }
    if (model.readout) {
      h = dense_mv(model.readout->weights, h);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += model.readout->bias[k];
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace ernn::testing
