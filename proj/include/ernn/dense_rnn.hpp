#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ernn/layer_spec.hpp"
#include "ernn/rnn_cells.hpp"
#include "ernn/synthetic_task.hpp"

namespace ernn {

/// Where a dense tensor sits in the model and which block size it is
/// trained toward. block == 0 marks an unconstrained tensor.
struct TensorInfo {
  std::size_t layer = 0;
  rnn::Role role = rnn::Role::kLstmGates;
  std::size_t block = 0;

  bool structured() const noexcept { return block != 0; }
};

/// Unstructured weights for training. Vectors are stored as n x 1 matrices.
///
/// Tensor order per layer:
///   LSTM: gates, peep_i, peep_f, peep_o, b_i, b_f, b_g, b_o, [projection]
///   GRU:  gates, cand_input, cand_state, b_r, b_z, b_c
/// followed by readout and readout bias when present.
struct DenseModel {
  LayerSpec spec;
  std::size_t readout_dim = 0;
  rnn::CellInputActivation cell_input = rnn::CellInputActivation::kSigmoid;
  std::vector<TensorInfo> info;
  std::vector<Eigen::MatrixXd> tensors;

  static DenseModel zeros(const LayerSpec& spec, std::size_t readout_dim,
                          rnn::CellInputActivation cell_input = rnn::CellInputActivation::kSigmoid);

  /// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), peepholes small, forget bias 1.
  void initialize(std::uint64_t seed);

  std::size_t index_of(std::size_t layer, rnn::Role role) const;
  std::size_t parameter_count() const;

  /// Same shapes, all zero.
  std::vector<Eigen::MatrixXd> zeros_like() const;
};

/// Dense expansion of a block-circulant model. The result has the spec's
/// block sizes recorded as training targets.
DenseModel to_dense(const rnn::ModelParams& model, const LayerSpec& spec);

/// Projects every structured tensor onto its block size and copies the rest.
rnn::ModelParams project_model(const DenseModel& model);

/// Per-step logits, or the top layer outputs when there is no read-out.
rnn::Sequence dense_forward(const DenseModel& model, const rnn::Sequence& xs);

/// Mean cross-entropy over the scored steps of `batch` and its gradient
/// with respect to every tensor (by backpropagation through time).
/// `grad` is resized and overwritten.
double loss_and_gradient(const DenseModel& model, std::span<const Example> batch,
                         std::vector<Eigen::MatrixXd>& grad);

TaskMetrics evaluate_dense(const DenseModel& model, const Dataset& data);

}  // namespace ernn
