#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ernn/dense_rnn.hpp"
#include "ernn/synthetic_task.hpp"

namespace ernn {

struct TrainConfig {
  double learning_rate = 0.1;
  double lr_decay = 0.98;  // multiplier applied after every ADMM iteration
  double momentum = 0.9;
  std::size_t epochs_per_iteration = 8;
  std::size_t batch_size = 16;
  std::size_t max_iterations = 50;
  double tolerance = 1e-3;
  double rho = 1e-3;
  double rho_growth = 1.35;  // per iteration, capped at rho_max
  double rho_max = 1e4;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 = off
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

/// W lives in `w`. Z and U are indexed like w.tensors and are empty for
/// tensors that carry no structure constraint (vectors and the read-out).
struct AdmmState {
  DenseModel w;
  std::vector<Eigen::MatrixXd> z;
  std::vector<Eigen::MatrixXd> u;
  std::vector<double> rho;
  std::vector<Eigen::MatrixXd> velocity;
  std::size_t k = 0;

  /// Z0 = projection of W, U0 = 0, uniform penalty.
  static AdmmState start(DenseModel w, double rho);

  /// ||W - Z||_F / ||W||_F for every structured tensor, in tensor order.
  std::vector<double> residuals() const;
};

/// f(W) + sum (rho/2) ||W - Z + U||_F^2 over the whole dataset. When `grad`
/// is given it receives the full gradient.
double admm_objective(const AdmmState& state, const Dataset& data,
                      std::vector<Eigen::MatrixXd>* grad = nullptr);

/// Runs cfg.epochs_per_iteration epochs of minibatch SGD with momentum on
/// the penalized objective. The penalty is applied as an exact proximal
/// step, so the update stays stable for any rho * learning_rate.
/// Throws DivergenceError when the loss becomes non-finite.
void solve_subproblem1(AdmmState& state, const Dataset& data, const TrainConfig& cfg, double learning_rate,
                       std::mt19937_64& rng);

/// Z = projection of W + U onto each tensor's block size.
void solve_subproblem2(AdmmState& state);

/// U += W - Z.
void dual_update(AdmmState& state);

struct TraceRecord {
  std::size_t k = 0;
  double objective = 0.0;
  double task_loss = 0.0;       // f at W
  double structured_loss = 0.0;  // f at the structured model
  double rho = 0.0;
  std::vector<double> residuals;
};

struct TrainResult {
  rnn::ModelParams model;     // exactly block-circulant
  DenseModel structured;      // same weights, dense form
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<TraceRecord> trace;
  std::vector<std::string> residual_names;
};

/// Called after the dual update of every iteration.
using IterationHook = std::function<void(const AdmmState&, const TraceRecord&)>;

/// Alternates the two subproblems and the dual update until every residual
/// is below cfg.tolerance or cfg.max_iterations is reached. Without
/// convergence the structured model with the lowest training loss seen is
/// returned and `converged` is false.
TrainResult admm_train(DenseModel init, const Dataset& data, const TrainConfig& cfg,
                       const IterationHook& on_iteration = {});

/// Plain SGD for max_iterations * epochs_per_iteration epochs, then a single
/// projection onto the block structure.
TrainResult train_then_project(DenseModel init, const Dataset& data, const TrainConfig& cfg);

/// Line-oriented trace: one schema header, then one record per iteration.
void write_trace(std::ostream& os, const TrainResult& result);

}  // namespace ernn
