#include "ernn/admm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "ernn/errors.hpp"

namespace ernn {

using Eigen::MatrixXd;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("learning rate and decay must be positive, momentum in [0, 1)");
  if (epochs_per_iteration == 0 || batch_size == 0 || max_iterations == 0)
    throw ConfigError("epochs, batch size and iteration count must be positive");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
  if (rho < 0.0 || !(rho_growth >= 1.0) || rho_max < rho) throw ConfigError("bad rho schedule");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
}

namespace {

MatrixXd project_dense(const MatrixXd& m, std::size_t block) {
  return expand_to_dense(project_to_block_circulant(m, block));
}

DenseModel structured_copy(const AdmmState& s) {
  DenseModel d = s.w;
  for (std::size_t i = 0; i < d.tensors.size(); ++i)
    if (d.info[i].structured()) d.tensors[i] = s.z[i];
  return d;
}

double penalty(const AdmmState& s, std::vector<MatrixXd>* grad) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.w.tensors.size(); ++i) {
    if (!s.w.info[i].structured()) continue;
    const MatrixXd diff = s.w.tensors[i] - s.z[i] + s.u[i];
    total += 0.5 * s.rho[i] * diff.squaredNorm();
    if (grad) (*grad)[i] += s.rho[i] * diff;
  }
  return total;
}

std::string tensor_name(const TensorInfo& t) {
  return std::to_string(t.layer) + "." + rnn::role_name(t.role);
}

}  // namespace

AdmmState AdmmState::start(DenseModel w, double rho) {
  AdmmState s;
  s.z.resize(w.tensors.size());
  s.u.resize(w.tensors.size());
  s.rho.assign(w.tensors.size(), 0.0);
  for (std::size_t i = 0; i < w.tensors.size(); ++i) {
    if (!w.info[i].structured()) continue;
    s.z[i] = project_dense(w.tensors[i], w.info[i].block);
    s.u[i] = MatrixXd::Zero(w.tensors[i].rows(), w.tensors[i].cols());
    s.rho[i] = rho;
  }
  s.velocity = w.zeros_like();
  s.w = std::move(w);
  return s;
}

std::vector<double> AdmmState::residuals() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < w.tensors.size(); ++i) {
    if (!w.info[i].structured()) continue;
    const double norm = w.tensors[i].norm();
    const double diff = (w.tensors[i] - z[i]).norm();
    out.push_back(norm > 0.0 ? diff / norm : diff);
  }
  return out;
}

double admm_objective(const AdmmState& state, const Dataset& data, std::vector<MatrixXd>* grad) {
  std::vector<MatrixXd> g;
  const double f = loss_and_gradient(state.w, data, g);
  const double p = penalty(state, &g);
  if (grad) *grad = std::move(g);
  return f + p;
}

void solve_subproblem1(AdmmState& state, const Dataset& data, const TrainConfig& cfg, double learning_rate,
                       std::mt19937_64& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto& w = state.w;
  std::vector<MatrixXd> grad;
  Dataset batch;
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_iteration; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < std::max<std::size_t>(order.size(), 1); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) batch.push_back(data[order[k]]);
      const double loss = loss_and_gradient(w, batch, grad);
      const double objective = loss + penalty(state, nullptr);
      if (!std::isfinite(objective))
        throw DivergenceError("training objective is not finite", last_finite);
      last_finite = objective;
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grad) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm)
          for (auto& g : grad) g *= cfg.clip_norm / norm;
      }
      for (std::size_t i = 0; i < w.tensors.size(); ++i) {
        auto& v = state.velocity[i];
        v = cfg.momentum * v + grad[i];
        if (w.info[i].structured()) {
          const double lr_rho = learning_rate * state.rho[i];
          w.tensors[i] = (w.tensors[i] - learning_rate * v + lr_rho * (state.z[i] - state.u[i])) / (1.0 + lr_rho);
        } else {
          w.tensors[i] -= learning_rate * v;
        }
      }
    }
  }
}

void solve_subproblem2(AdmmState& state) {
  for (std::size_t i = 0; i < state.w.tensors.size(); ++i)
    if (state.w.info[i].structured())
      state.z[i] = project_dense(state.w.tensors[i] + state.u[i], state.w.info[i].block);
}

void dual_update(AdmmState& state) {
  for (std::size_t i = 0; i < state.w.tensors.size(); ++i)
    if (state.w.info[i].structured()) state.u[i] += state.w.tensors[i] - state.z[i];
}

TrainResult admm_train(DenseModel init, const Dataset& data, const TrainConfig& cfg,
                       const IterationHook& on_iteration) {
  cfg.validate();
  TrainResult result;
  for (const auto& t : init.info)
    if (t.structured()) result.residual_names.push_back(tensor_name(t));
  auto state = AdmmState::start(std::move(init), cfg.rho);
  std::mt19937_64 rng(cfg.seed);
  double lr = cfg.learning_rate;
  double best_loss = std::numeric_limits<double>::infinity();
  DenseModel best = structured_copy(state);

  for (std::size_t k = 1; k <= cfg.max_iterations; ++k) {
    solve_subproblem1(state, data, cfg, lr, rng);
    solve_subproblem2(state);
    dual_update(state);
    state.k = k;

    TraceRecord rec;
    rec.k = k;
    rec.rho = state.rho.empty() ? 0.0 : *std::max_element(state.rho.begin(), state.rho.end());
    rec.objective = admm_objective(state, data);
    rec.task_loss = evaluate_dense(state.w, data).loss;
    auto structured = structured_copy(state);
    rec.structured_loss = evaluate_dense(structured, data).loss;
    rec.residuals = state.residuals();
    if (rec.structured_loss < best_loss) {
      best_loss = rec.structured_loss;
      best = structured;
    }
    const bool done = std::all_of(rec.residuals.begin(), rec.residuals.end(),
                                  [&](double r) { return r < cfg.tolerance; });
    if (on_iteration) on_iteration(state, rec);
    result.trace.push_back(std::move(rec));
    result.iterations = k;
    if (done) {
      result.converged = true;
      best = std::move(structured);
      break;
    }
    // U is the dual scaled by 1/rho; keep the unscaled dual fixed as rho grows.
    for (std::size_t i = 0; i < state.rho.size(); ++i) {
      if (!state.w.info[i].structured()) continue;
      const double next = std::min(state.rho[i] * cfg.rho_growth, cfg.rho_max);
      if (next > 0.0) state.u[i] *= state.rho[i] / next;
      state.rho[i] = next;
    }
    lr *= cfg.lr_decay;
  }
  result.model = project_model(best);
  result.structured = std::move(best);
  return result;
}

TrainResult train_then_project(DenseModel init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  // rho = 0 turns subproblem 1 into plain SGD. Same epoch blocks and
  // learning-rate schedule as admm_train.
  auto state = AdmmState::start(std::move(init), 0.0);
  std::mt19937_64 rng(cfg.seed);
  double lr = cfg.learning_rate;
  for (std::size_t k = 1; k <= cfg.max_iterations; ++k) {
    solve_subproblem1(state, data, cfg, lr, rng);
    lr *= cfg.lr_decay;
  }
  TrainResult result;
  for (std::size_t i = 0; i < state.w.tensors.size(); ++i)
    if (state.w.info[i].structured()) {
      result.residual_names.push_back(tensor_name(state.w.info[i]));
      state.z[i] = project_dense(state.w.tensors[i], state.w.info[i].block);
    }
  TraceRecord rec;
  rec.k = cfg.max_iterations;
  rec.task_loss = evaluate_dense(state.w, data).loss;
  rec.objective = rec.task_loss;
  result.structured = structured_copy(state);
  rec.structured_loss = evaluate_dense(result.structured, data).loss;
  rec.residuals = state.residuals();
  result.trace.push_back(rec);
  result.iterations = cfg.max_iterations;
  result.model = project_model(result.structured);
  return result;
}

void write_trace(std::ostream& os, const TrainResult& result) {
  os << "# k objective task_loss structured_loss rho";
  for (const auto& n : result.residual_names) os << " residual:" << n;
  os << '\n';
  const auto old = os.precision(10);
  for (const auto& r : result.trace) {
    os << r.k << ' ' << r.objective << ' ' << r.task_loss << ' ' << r.structured_loss << ' ' << r.rho;
    for (double v : r.residuals) os << ' ' << v;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace ernn
