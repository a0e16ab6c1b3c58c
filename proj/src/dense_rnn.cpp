#include "ernn/dense_rnn.hpp"

#include <cmath>
#include <random>
#include <string>

#include "ernn/errors.hpp"

namespace ernn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using rnn::Role;

namespace {

VectorXd to_vec(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

MatrixXd column(const std::vector<double>& v) { return to_vec(v); }

VectorXd sigmoid(const VectorXd& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

bool is_lstm(const DenseModel& m) { return m.spec.cell == rnn::CellType::kLstm; }

}  // namespace

DenseModel DenseModel::zeros(const LayerSpec& spec, std::size_t readout_dim, rnn::CellInputActivation cell_input) {
  spec.validate();
  DenseModel m;
  m.spec = spec;
  m.readout_dim = readout_dim;
  m.cell_input = cell_input;
  const auto matrices = spec.matrices();
  const auto vectors = spec.vectors();
  const auto add = [&](std::size_t layer, Role role, std::size_t rows, std::size_t cols, std::size_t block) {
    m.info.push_back({layer, role, block});
    m.tensors.push_back(MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  };
  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    std::vector<LayerSpec::MatrixShape> mats;
    for (const auto& s : matrices)
      if (s.layer == l) mats.push_back(s);
    // The gate matrix comes first; GRU candidate matrices follow it directly,
    // the LSTM projection goes after the vectors.
    add(l, mats[0].role, mats[0].rows, mats[0].cols, mats[0].block);
    if (!is_lstm(m))
      for (std::size_t k = 1; k < mats.size(); ++k) add(l, mats[k].role, mats[k].rows, mats[k].cols, mats[k].block);
    for (const auto& v : vectors)
      if (v.layer == l) add(l, v.role, v.length, 1, 0);
    if (is_lstm(m))
      for (std::size_t k = 1; k < mats.size(); ++k) add(l, mats[k].role, mats[k].rows, mats[k].cols, mats[k].block);
  }
  if (readout_dim) {
    const std::size_t top = spec.cell == rnn::CellType::kLstm && spec.projection ? spec.projection : spec.hidden.back();
    add(spec.hidden.size() - 1, Role::kReadout, readout_dim, top, 0);
    add(spec.hidden.size() - 1, Role::kReadoutBias, readout_dim, 1, 0);
  }
  return m;
}

void DenseModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& t = tensors[k];
    const Role r = info[k].role;
    double scale = 0.0;
    if (rnn::is_matrix_role(r))
      scale = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    else if (r == Role::kPeepholeI || r == Role::kPeepholeF || r == Role::kPeepholeO)
      scale = 0.1;
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale > 0.0 ? dist(rng) : 0.0;
    if (r == Role::kBiasF) t.setConstant(1.0);
  }
}

std::size_t DenseModel::index_of(std::size_t layer, Role role) const {
  for (std::size_t k = 0; k < info.size(); ++k)
    if (info[k].role == role && (info[k].layer == layer || role == Role::kReadout || role == Role::kReadoutBias))
      return k;
  throw ConfigError(std::string("model has no tensor ") + rnn::role_name(role) + " in layer " + std::to_string(layer));
}

std::size_t DenseModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<MatrixXd> DenseModel::zeros_like() const {
  std::vector<MatrixXd> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(MatrixXd::Zero(t.rows(), t.cols()));
  return out;
}

DenseModel to_dense(const rnn::ModelParams& model, const LayerSpec& spec) {
  model.validate();
  if (model.cell != spec.cell || model.layers.size() != spec.hidden.size())
    throw DimensionError("model does not match layer spec");
  rnn::CellInputActivation act = rnn::CellInputActivation::kSigmoid;
  if (model.cell == rnn::CellType::kLstm) act = std::get<rnn::LstmParams>(model.layers[0]).cell_input;
  auto d = DenseModel::zeros(spec, model.readout ? model.readout->weights.rows() : 0, act);
  const auto set = [&](std::size_t l, Role r, MatrixXd v) {
    auto& t = d.tensors[d.index_of(l, r)];
    if (t.rows() != v.rows() || t.cols() != v.cols()) throw DimensionError(std::string("shape mismatch for ") + rnn::role_name(r));
    t = std::move(v);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (const auto* p = std::get_if<rnn::LstmParams>(&model.layers[l])) {
      set(l, Role::kLstmGates, expand_to_dense(p->gates));
      if (p->has_projection) set(l, Role::kLstmProjection, expand_to_dense(p->projection));
      set(l, Role::kPeepholeI, column(p->peephole_i));
      set(l, Role::kPeepholeF, column(p->peephole_f));
      set(l, Role::kPeepholeO, column(p->peephole_o));
      set(l, Role::kBiasI, column(p->bias_i));
      set(l, Role::kBiasF, column(p->bias_f));
      set(l, Role::kBiasG, column(p->bias_g));
      set(l, Role::kBiasO, column(p->bias_o));
    } else {
      const auto& g = std::get<rnn::GruParams>(model.layers[l]);
      set(l, Role::kGruGates, expand_to_dense(g.gates));
      set(l, Role::kGruCandidateInput, expand_to_dense(g.candidate_input));
      set(l, Role::kGruCandidateState, expand_to_dense(g.candidate_state));
      set(l, Role::kBiasR, column(g.bias_r));
      set(l, Role::kBiasZ, column(g.bias_z));
      set(l, Role::kBiasCandidate, column(g.bias_candidate));
    }
  }
  if (model.readout) {
    set(0, Role::kReadout, expand_to_dense(model.readout->weights));
    set(0, Role::kReadoutBias, column(model.readout->bias));
  }
  return d;
}

rnn::ModelParams project_model(const DenseModel& d) {
  auto model = make_model(d.spec, d.readout_dim, d.cell_input);
  const auto mat = [&](std::size_t l, Role r, std::size_t block) {
    return project_to_block_circulant(d.tensors[d.index_of(l, r)], block);
  };
  const auto vec = [&](std::size_t l, Role r) {
    const auto& t = d.tensors[d.index_of(l, r)];
    return std::vector<double>(t.data(), t.data() + t.size());
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (auto* p = std::get_if<rnn::LstmParams>(&model.layers[l])) {
      p->gates = mat(l, Role::kLstmGates, p->gates.block_size());
      if (p->has_projection) p->projection = mat(l, Role::kLstmProjection, p->projection.block_size());
      p->peephole_i = vec(l, Role::kPeepholeI);
      p->peephole_f = vec(l, Role::kPeepholeF);
      p->peephole_o = vec(l, Role::kPeepholeO);
      p->bias_i = vec(l, Role::kBiasI);
      p->bias_f = vec(l, Role::kBiasF);
      p->bias_g = vec(l, Role::kBiasG);
      p->bias_o = vec(l, Role::kBiasO);
    } else {
      auto& g = std::get<rnn::GruParams>(model.layers[l]);
      g.gates = mat(l, Role::kGruGates, g.gates.block_size());
      g.candidate_input = mat(l, Role::kGruCandidateInput, g.candidate_input.block_size());
      g.candidate_state = mat(l, Role::kGruCandidateState, g.candidate_state.block_size());
      g.bias_r = vec(l, Role::kBiasR);
      g.bias_z = vec(l, Role::kBiasZ);
      g.bias_candidate = vec(l, Role::kBiasCandidate);
    }
  }
  if (model.readout) {
    model.readout->weights = mat(0, Role::kReadout, 1);
    model.readout->bias = vec(0, Role::kReadoutBias);
  }
  model.validate();
  return model;
}

namespace {

struct LstmTensors {
  std::size_t gates, pi, pf, po, bi, bf, bg, bo, proj;
  bool has_proj;
};

struct GruTensors {
  std::size_t gates, cx, cc, br, bz, bc;
};

// Everything the backward pass needs from one forward step.
struct StepCache {
  VectorXd in;  // concatenated layer input and previous output/state
  VectorXd c_prev, a, b, g, o, c, th, m, s;
};

struct LayerTrace {
  std::vector<StepCache> steps;
  std::vector<VectorXd> out;
};

class Runner {
 public:
  explicit Runner(const DenseModel& m) : m_(m) {
    for (std::size_t l = 0; l < m.spec.hidden.size(); ++l) {
      if (is_lstm(m)) {
        const bool proj = m.spec.projection != 0;
        lstm_.push_back({m.index_of(l, Role::kLstmGates), m.index_of(l, Role::kPeepholeI),
                         m.index_of(l, Role::kPeepholeF), m.index_of(l, Role::kPeepholeO),
                         m.index_of(l, Role::kBiasI), m.index_of(l, Role::kBiasF), m.index_of(l, Role::kBiasG),
                         m.index_of(l, Role::kBiasO), proj ? m.index_of(l, Role::kLstmProjection) : 0, proj});
      } else {
        gru_.push_back({m.index_of(l, Role::kGruGates), m.index_of(l, Role::kGruCandidateInput),
                        m.index_of(l, Role::kGruCandidateState), m.index_of(l, Role::kBiasR),
                        m.index_of(l, Role::kBiasZ), m.index_of(l, Role::kBiasCandidate)});
      }
    }
    if (m.readout_dim) {
      readout_ = m.index_of(0, Role::kReadout);
      readout_bias_ = m.index_of(0, Role::kReadoutBias);
    }
  }

  std::vector<LayerTrace> forward(const rnn::Sequence& xs, std::vector<VectorXd>& logits) const {
    if (xs.empty()) throw DimensionError("empty sequence");
    std::vector<VectorXd> in;
    in.reserve(xs.size());
    for (const auto& x : xs) {
      if (x.size() != m_.spec.input_dim) throw DimensionError("input width does not match the model");
      in.push_back(to_vec(x));
    }
    std::vector<LayerTrace> traces;
    for (std::size_t l = 0; l < m_.spec.hidden.size(); ++l) {
      traces.push_back(is_lstm(m_) ? lstm_forward(lstm_[l], in) : gru_forward(gru_[l], in));
      in = traces.back().out;
    }
    logits.clear();
    if (!m_.readout_dim) {
      logits = std::move(in);
      return traces;
    }
    const auto& V = t(readout_);
    const VectorXd bv = t(readout_bias_).col(0);
    for (const auto& y : in) logits.push_back(V * y + bv);
    return traces;
  }

  // dlogits: gradient of the loss with respect to each step's logits.
  void backward(const std::vector<LayerTrace>& traces, const std::vector<VectorXd>& dlogits,
                std::vector<MatrixXd>& grad) const {
    const auto& top = traces.back().out;
    const auto& V = t(readout_);
    std::vector<VectorXd> dout(top.size());
    for (std::size_t k = 0; k < top.size(); ++k) {
      grad[readout_].noalias() += dlogits[k] * top[k].transpose();
      grad[readout_bias_].col(0) += dlogits[k];
      dout[k] = V.transpose() * dlogits[k];
    }
    for (std::size_t l = traces.size(); l-- > 0;)
      dout = is_lstm(m_) ? lstm_backward(lstm_[l], traces[l], dout, grad) : gru_backward(gru_[l], traces[l], dout, grad);
  }

 private:
  const MatrixXd& t(std::size_t k) const { return m_.tensors[k]; }

  LayerTrace lstm_forward(const LstmTensors& ix, const std::vector<VectorXd>& xs) const {
    const auto& W = t(ix.gates);
    const auto h = static_cast<Eigen::Index>(t(ix.pi).rows());
    const Eigen::Index x_dim = W.cols() - (ix.has_proj ? t(ix.proj).rows() : h);
    const auto pi = t(ix.pi).col(0), pf = t(ix.pf).col(0), po = t(ix.po).col(0);
    LayerTrace tr;
    VectorXd c = VectorXd::Zero(h);
    VectorXd y = VectorXd::Zero(W.cols() - x_dim);
    for (const auto& x : xs) {
      StepCache s;
      s.in.resize(W.cols());
      s.in << x, y;
      const VectorXd z = W * s.in;
      s.c_prev = c;
      s.a = sigmoid(z.segment(0, h) + pi.cwiseProduct(c) + t(ix.bi).col(0));
      s.b = sigmoid(z.segment(h, h) + pf.cwiseProduct(c) + t(ix.bf).col(0));
      const VectorXd zg = z.segment(2 * h, h) + t(ix.bg).col(0);
      s.g = m_.cell_input == rnn::CellInputActivation::kTanh ? VectorXd(zg.array().tanh()) : sigmoid(zg);
      s.c = s.b.cwiseProduct(c) + s.g.cwiseProduct(s.a);
      s.o = sigmoid(z.segment(3 * h, h) + po.cwiseProduct(s.c) + t(ix.bo).col(0));
      s.th = s.c.array().tanh();
      s.m = s.o.cwiseProduct(s.th);
      y = ix.has_proj ? VectorXd(t(ix.proj) * s.m) : s.m;
      c = s.c;
      tr.out.push_back(y);
      tr.steps.push_back(std::move(s));
    }
    return tr;
  }

  std::vector<VectorXd> lstm_backward(const LstmTensors& ix, const LayerTrace& tr, const std::vector<VectorXd>& dout,
                                      std::vector<MatrixXd>& grad) const {
    const auto& W = t(ix.gates);
    const auto h = static_cast<Eigen::Index>(t(ix.pi).rows());
    const Eigen::Index y_dim = ix.has_proj ? t(ix.proj).rows() : h;
    const Eigen::Index x_dim = W.cols() - y_dim;
    const auto pi = t(ix.pi).col(0), pf = t(ix.pf).col(0), po = t(ix.po).col(0);
    std::vector<VectorXd> dx(tr.steps.size());
    VectorXd dy_next = VectorXd::Zero(y_dim);
    VectorXd dc_next = VectorXd::Zero(h);
    VectorXd dz(4 * h);
    for (std::size_t k = tr.steps.size(); k-- > 0;) {
      const auto& s = tr.steps[k];
      const VectorXd dy = dout[k] + dy_next;
      VectorXd dm = dy;
      if (ix.has_proj) {
        grad[ix.proj].noalias() += dy * s.m.transpose();
        dm = t(ix.proj).transpose() * dy;
      }
      const VectorXd d_o = dm.cwiseProduct(s.th);
      VectorXd dc = dc_next + (dm.cwiseProduct(s.o).array() * (1.0 - s.th.array().square())).matrix();
      const VectorXd da_o = (d_o.array() * s.o.array() * (1.0 - s.o.array())).matrix();
      dc += da_o.cwiseProduct(po);
      grad[ix.po].col(0) += da_o.cwiseProduct(s.c);
      grad[ix.bo].col(0) += da_o;

      const VectorXd da_i = (dc.array() * s.g.array() * s.a.array() * (1.0 - s.a.array())).matrix();
      const VectorXd da_f = (dc.array() * s.c_prev.array() * s.b.array() * (1.0 - s.b.array())).matrix();
      const Eigen::ArrayXd gd = m_.cell_input == rnn::CellInputActivation::kTanh
                                    ? Eigen::ArrayXd(1.0 - s.g.array().square())
                                    : Eigen::ArrayXd(s.g.array() * (1.0 - s.g.array()));
      const VectorXd da_g = (dc.array() * s.a.array() * gd).matrix();
      VectorXd dc_prev = dc.cwiseProduct(s.b) + da_i.cwiseProduct(pi) + da_f.cwiseProduct(pf);
      grad[ix.pi].col(0) += da_i.cwiseProduct(s.c_prev);
      grad[ix.pf].col(0) += da_f.cwiseProduct(s.c_prev);
      grad[ix.bi].col(0) += da_i;
      grad[ix.bf].col(0) += da_f;
      grad[ix.bg].col(0) += da_g;

      dz << da_i, da_f, da_g, da_o;
      grad[ix.gates].noalias() += dz * s.in.transpose();
      const VectorXd din = W.transpose() * dz;
      dx[k] = din.head(x_dim);
      dy_next = din.tail(y_dim);
      dc_next = std::move(dc_prev);
    }
    return dx;
  }

  LayerTrace gru_forward(const GruTensors& ix, const std::vector<VectorXd>& xs) const {
    const auto& Wrz = t(ix.gates);
    const auto h = static_cast<Eigen::Index>(t(ix.cc).rows());
    LayerTrace tr;
    VectorXd c = VectorXd::Zero(h);
    for (const auto& x : xs) {
      StepCache s;
      s.in.resize(Wrz.cols());
      s.in << x, c;
      const VectorXd u = Wrz * s.in;
      s.c_prev = c;
      s.a = sigmoid(u.head(h) + t(ix.br).col(0));  // r
      s.b = sigmoid(u.tail(h) + t(ix.bz).col(0));  // z
      s.s = s.a.cwiseProduct(c);
      s.g = (t(ix.cx) * x + t(ix.cc) * s.s + t(ix.bc).col(0)).array().tanh();
      s.c = ((1.0 - s.b.array()) * c.array() + s.b.array() * s.g.array()).matrix();
      c = s.c;
      tr.out.push_back(c);
      tr.steps.push_back(std::move(s));
    }
    return tr;
  }

  std::vector<VectorXd> gru_backward(const GruTensors& ix, const LayerTrace& tr, const std::vector<VectorXd>& dout,
                                     std::vector<MatrixXd>& grad) const {
    const auto& Wrz = t(ix.gates);
    const auto h = static_cast<Eigen::Index>(t(ix.cc).rows());
    const Eigen::Index x_dim = Wrz.cols() - h;
    std::vector<VectorXd> dx(tr.steps.size());
    VectorXd dc_next = VectorXd::Zero(h);
    VectorXd du(2 * h);
    for (std::size_t k = tr.steps.size(); k-- > 0;) {
      const auto& s = tr.steps[k];
      const VectorXd dc = dout[k] + dc_next;
      const VectorXd dzg = dc.cwiseProduct(s.g - s.c_prev);
      VectorXd dc_prev = (dc.array() * (1.0 - s.b.array())).matrix();
      const VectorXd da_c = (dc.array() * s.b.array() * (1.0 - s.g.array().square())).matrix();
      const auto x = s.in.head(x_dim);
      grad[ix.cx].noalias() += da_c * x.transpose();
      grad[ix.cc].noalias() += da_c * s.s.transpose();
      grad[ix.bc].col(0) += da_c;
      VectorXd dxk = t(ix.cx).transpose() * da_c;
      const VectorXd ds = t(ix.cc).transpose() * da_c;
      dc_prev += ds.cwiseProduct(s.a);
      const VectorXd da_r = (ds.array() * s.c_prev.array() * s.a.array() * (1.0 - s.a.array())).matrix();
      const VectorXd da_z = (dzg.array() * s.b.array() * (1.0 - s.b.array())).matrix();
      grad[ix.br].col(0) += da_r;
      grad[ix.bz].col(0) += da_z;
      du << da_r, da_z;
      grad[ix.gates].noalias() += du * s.in.transpose();
      const VectorXd din = Wrz.transpose() * du;
      dxk += din.head(x_dim);
      dc_prev += din.tail(h);
      dx[k] = std::move(dxk);
      dc_next = std::move(dc_prev);
    }
    return dx;
  }

  const DenseModel& m_;
  std::vector<LstmTensors> lstm_;
  std::vector<GruTensors> gru_;
  std::size_t readout_ = 0, readout_bias_ = 0;
};

}  // namespace

rnn::Sequence dense_forward(const DenseModel& model, const rnn::Sequence& xs) {
  const Runner runner(model);
  std::vector<VectorXd> logits;
  runner.forward(xs, logits);
  rnn::Sequence out;
  out.reserve(logits.size());
  for (const auto& z : logits) out.push_back(to_std(z));
  return out;
}

double loss_and_gradient(const DenseModel& model, std::span<const Example> batch, std::vector<MatrixXd>& grad) {
  if (!model.readout_dim) throw ConfigError("training needs a read-out layer");
  const Runner runner(model);
  grad = model.zeros_like();
  std::size_t scored = 0;
  for (const auto& ex : batch)
    for (int target : ex.targets) scored += target >= 0 ? 1 : 0;
  if (scored == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(scored);
  double loss = 0.0;
  std::vector<VectorXd> logits;
  for (const auto& ex : batch) {
    if (ex.targets.size() != ex.inputs.size()) throw DimensionError("one target per step expected");
    const auto traces = runner.forward(ex.inputs, logits);
    std::vector<VectorXd> dlogits(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const int target = ex.targets[k];
      if (target < 0) {
        dlogits[k] = VectorXd::Zero(logits[k].size());
        continue;
      }
      if (target >= logits[k].size()) throw DimensionError("target class out of range");
      const double zmax = logits[k].maxCoeff();
      VectorXd p = (logits[k].array() - zmax).exp();
      const double sum = p.sum();
      p /= sum;
      loss += (std::log(sum) + zmax - logits[k][target]) * inv;
      p[target] -= 1.0;
      dlogits[k] = p * inv;
    }
    runner.backward(traces, dlogits, grad);
  }
  return loss;
}

TaskMetrics evaluate_dense(const DenseModel& model, const Dataset& data) {
  std::vector<rnn::Sequence> logits;
  logits.reserve(data.size());
  for (const auto& ex : data) logits.push_back(dense_forward(model, ex.inputs));
  return score_logits(logits, data);
}

}  // namespace ernn
