#include "ernn/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

#include "cell_math.hpp"
#include "ernn/errors.hpp"
#include "ernn/real_fft.hpp"

namespace ernn::quant {

using rnn::Role;

__extension__ using Int128 = __int128;

double FixedPointFormat::ulp() const noexcept { return std::ldexp(scale, -frac_bits); }

void FixedPointFormat::validate() const {
  if (total_bits < 2 || total_bits > 32) throw ConfigError("total_bits must be in [2, 32]");
  if (frac_bits < 0 || frac_bits >= total_bits) throw ConfigError("frac_bits must be in [0, total_bits)");
  int exp = 0;
  if (!(scale > 0.0) || !std::isfinite(scale) || std::frexp(scale, &exp) != 0.5)
    throw ConfigError("scale must be a positive power of two");
}

namespace {

// Every value representable at effective exponent e (ulp = 2^-e)?
bool fits(double lo, double hi, int e, int bits) {
  const double top = std::ldexp(1.0, bits - 1);
  return std::nearbyint(std::ldexp(hi, e)) <= top - 1 && std::nearbyint(std::ldexp(lo, e)) >= -top;
}

FixedPointFormat format_for_exponent(int e, int bits) {
  FixedPointFormat f;
  f.total_bits = bits;
  f.frac_bits = std::clamp(e, 0, bits - 1);
  f.scale = std::ldexp(1.0, f.frac_bits - e);
  return f;
}

FixedPointFormat analyze_extremes(double lo, double hi, int bits) {
  if (bits < 2 || bits > 32) throw ConfigError("total_bits must be in [2, 32]");
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw NumericError("cannot analyse the range of non-finite values");
  const double maxabs = std::max(std::abs(lo), std::abs(hi));
  if (maxabs == 0.0) return format_for_exponent(bits - 1, bits);
  int e = bits - 1 - static_cast<int>(std::ceil(std::log2(maxabs)));
  while (!fits(lo, hi, e, bits)) --e;
  while (fits(lo, hi, e + 1, bits)) ++e;
  return format_for_exponent(e, bits);
}

}  // namespace

FixedPointFormat analyze_range(std::span<const double> values, int total_bits) {
  if (values.empty()) throw DimensionError("analyze_range needs at least one value");
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("cannot analyse the range of non-finite values");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return analyze_extremes(lo, hi, total_bits);
}

std::int32_t quantize_value(double v, const FixedPointFormat& fmt, SaturationCounter* sat) {
  const double q = std::nearbyint(v / fmt.ulp());
  const auto lo = static_cast<double>(fmt.min_code());
  const auto hi = static_cast<double>(fmt.max_code());
  bool clipped = false;
  double code = q;
  if (std::isnan(q)) {
    code = 0.0;
    clipped = true;
  } else if (q < lo) {
    code = lo;
    clipped = true;
  } else if (q > hi) {
    code = hi;
    clipped = true;
  }
  if (sat) {
    sat->values += 1;
    sat->saturated += clipped ? 1 : 0;
  }
  return static_cast<std::int32_t>(code);
}

double dequantize_value(std::int32_t code, const FixedPointFormat& fmt) noexcept {
  return static_cast<double>(code) * fmt.ulp();
}

QuantizedTensor quantize(std::span<const double> values, const FixedPointFormat& fmt, SaturationCounter* sat) {
  fmt.validate();
  QuantizedTensor q;
  q.format = fmt;
  q.shape = {values.size()};
  q.codes.reserve(values.size());
  for (double v : values) q.codes.push_back(quantize_value(v, fmt, sat));
  return q;
}

std::vector<double> dequantize(const QuantizedTensor& q) {
  std::vector<double> out;
  out.reserve(q.codes.size());
  for (auto c : q.codes) out.push_back(dequantize_value(c, q.format));
  return out;
}

double round_trip(double v, const FixedPointFormat& fmt, SaturationCounter* sat) {
  return dequantize_value(quantize_value(v, fmt, sat), fmt);
}

PiecewiseLinear::PiecewiseLinear(Kind kind, int segments) : kind_(kind) {
  if (segments < 2) throw ConfigError("piecewise-linear activation needs at least 2 segments");
  const double a = kind == Kind::kSigmoid ? 8.0 : 4.0;
  const double lo = kind == Kind::kSigmoid ? 0.0 : -1.0;
  const auto f = [kind](double x) { return kind == Kind::kSigmoid ? rnn::detail::exact_sigmoid(x) : std::tanh(x); };

  // Breakpoint at 0: the left half takes floor(segments / 2) segments.
  const int left = segments / 2;
  const int right = segments - left;
  for (int k = 0; k < left; ++k) nodes_x_.push_back(-a + a * k / left);
  for (int k = 0; k <= right; ++k) nodes_x_.push_back(a * k / right);
  for (double x : nodes_x_) nodes_y_.push_back(f(x));
  nodes_y_.front() = lo;
  nodes_y_.back() = 1.0;

  // Chords lie on one side of a convex or concave piece. Shift interior
  // nodes by half the mean chord error of their two segments to centre it.
  const int n = segments;
  std::vector<double> err(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    const double x0 = nodes_x_[s], x1 = nodes_x_[s + 1];
    const double y0 = nodes_y_[s], y1 = nodes_y_[s + 1];
    double worst = 0.0;
    for (int k = 1; k < 64; ++k) {
      const double x = x0 + (x1 - x0) * k / 64.0;
      const double d = f(x) - (y0 + (y1 - y0) * (x - x0) / (x1 - x0));
      if (std::abs(d) > std::abs(worst)) worst = d;
    }
    err[static_cast<std::size_t>(s)] = worst;
  }
  std::vector<double> adjusted = nodes_y_;
  for (int k = 1; k < n; ++k)
    if (k != left) adjusted[k] += (err[k - 1] + err[k]) / 4.0;
  for (std::size_t k = 1; k < adjusted.size(); ++k) adjusted[k] = std::max(adjusted[k], adjusted[k - 1]);
  for (double& y : adjusted) y = std::clamp(y, lo, 1.0);
  nodes_y_ = std::move(adjusted);
}

double PiecewiseLinear::operator()(double x) const noexcept {
  if (std::isnan(x)) return x;
  if (x <= nodes_x_.front()) return nodes_y_.front();
  if (x >= nodes_x_.back()) return nodes_y_.back();
  const auto it = std::upper_bound(nodes_x_.begin(), nodes_x_.end(), x);
  const auto k = static_cast<std::size_t>(it - nodes_x_.begin()) - 1;
  const double x0 = nodes_x_[k], x1 = nodes_x_[k + 1];
  return nodes_y_[k] + (nodes_y_[k + 1] - nodes_y_[k]) * (x - x0) / (x1 - x0);
}

double pwl_sigmoid(double x, int segments) {
  static const PiecewiseLinear standard(PiecewiseLinear::Kind::kSigmoid, kDefaultSegments);
  if (segments == kDefaultSegments) return standard(x);
  return PiecewiseLinear(PiecewiseLinear::Kind::kSigmoid, segments)(x);
}

double pwl_tanh(double x, int segments) {
  static const PiecewiseLinear standard(PiecewiseLinear::Kind::kTanh, kDefaultSegments);
  if (segments == kDefaultSegments) return standard(x);
  return PiecewiseLinear(PiecewiseLinear::Kind::kTanh, segments)(x);
}

void QuantConfig::validate() const {
  if (weight_bits < 2 || weight_bits > 32 || data_bits < 2 || data_bits > 32)
    throw ConfigError("bit widths must be in [2, 32]");
  if (pwl_segments != 0 && pwl_segments < 2) throw ConfigError("pwl_segments must be 0 or at least 2");
}

namespace {

struct MatrixRef {
  std::size_t layer;
  Role role;
  const BlockCirculantMatrix* matrix;
};

std::vector<MatrixRef> list_matrices(const rnn::ModelParams& model) {
  std::vector<MatrixRef> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (const auto* p = std::get_if<rnn::LstmParams>(&model.layers[l])) {
      out.push_back({l, Role::kLstmGates, &p->gates});
      if (p->has_projection) out.push_back({l, Role::kLstmProjection, &p->projection});
    } else {
      const auto& g = std::get<rnn::GruParams>(model.layers[l]);
      out.push_back({l, Role::kGruGates, &g.gates});
      out.push_back({l, Role::kGruCandidateInput, &g.candidate_input});
      out.push_back({l, Role::kGruCandidateState, &g.candidate_state});
    }
  }
  if (model.readout) out.push_back({model.layers.size(), Role::kReadout, &model.readout->weights});
  return out;
}

struct VectorRef {
  std::size_t layer;
  Role role;
  std::vector<double>* values;
};

std::vector<VectorRef> list_vectors(rnn::ModelParams& model) {
  std::vector<VectorRef> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (auto* p = std::get_if<rnn::LstmParams>(&model.layers[l])) {
      out.push_back({l, Role::kPeepholeI, &p->peephole_i});
      out.push_back({l, Role::kPeepholeF, &p->peephole_f});
      out.push_back({l, Role::kPeepholeO, &p->peephole_o});
      out.push_back({l, Role::kBiasI, &p->bias_i});
      out.push_back({l, Role::kBiasF, &p->bias_f});
      out.push_back({l, Role::kBiasG, &p->bias_g});
      out.push_back({l, Role::kBiasO, &p->bias_o});
    } else {
      auto& g = std::get<rnn::GruParams>(model.layers[l]);
      out.push_back({l, Role::kBiasR, &g.bias_r});
      out.push_back({l, Role::kBiasZ, &g.bias_z});
      out.push_back({l, Role::kBiasCandidate, &g.bias_candidate});
    }
  }
  if (model.readout) out.push_back({model.layers.size(), Role::kReadoutBias, &model.readout->bias});
  return out;
}

std::size_t matrix_index(const std::vector<MatrixQuant>& ms, std::size_t layer, Role role) {
  for (std::size_t k = 0; k < ms.size(); ++k)
    if (ms[k].layer == layer && ms[k].role == role) return k;
  throw DimensionError(std::string("quantization plan has no matrix ") + rnn::role_name(role));
}

std::vector<double> spectrum_values(const std::vector<fft::HalfSpectrum>& spectra) {
  std::vector<double> out;
  for (const auto& s : spectra)
    for (const auto& b : s.bins) {
      out.push_back(b.real());
      out.push_back(b.imag());
    }
  return out;
}

std::vector<fft::HalfSpectrum> segment_spectra(std::span<const double> x, std::size_t block) {
  std::vector<fft::HalfSpectrum> out;
  for (std::size_t j = 0; j * block < x.size(); ++j) out.push_back(fft::rfft(x.subspan(j * block, block)));
  return out;
}

struct Range {
  double lo = 0.0, hi = 0.0;
  void add(std::span<const double> v) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  FixedPointFormat format(int bits) const { return analyze_extremes(lo, hi, bits); }
};

struct PwlActivations {
  PiecewiseLinear s{PiecewiseLinear::Kind::kSigmoid, kDefaultSegments};
  PiecewiseLinear t{PiecewiseLinear::Kind::kTanh, kDefaultSegments};
  double sigmoid(double v) const { return s(v); }
  double tanh(double v) const { return t(v); }
};

// Runs the layer stack step by step. mv(layer, role, input) does every
// matrix product; after_step(layer, state) may rewrite the new state.
template <class MatVec, class Act, class AfterStep>
rnn::Sequence run_stack(const std::vector<rnn::LayerParams>& layers, const std::vector<double>* readout_bias,
                        const rnn::Sequence& xs, MatVec&& mv, const Act& act, AfterStep&& after_step) {
  if (xs.empty()) throw DimensionError("run_sequence needs at least one input vector");
  std::vector<rnn::CellState> states;
  for (const auto& layer : layers) {
    rnn::CellState s;
    if (const auto* p = std::get_if<rnn::LstmParams>(&layer)) {
      s.c.assign(p->cell_dim, 0.0);
      s.y.assign(p->output_dim, 0.0);
    } else {
      s.c.assign(std::get<rnn::GruParams>(layer).hidden_dim, 0.0);
    }
    states.push_back(std::move(s));
  }
  rnn::Sequence outputs;
  for (const auto& x : xs) {
    std::vector<double> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto layer_mv = [&](Role r, std::span<const double> in) { return mv(l, r, in); };
      rnn::StepOutput step;
      if (const auto* p = std::get_if<rnn::LstmParams>(&layers[l])) {
        if (h.size() != p->input_dim) throw DimensionError("input width does not match the model");
        step = rnn::detail::lstm_math(*p, h, states[l], layer_mv, act, nullptr);
      } else {
        const auto& g = std::get<rnn::GruParams>(layers[l]);
        if (h.size() != g.input_dim) throw DimensionError("input width does not match the model");
        step = rnn::detail::gru_math(g, h, states[l], layer_mv, act, nullptr);
      }
      after_step(l, step.state);
      const bool lstm = std::holds_alternative<rnn::LstmParams>(layers[l]);
      h = lstm ? step.state.y : step.state.c;
      states[l] = std::move(step.state);
    }
    if (readout_bias) {
      h = mv(layers.size(), Role::kReadout, h);
      for (std::size_t k = 0; k < h.size(); ++k) h[k] += (*readout_bias)[k];
    }
    outputs.push_back(std::move(h));
  }
  return outputs;
}

}  // namespace

QuantPlan calibrate(const rnn::ModelParams& model, const std::vector<rnn::Sequence>& calibration,
                    const QuantConfig& config) {
  config.validate();
  model.validate();
  if (calibration.empty()) throw DimensionError("calibration needs at least one sequence");
  QuantPlan plan;
  plan.config = config;

  const auto mats = list_matrices(model);
  std::vector<SpectralWeights> spectra;
  std::vector<Range> in_r(mats.size()), spec_r(mats.size()), out_r(mats.size());
  for (const auto& m : mats) {
    spectra.emplace_back(*m.matrix);
    MatrixQuant q;
    q.layer = m.layer;
    q.role = m.role;
    std::vector<fft::HalfSpectrum> all;
    for (std::size_t i = 0; i < m.matrix->block_rows(); ++i)
      for (std::size_t j = 0; j < m.matrix->block_cols(); ++j) all.push_back(spectra.back().spectrum(i, j));
    q.weights = analyze_range(spectrum_values(all), config.weight_bits);
    plan.matrices.push_back(q);
  }
  auto copy = model;
  for (const auto& v : list_vectors(copy))
    plan.vectors.push_back({v.layer, v.role, analyze_range(*v.values, config.weight_bits)});

  std::vector<Range> c_r(model.layers.size()), y_r(model.layers.size());
  const auto mv = [&](std::size_t layer, Role role, std::span<const double> in) {
    const std::size_t k = matrix_index(plan.matrices, layer, role);
    in_r[k].add(in);
    spec_r[k].add(spectrum_values(segment_spectra(in, spectra[k].block_size())));
    auto out = matvec_decoupled(spectra[k], in);
    out_r[k].add(out);
    return out;
  };
  const auto record = [&](std::size_t l, rnn::CellState& s) {
    c_r[l].add(s.c);
    y_r[l].add(s.y.empty() ? s.c : s.y);
  };
  const std::vector<double>* bias = model.readout ? &model.readout->bias : nullptr;
  for (const auto& xs : calibration) run_stack(model.layers, bias, xs, mv, rnn::detail::ExactActivations{}, record);

  for (std::size_t k = 0; k < plan.matrices.size(); ++k) {
    plan.matrices[k].input = in_r[k].format(config.data_bits);
    plan.matrices[k].input_spectrum = spec_r[k].format(config.data_bits);
    plan.matrices[k].output = out_r[k].format(config.data_bits);
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    plan.states.push_back({l, c_r[l].format(config.data_bits), y_r[l].format(config.data_bits)});
  return plan;
}

QuantizedNetwork::QuantizedNetwork(rnn::ModelParams model, QuantPlan plan)
    : model_(std::move(model)), plan_(std::move(plan)) {
  model_.validate();
  plan_.config.validate();
  const auto mats = list_matrices(model_);
  if (mats.size() != plan_.matrices.size() || plan_.states.size() != model_.layers.size())
    throw DimensionError("quantization plan does not match the model");
  for (std::size_t k = 0; k < mats.size(); ++k) {
    if (mats[k].layer != plan_.matrices[k].layer || mats[k].role != plan_.matrices[k].role)
      throw DimensionError("quantization plan does not match the model");
    const SpectralWeights w(*mats[k].matrix);
    std::vector<fft::HalfSpectrum> all;
    for (std::size_t i = 0; i < w.block_rows(); ++i)
      for (std::size_t j = 0; j < w.block_cols(); ++j) all.push_back(w.spectrum(i, j));
    auto q = quantize(spectrum_values(all), plan_.matrices[k].weights);
    q.shape = {w.block_rows(), w.block_cols(), fft::HalfSpectrum::bin_count(w.block_size()), 2};
    weights_.push_back(std::move(q));
  }
  auto rounded = model_;
  auto vecs = list_vectors(rounded);
  if (vecs.size() != plan_.vectors.size()) throw DimensionError("quantization plan does not match the model");
  for (std::size_t k = 0; k < vecs.size(); ++k)
    for (double& v : *vecs[k].values) v = round_trip(v, plan_.vectors[k].format);
  quantized_layers_ = rounded.layers;
  if (rounded.readout) readout_bias_ = rounded.readout->bias;
}

rnn::Sequence QuantizedNetwork::run_sequence(const rnn::Sequence& xs, SaturationCounter* sat) const {
  const auto mats = list_matrices(model_);
  const auto mv = [&](std::size_t layer, Role role, std::span<const double> in) {
    const std::size_t k = matrix_index(plan_.matrices, layer, role);
    const auto& fmt = plan_.matrices[k];
    const auto& m = *mats[k].matrix;
    const std::size_t lb = m.block_size();
    const std::size_t bins = fft::HalfSpectrum::bin_count(lb);
    if (in.size() != m.cols()) throw DimensionError("matrix input width mismatch");

    std::vector<double> xq(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) xq[i] = round_trip(in[i], fmt.input, sat);
    // Input spectra as integer codes, interleaved real/imaginary.
    std::vector<std::int64_t> xs_codes;
    xs_codes.reserve(m.block_cols() * bins * 2);
    for (const auto& s : segment_spectra(xq, lb))
      for (const auto& b : s.bins) {
        xs_codes.push_back(quantize_value(b.real(), fmt.input_spectrum, sat));
        xs_codes.push_back(quantize_value(b.imag(), fmt.input_spectrum, sat));
      }
    const auto& w = weights_[k].codes;
    const double unit = fmt.weights.ulp() * fmt.input_spectrum.ulp();
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.block_rows(); ++i) {
      auto acc = fft::HalfSpectrum::zeros(lb);
      for (std::size_t b = 0; b < bins; ++b) {
        Int128 re = 0, im = 0;
        for (std::size_t j = 0; j < m.block_cols(); ++j) {
          const std::size_t wo = ((i * m.block_cols() + j) * bins + b) * 2;
          const std::size_t xo = (j * bins + b) * 2;
          const Int128 wr = w[wo], wi = w[wo + 1], xr = xs_codes[xo], xi = xs_codes[xo + 1];
          re += wr * xr - wi * xi;
          im += wr * xi + wi * xr;
        }
        acc.bins[b] = {static_cast<double>(re) * unit, static_cast<double>(im) * unit};
      }
      const auto block = fft::irfft(acc);
      for (std::size_t r = 0; r < lb; ++r) out[i * lb + r] = round_trip(block[r], fmt.output, sat);
    }
    return out;
  };
  const auto requantize = [&](std::size_t l, rnn::CellState& s) {
    for (double& v : s.c) v = round_trip(v, plan_.states[l].c, sat);
    for (double& v : s.y) v = round_trip(v, plan_.states[l].y, sat);
  };
  const std::vector<double>* bias = model_.readout ? &readout_bias_ : nullptr;
  const int segs = plan_.config.pwl_segments;
  if (segs == 0) return run_stack(quantized_layers_, bias, xs, mv, rnn::detail::ExactActivations{}, requantize);
  PwlActivations act{PiecewiseLinear(PiecewiseLinear::Kind::kSigmoid, segs),
                     PiecewiseLinear(PiecewiseLinear::Kind::kTanh, segs)};
  return run_stack(quantized_layers_, bias, xs, mv, act, requantize);
}

std::string DeviationReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "# max_abs mean_abs compared values saturated saturation_rate warning\n"
     << max_abs << ' ' << mean_abs << ' ' << compared << ' ' << saturation.values << ' ' << saturation.saturated << ' '
     << saturation.rate() << ' ' << (saturation_warning ? "saturation_above_1pct" : "none") << '\n';
  return os.str();
}

QuantizedInference quantized_inference(const rnn::ModelParams& model, const std::vector<rnn::Sequence>& inputs,
                                       const QuantConfig& config, const std::vector<rnn::Sequence>& calibration) {
  const auto plan = calibrate(model, calibration.empty() ? inputs : calibration, config);
  const QuantizedNetwork qnet(model, plan);
  const rnn::Network net(model);
  QuantizedInference r;
  double total = 0.0;
  for (const auto& xs : inputs) {
    r.reference.push_back(net.run_sequence(xs));
    r.outputs.push_back(qnet.run_sequence(xs, &r.report.saturation));
    const auto& a = r.outputs.back();
    const auto& b = r.reference.back();
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t k = 0; k < a[t].size(); ++k) {
        const double d = std::abs(a[t][k] - b[t][k]);
        r.report.max_abs = std::max(r.report.max_abs, d);
        total += d;
        r.report.compared += 1;
      }
  }
  if (r.report.compared) r.report.mean_abs = total / static_cast<double>(r.report.compared);
  r.report.saturation_warning = r.report.saturation.rate() > 0.01;
  return r;
}

}  // namespace ernn::quant
