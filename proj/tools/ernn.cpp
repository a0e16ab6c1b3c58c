// ernn: train, infer, cost and explore block-circulant LSTM/GRU models.
//
// Exit codes:
//   0  success (train: converged)
//   1  train did not converge / explore found no block size within tolerance
//   2  usage or configuration error
//   3  training diverged
//   4  corrupt model file
//   5  dimension or partition mismatch
//   6  storage capacity infeasible

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "ernn/admm.hpp"
#include "ernn/cost_model.hpp"
#include "ernn/errors.hpp"
#include "ernn/model_file.hpp"
#include "ernn/quantize.hpp"

namespace {

using json = nlohmann::json;
using ernn::LayerSpec;
using ernn::rnn::CellType;

enum Exit : int {
  kOk = 0,
  kTargetMissed = 1,
  kUsage = 2,
  kDiverged = 3,
  kCorrupt = 4,
  kDimension = 5,
  kInfeasible = 6,
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw UsageError("unknown key '" + k + "' in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("bad value for '") + key + "'");
  }
}

CellType parse_cell(const std::string& s) {
  if (s == "lstm") return CellType::kLstm;
  if (s == "gru") return CellType::kGru;
  throw UsageError("cell must be 'lstm' or 'gru', got '" + s + "'");
}

const char* cell_name(CellType c) { return c == CellType::kLstm ? "lstm" : "gru"; }

// Settings shared by train and explore.
struct Experiment {
  ernn::CopyTask task;
  std::size_t examples = 256;
  std::size_t eval_examples = 256;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 7;
  LayerSpec spec;
  ernn::rnn::CellInputActivation cell_input = ernn::rnn::CellInputActivation::kSigmoid;
  ernn::TrainConfig train;
  std::string method = "admm";
  std::optional<ernn::quant::QuantConfig> quantize;

  ernn::Dataset training_data() const { return task.generate(examples, data_seed); }
  ernn::Dataset eval_data() const { return task.generate(eval_examples, data_seed + 1000003); }
};

const std::set<std::string> kExperimentKeys = {"task",   "copy",  "examples", "eval_examples", "data_seed",
                                               "init_seed", "model", "train",    "method",        "quantize"};

Experiment parse_experiment(const json& j, std::optional<std::uint64_t> seed) {
  check_keys(j, kExperimentKeys, "config");
  Experiment e;
  if (get_or<std::string>(j, "task", "copy") != "copy") throw UsageError("the only built-in task is 'copy'");
  if (j.contains("copy")) {
    const auto& c = j.at("copy");
    check_keys(c, {"symbols", "length", "delay", "input_dim"}, "copy");
    e.task.symbols = get_or(c, "symbols", e.task.symbols);
    e.task.length = get_or(c, "length", e.task.length);
    e.task.delay = get_or(c, "delay", e.task.delay);
    e.task.input_dim = get_or(c, "input_dim", e.task.input_dim);
  }
  if (e.task.symbols < 2 || e.task.length == 0) throw UsageError("copy task needs >= 2 symbols and length >= 1");
  if (e.task.input_dim && e.task.input_dim < e.task.min_input_dim())
    throw UsageError(fmt::format("copy input_dim must be at least {}", e.task.min_input_dim()));
  e.examples = get_or(j, "examples", e.examples);
  e.eval_examples = get_or(j, "eval_examples", e.eval_examples);
  e.data_seed = get_or(j, "data_seed", e.data_seed);
  e.init_seed = get_or(j, "init_seed", e.init_seed);
  if (e.examples == 0 || e.eval_examples == 0) throw UsageError("example counts must be positive");

  if (!j.contains("model")) throw UsageError("config needs a 'model' section");
  const auto& m = j.at("model");
  check_keys(m, {"cell", "hidden", "projection", "block", "io_block", "cell_input"}, "model");
  e.spec.cell = parse_cell(get_or<std::string>(m, "cell", "lstm"));
  e.spec.input_dim = e.task.effective_input_dim();
  e.spec.hidden = get_or<std::vector<std::size_t>>(m, "hidden", {16});
  e.spec.projection = get_or<std::size_t>(m, "projection", 0);
  e.spec.block = get_or<std::size_t>(m, "block", 1);
  e.spec.io_block = get_or<std::size_t>(m, "io_block", 0);
  const auto act = get_or<std::string>(m, "cell_input", "sigmoid");
  if (act == "tanh")
    e.cell_input = ernn::rnn::CellInputActivation::kTanh;
  else if (act != "sigmoid")
    throw UsageError("cell_input must be 'sigmoid' or 'tanh'");

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"learning_rate", "lr_decay", "momentum", "epochs_per_iteration", "batch_size", "max_iterations",
                "tolerance", "rho", "rho_growth", "rho_max", "clip_norm", "seed"},
               "train");
    auto& c = e.train;
    c.learning_rate = get_or(t, "learning_rate", c.learning_rate);
    c.lr_decay = get_or(t, "lr_decay", c.lr_decay);
    c.momentum = get_or(t, "momentum", c.momentum);
    c.epochs_per_iteration = get_or(t, "epochs_per_iteration", c.epochs_per_iteration);
    c.batch_size = get_or(t, "batch_size", c.batch_size);
    c.max_iterations = get_or(t, "max_iterations", c.max_iterations);
    c.tolerance = get_or(t, "tolerance", c.tolerance);
    c.rho = get_or(t, "rho", c.rho);
    c.rho_growth = get_or(t, "rho_growth", c.rho_growth);
    c.rho_max = get_or(t, "rho_max", c.rho_max);
    c.clip_norm = get_or(t, "clip_norm", c.clip_norm);
    c.seed = get_or(t, "seed", c.seed);
  }
  e.method = get_or<std::string>(j, "method", "admm");
  if (e.method != "admm" && e.method != "project") throw UsageError("method must be 'admm' or 'project'");
  if (j.contains("quantize")) {
    const auto& q = j.at("quantize");
    check_keys(q, {"weight_bits", "data_bits", "pwl_segments"}, "quantize");
    ernn::quant::QuantConfig qc;
    qc.weight_bits = get_or(q, "weight_bits", qc.weight_bits);
    qc.data_bits = get_or(q, "data_bits", qc.data_bits);
    qc.pwl_segments = get_or(q, "pwl_segments", qc.pwl_segments);
    e.quantize = qc;
  }
  if (seed) {
    e.data_seed = *seed;
    e.init_seed = *seed;
    e.train.seed = *seed;
  }
  return e;
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
}

ernn::TrainResult run_training(const Experiment& e, const LayerSpec& spec, const ernn::Dataset& data,
                               bool force_plain = false) {
  auto init = ernn::DenseModel::zeros(spec, e.task.classes(), e.cell_input);
  init.initialize(e.init_seed);
  if (force_plain || e.method == "project") return ernn::train_then_project(std::move(init), data, e.train);
  return ernn::admm_train(std::move(init), data, e.train);
}

int cmd_train(const std::string& config_path, const std::string& output, std::string trace_path,
              std::optional<std::uint64_t> seed) {
  const auto e = parse_experiment(load_json(config_path), seed);
  e.spec.validate();
  e.train.validate();
  if (e.quantize) e.quantize->validate();
  if (trace_path.empty()) trace_path = output + ".trace";

  const auto data = e.training_data();
  std::cerr << "training " << e.spec.describe() << " on " << data.size() << " copy examples\n";
  const auto result = run_training(e, e.spec, data);

  ernn::io::ModelFile file{result.model, std::nullopt, {}};
  if (e.quantize) {
    std::vector<ernn::rnn::Sequence> calib;
    for (std::size_t i = 0; i < std::min<std::size_t>(data.size(), 32); ++i) calib.push_back(data[i].inputs);
    file = ernn::io::with_quantization(result.model, ernn::quant::calibrate(result.model, calib, *e.quantize));
  }
  ernn::io::write_model_file(output, file);
  std::ofstream trace(trace_path);
  if (!trace) throw UsageError("cannot write trace " + trace_path);
  ernn::write_trace(trace, result);

  const auto eval = ernn::evaluate_network(ernn::rnn::Network(result.model), e.eval_data());
  std::cout << "# ernn-train v1\n"
            << "converged=" << (result.converged ? 1 : 0) << "\n"
            << "iterations=" << result.iterations << "\n"
            << fmt::format("eval_loss={:.9g}\neval_accuracy={:.9g}\n", eval.loss, eval.accuracy);
  return result.converged ? kOk : kTargetMissed;
}

ernn::rnn::Sequence read_inputs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open input " + path);
  ernn::rnn::Sequence xs;
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> v;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw UsageError("bad number '" + tok + "' in " + path);
      v.push_back(x);
    }
    xs.push_back(std::move(v));
  }
  if (xs.empty()) throw UsageError("input file holds no vectors");
  return xs;
}

int cmd_infer(const std::string& model_path, const std::string& input_path, bool quantized, bool compare_dense,
              int precision) {
  const auto file = ernn::io::read_model_file(model_path);
  const auto xs = read_inputs(input_path);
  const std::size_t width = file.model.input_dim();
  for (std::size_t t = 0; t < xs.size(); ++t)
    if (xs[t].size() != width)
      throw ernn::DimensionError(fmt::format("input line {} has {} values, model expects {}", t + 1, xs[t].size(), width));

  ernn::rnn::Sequence out;
  if (quantized) {
    if (!file.quant_plan) throw UsageError("model file has no quantization section");
    const ernn::quant::QuantizedNetwork net(file.model, *file.quant_plan);
    for (std::size_t k = 0; k < file.quant_codes.size(); ++k)
      if (net.weight_codes(k).codes != file.quant_codes[k].codes)
        throw ernn::FormatError("stored weight codes do not match the stored weights and plan");
    ernn::quant::SaturationCounter sat;
    out = net.run_sequence(xs, &sat);
    if (sat.rate() > 0.01) std::cerr << fmt::format("warning: {:.2f}% of values saturated\n", 100.0 * sat.rate());
  } else {
    out = ernn::rnn::Network(file.model).run_sequence(xs);
  }
  std::string text;
  for (const auto& y : out) {
    for (std::size_t i = 0; i < y.size(); ++i) text += fmt::format("{}{:.{}g}", i ? " " : "", y[i], precision);
    text += '\n';
  }
  if (compare_dense) {
    const auto dense = ernn::to_dense(file.model, ernn::spec_of(file.model));
    const auto ref = ernn::dense_forward(dense, xs);
    double worst = 0.0;
    for (std::size_t t = 0; t < out.size(); ++t)
      for (std::size_t i = 0; i < out[t].size(); ++i) worst = std::max(worst, std::abs(out[t][i] - ref[t][i]));
    text += fmt::format("# max_abs_deviation_vs_dense={:.6e}\n", worst);
  }
  std::cout << text;
  return kOk;
}

struct CostArgs {
  std::string cell = "lstm";
  std::vector<std::size_t> layers;
  std::size_t input = 0;
  std::size_t projection = 0;
  std::size_t block = 1;
  std::size_t io_block = 0;
  int bits = 12;
  std::uint64_t capacity = 0;
  double reserve = ernn::cost::kDefaultReserve;
  std::uint64_t dsp = 0, lut = 0, dsp_per_pe = 0, lut_per_pe = 0;
  bool structured = false;
};

int cmd_cost(const CostArgs& a) {
  LayerSpec spec;
  spec.cell = parse_cell(a.cell);
  spec.hidden = a.layers;
  spec.input_dim = a.input ? a.input : a.layers.front();
  spec.projection = a.projection;
  spec.block = a.block;
  spec.io_block = a.io_block;
  if (a.bits < 1 || a.bits > 64) throw UsageError("--bits must lie in 1..64");
  if (!(a.reserve >= 0.0 && a.reserve < 1.0)) throw UsageError("--reserve must lie in [0, 1)");
  auto report = ernn::cost::cost_report(spec, a.bits, a.capacity, a.reserve);
  if (a.dsp_per_pe || a.lut_per_pe) report.pes = ernn::cost::pe_count(a.dsp, a.lut, a.dsp_per_pe, a.lut_per_pe);

  std::string text = a.structured ? report.to_structured() : report.to_text();
  text += "# block normalized mults_per_step\n";
  std::optional<std::pair<std::size_t, double>> best;
  for (std::size_t l = 1; l <= 128; l *= 2) {
    LayerSpec s = spec;
    s.block = l;
    s.io_block = 0;
    try {
      s.validate();
    } catch (const ernn::PartitionError&) {
      continue;
    }
    const auto mults = ernn::cost::model_mult_count(s);
    const double ratio = static_cast<double>(mults) / static_cast<double>(report.dense_mults_per_step);
    text += fmt::format("{} {:.9g} {}\n", l, ratio, mults);
    if (!best || ratio < best->second) best = std::pair{l, ratio};
  }
  if (best) text += fmt::format("# sweep_minimum block={} normalized={:.9g}\n", best->first, best->second);
  std::cout << text;
  return kOk;
}

int cmd_explore(const std::string& config_path, std::optional<std::uint64_t> seed) {
  auto j = load_json(config_path);
  ernn::cost::ExploreConfig cfg;
  json exp = json::object();
  for (const auto& [k, v] : j.items()) {
    if (k == "capacity")
      cfg.capacity_bytes = get_or<std::uint64_t>(j, "capacity", 0);
    else if (k == "tolerance")
      cfg.tolerance = get_or<double>(j, "tolerance", 0.0);
    else if (k == "bits")
      cfg.bits = get_or<int>(j, "bits", 12);
    else if (k == "reserve")
      cfg.reserve_fraction = get_or<double>(j, "reserve", cfg.reserve_fraction);
    else if (k == "upper_bound")
      cfg.upper_bound = get_or<std::size_t>(j, "upper_bound", 64);
    else if (kExperimentKeys.count(k))
      exp[k] = v;
    else
      throw UsageError("unknown key '" + k + "' in explore config");
  }
  if (!j.contains("capacity") || !j.contains("tolerance")) throw UsageError("explore config needs capacity and tolerance");
  const auto e = parse_experiment(exp, seed);
  e.train.validate();
  const auto data = e.training_data();
  const auto eval = e.eval_data();

  const ernn::cost::AccuracyOracle oracle = [&](const LayerSpec& s) {
    // The dense baseline has no structure to enforce, so it gets the plain
    // schedule for the same epoch budget.
    const bool dense = s.block == 1 && s.io_block_size() == 1;
    const auto result = run_training(e, s, data, dense);
    const double acc = ernn::evaluate_network(ernn::rnn::Network(result.model), eval).accuracy;
    std::cerr << fmt::format("oracle {} block={} io_block={}: accuracy {:.4f}\n", cell_name(s.cell), s.block,
                             s.io_block_size(), acc);
    return acc;
  };
  const auto r = ernn::cost::phase1_explore(e.spec, oracle, cfg);
  std::cout << r.to_text();
  return r.constraint_violated ? kTargetMissed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-circulant LSTM/GRU training, inference and cost analysis"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override every seed in the config")->type_name("N");

  std::string config, output, trace;
  auto* train = app.add_subcommand("train", "Train a structured model with ADMM");
  train->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output", output, "Model file to write")->required();
  train->add_option("--trace", trace, "Trace file (default: <output>.trace)");

  std::string model, input;
  bool quantized = false, compare_dense = false;
  int precision = 17;
  auto* infer = app.add_subcommand("infer", "Run a model over one input sequence");
  infer->add_option("model", model, "Model file")->required();
  infer->add_option("input", input, "Text file, one input vector per line")->required();
  infer->add_flag("--quantized", quantized, "Use the embedded fixed-point plan");
  infer->add_flag("--compare-dense", compare_dense, "Report the deviation from the dense expansion");
  infer->add_option("--precision", precision, "Significant digits")->check(CLI::Range(1, 17));

  CostArgs cost;
  auto* cost_cmd = app.add_subcommand("cost", "Multiplication count, storage and block-size sweep");
  cost_cmd->add_option("--cell", cost.cell, "lstm or gru")->check(CLI::IsMember({"lstm", "gru"}));
  cost_cmd->add_option("--layers", cost.layers, "Hidden sizes, comma separated")->required()->delimiter(',');
  cost_cmd->add_option("--input", cost.input, "Input width (default: first layer size)");
  cost_cmd->add_option("--projection", cost.projection, "LSTM projection width");
  cost_cmd->add_option("--block", cost.block, "Block size");
  cost_cmd->add_option("--io-block", cost.io_block, "Block size of the input/output matrices");
  cost_cmd->add_option("--bits", cost.bits, "Weight bits");
  cost_cmd->add_option("--capacity", cost.capacity, "On-chip memory in bytes");
  cost_cmd->add_option("--reserve", cost.reserve, "Capacity fraction kept for buffers");
  cost_cmd->add_option("--dsp", cost.dsp, "Total DSP slices");
  cost_cmd->add_option("--lut", cost.lut, "Total LUTs");
  cost_cmd->add_option("--dsp-per-pe", cost.dsp_per_pe, "DSP slices per PE");
  cost_cmd->add_option("--lut-per-pe", cost.lut_per_pe, "LUTs per PE");
  cost_cmd->add_flag("--structured", cost.structured, "key=value output");

  std::string explore_config;
  auto* explore = app.add_subcommand("explore", "Phase-I block size and cell exploration");
  explore->add_option("config", explore_config, "JSON config")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(config, output, trace, seed);
    if (*infer) return cmd_infer(model, input, quantized, compare_dense, precision);
    if (*cost_cmd) return cmd_cost(cost);
    if (*explore) return cmd_explore(explore_config, seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ernn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ernn::DivergenceError& e) {
    std::cerr << "error: " << e.what() << fmt::format(" (last finite objective {:.6g})\n", e.last_finite_objective());
    return kDiverged;
  } catch (const ernn::FormatError& e) {
    std::cerr << "error: corrupt model file: " << e.what() << "\n";
    return kCorrupt;
  } catch (const ernn::PartitionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDimension;
  } catch (const ernn::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDimension;
  } catch (const ernn::InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
