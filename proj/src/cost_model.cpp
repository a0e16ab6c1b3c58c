#include "ernn/cost_model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <map>

#include "ernn/circulant.hpp"
#include "ernn/errors.hpp"

namespace ernn::cost {

std::uint64_t layer_mult_count(std::size_t rows, std::size_t cols, std::size_t block_size,
                               fft::ComplexMultCost cost) {
  require_partition(rows, cols, block_size);
  if (!fft::is_power_of_two(block_size)) throw PartitionError("block size must be a power of two");
  const std::uint64_t p = rows / block_size, q = cols / block_size;
  const std::uint64_t f = fft::fft_real_mult_count(block_size, cost);
  return q * f + p * q * fft::spectral_product_mult_count(block_size, cost) + p * f;
}

std::vector<std::pair<std::size_t, double>> normalized_curve(std::size_t rows, std::size_t cols,
                                                             std::size_t max_block) {
  const double dense = static_cast<double>(layer_mult_count(rows, cols, 1));
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t l = 1; l <= max_block; l *= 2) {
    if (rows % l || cols % l) continue;
    out.emplace_back(l, static_cast<double>(layer_mult_count(rows, cols, l)) / dense);
  }
  return out;
}

std::uint64_t model_mult_count(const LayerSpec& spec) {
  std::uint64_t n = 0;
  for (const auto& m : spec.matrices()) n += layer_mult_count(m.rows, m.cols, m.block);
  return n;
}

std::uint64_t pointwise_mult_count(const LayerSpec& spec) {
  std::uint64_t n = 0;
  for (std::size_t h : spec.hidden) n += spec.cell == rnn::CellType::kLstm ? 3 * h : h;
  return n;
}

std::uint64_t parameter_count(const LayerSpec& spec) {
  std::uint64_t n = 0;
  for (const auto& m : spec.matrices()) {
    require_partition(m.rows, m.cols, m.block);
    n += static_cast<std::uint64_t>(m.rows) * m.cols / m.block;
  }
  for (const auto& v : spec.vectors()) n += v.length;
  return n;
}

namespace {

std::uint64_t bits_to_bytes(std::uint64_t values, int bits) {
  if (bits <= 0) throw ConfigError("bit width must be positive");
  return (values * static_cast<std::uint64_t>(bits) + 7) / 8;
}

LayerSpec with_block(LayerSpec spec, std::size_t block) {
  spec.block = block;
  spec.io_block = 0;
  return spec;
}

bool partitions(const LayerSpec& spec) {
  try {
    spec.validate();
    return true;
  } catch (const PartitionError&) {
    return false;
  }
}

double budget(std::uint64_t capacity, double reserve) { return (1.0 - reserve) * static_cast<double>(capacity); }

}  // namespace

std::uint64_t matrix_storage_bytes(std::size_t rows, std::size_t cols, std::size_t block_size, int bits) {
  require_partition(rows, cols, block_size);
  return bits_to_bytes(static_cast<std::uint64_t>(rows) * cols / block_size, bits);
}

std::uint64_t model_storage_bytes(const LayerSpec& spec, int bits) {
  return bits_to_bytes(parameter_count(spec), bits);
}

std::size_t min_block_size_for_capacity(const LayerSpec& spec, int bits, std::uint64_t capacity_bytes,
                                        double reserve_fraction) {
  if (bits <= 0) throw ConfigError("bit width must be positive");
  if (!(reserve_fraction >= 0.0 && reserve_fraction < 1.0)) throw ConfigError("reserve must lie in [0, 1)");
  if (capacity_bytes == 0) throw ConfigError("capacity must be positive");
  for (std::size_t l = 1; l <= 1024; l *= 2) {
    const auto candidate = with_block(spec, l);
    if (!partitions(candidate)) continue;
    if (static_cast<double>(model_storage_bytes(candidate, bits)) <= budget(capacity_bytes, reserve_fraction))
      return l;
  }
  throw InfeasibleError(fmt::format("no block size up to 1024 fits {} bytes with {:.1f}% reserve", capacity_bytes,
                                    100.0 * reserve_fraction));
}

std::uint64_t pe_count(std::uint64_t dsp_total, std::uint64_t lut_total, std::uint64_t dsp_per_pe,
                       std::uint64_t lut_per_pe) {
  if (dsp_per_pe == 0 || lut_per_pe == 0) throw ConfigError("per-PE resource cost must be positive");
  return std::min(dsp_total / dsp_per_pe, lut_total / lut_per_pe);
}

CostReport cost_report(const LayerSpec& spec, int bits, std::uint64_t capacity_bytes, double reserve_fraction) {
  spec.validate();
  CostReport r;
  r.spec = spec;
  r.bits = bits;
  r.mults_per_step = model_mult_count(spec);
  r.dense_mults_per_step = model_mult_count(with_block(spec, 1));
  r.normalized = static_cast<double>(r.mults_per_step) / static_cast<double>(r.dense_mults_per_step);
  r.pointwise_mults = pointwise_mult_count(spec);
  r.parameters = parameter_count(spec);
  r.storage_bytes = model_storage_bytes(spec, bits);
  r.capacity_bytes = capacity_bytes;
  r.reserve_fraction = reserve_fraction;
  r.fits = capacity_bytes == 0 || static_cast<double>(r.storage_bytes) <= budget(capacity_bytes, reserve_fraction);
  if (capacity_bytes) {
    try {
      r.min_block = min_block_size_for_capacity(spec, bits, capacity_bytes, reserve_fraction);
    } catch (const InfeasibleError&) {
    }
  }
  return r;
}

std::string CostReport::to_text() const {
  std::string s;
  auto row = [&s](std::string_view key, const std::string& value) { s += fmt::format("{:<22}{:>16}\n", key, value); };
  row("spec", spec.describe());
  row("bits", std::to_string(bits));
  row("mults/step", std::to_string(mults_per_step));
  row("dense mults/step", std::to_string(dense_mults_per_step));
  row("normalized", fmt::format("{:.6f}", normalized));
  row("pointwise mults/step", std::to_string(pointwise_mults));
  row("parameters", std::to_string(parameters));
  row("storage bytes", std::to_string(storage_bytes));
  if (capacity_bytes) {
    row("capacity bytes", std::to_string(capacity_bytes));
    row("reserve", fmt::format("{:.3f}", reserve_fraction));
    row("fits", fits ? "yes" : "no");
    row("min block for capacity", min_block ? std::to_string(*min_block) : "infeasible");
  }
  if (pes) row("PEs", std::to_string(*pes));
  return s;
}

std::string CostReport::to_structured() const {
  std::string s = "# ernn-cost v1\n";
  s += fmt::format("cell={}\n", spec.cell == rnn::CellType::kLstm ? "lstm" : "gru");
  s += fmt::format("block={}\nio_block={}\nbits={}\n", spec.block, spec.io_block_size(), bits);
  s += fmt::format("mults_per_step={}\ndense_mults_per_step={}\nnormalized={:.9g}\n", mults_per_step,
                   dense_mults_per_step, normalized);
  s += fmt::format("pointwise_mults={}\nparameters={}\nstorage_bytes={}\n", pointwise_mults, parameters,
                   storage_bytes);
  if (capacity_bytes) {
    s += fmt::format("capacity_bytes={}\nreserve={:.9g}\nfits={}\n", capacity_bytes, reserve_fraction, fits ? 1 : 0);
    s += fmt::format("min_block={}\n", min_block ? std::to_string(*min_block) : "infeasible");
  }
  if (pes) s += fmt::format("pes={}\n", *pes);
  return s;
}

namespace {

class Explorer {
 public:
  Explorer(const AccuracyOracle& oracle, const ExploreConfig& cfg, ExplorationResult& out)
      : oracle_(oracle), cfg_(cfg), out_(out) {}

  bool fits(const LayerSpec& s) const {
    return static_cast<double>(model_storage_bytes(s, cfg_.bits)) <= budget(cfg_.capacity_bytes, cfg_.reserve_fraction);
  }

  // Specs already scored are not sent to the oracle again.
  double evaluate(int step, std::string action, const LayerSpec& s) {
    const auto key = s.describe();
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      const double v = oracle_(s);
      ++out_.oracle_calls;
      if (!std::isfinite(v)) throw NumericError("accuracy oracle returned a non-finite value");
      it = cache_.emplace(key, v).first;
    }
    const double v = it->second;
    out_.log.push_back({step, std::move(action), s, v, model_storage_bytes(s, cfg_.bits), false});
    return v;
  }

  bool passes(double v) const { return out_.baseline - v <= cfg_.tolerance; }

  void skip(int step, std::string action, const LayerSpec& s) {
    out_.log.push_back({step, std::move(action), s, std::nullopt, partitions(s) ? model_storage_bytes(s, cfg_.bits) : 0,
                        false});
  }

 private:
  const AccuracyOracle& oracle_;
  const ExploreConfig& cfg_;
  ExplorationResult& out_;
  std::map<std::string, double> cache_;
};

}  // namespace

ExplorationResult phase1_explore(const LayerSpec& base, const AccuracyOracle& oracle, const ExploreConfig& cfg) {
  if (!oracle) throw ConfigError("explorer needs an accuracy oracle");
  if (!fft::is_power_of_two(cfg.upper_bound)) throw ConfigError("upper bound must be a power of two");
  if (!(cfg.tolerance >= 0.0)) throw ConfigError("tolerance must be non-negative");

  ExplorationResult r;
  Explorer ex(oracle, cfg, r);
  LayerSpec lstm = base;
  lstm.cell = rnn::CellType::kLstm;

  // Step 1: storage lower bound, and the dense baseline metric.
  r.lower_bound = min_block_size_for_capacity(lstm, cfg.bits, cfg.capacity_bytes, cfg.reserve_fraction);
  r.upper_bound = std::max(cfg.upper_bound, r.lower_bound);
  r.baseline = ex.evaluate(1, "baseline", with_block(lstm, 1));

  // Step 2: binary search for the largest passing block size, assuming the
  // metric falls as the block size grows.
  std::vector<std::size_t> candidates;
  for (std::size_t l = r.lower_bound; l <= r.upper_bound; l *= 2)
    if (partitions(with_block(lstm, l))) candidates.push_back(l);
  std::map<std::size_t, double> seen;
  std::ptrdiff_t lo = -1, hi = static_cast<std::ptrdiff_t>(candidates.size());
  while (hi - lo > 1) {
    const std::ptrdiff_t mid = lo + (hi - lo) / 2;
    const auto s = with_block(lstm, candidates[static_cast<std::size_t>(mid)]);
    const double v = ex.evaluate(2, "block", s);
    seen[s.block] = v;
    if (ex.passes(v)) {
      r.log.back().accepted = true;
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (lo < 0) {
    r.spec = with_block(lstm, r.lower_bound);
    if (auto it = seen.find(r.lower_bound); it != seen.end()) r.metric = it->second;
    r.constraint_violated = true;
    return r;
  }
  r.spec = with_block(lstm, candidates[static_cast<std::size_t>(lo)]);
  r.metric = seen.at(r.spec.block);

  // Step 3: GRU at the chosen block size, then one doubled io block size.
  LayerSpec gru = r.spec;
  gru.cell = rnn::CellType::kGru;
  gru.projection = 0;
  if (partitions(gru) && ex.fits(gru)) {
    const double v = ex.evaluate(3, "gru", gru);
    if (ex.passes(v)) {
      r.log.back().accepted = true;
      r.spec = gru;
      r.metric = v;
    }
  } else {
    ex.skip(3, "gru", gru);
  }
  LayerSpec wide = r.spec;
  wide.io_block = 2 * r.spec.block;
  bool has_io = false;
  for (const auto& m : wide.matrices()) has_io = has_io || m.block == wide.io_block;
  if (has_io && partitions(wide) && ex.fits(wide)) {
    const double v = ex.evaluate(3, "io_block", wide);
    if (ex.passes(v)) {
      r.log.back().accepted = true;
      r.spec = wide;
      r.metric = v;
    }
  } else {
    ex.skip(3, "io_block", wide);
  }
  return r;
}

std::string ExplorationResult::to_text() const {
  std::string s = fmt::format("# lower_bound={} upper_bound={} baseline={:.6g} oracle_calls={}\n", lower_bound,
                              upper_bound, baseline, oracle_calls);
  s += "# step action cell block io_block storage_bytes metric accepted\n";
  for (const auto& e : log)
    s += fmt::format("{} {} {} {} {} {} {} {}\n", e.step, e.action,
                     e.spec.cell == rnn::CellType::kLstm ? "lstm" : "gru", e.spec.block, e.spec.io_block_size(),
                     e.storage_bytes, e.metric ? fmt::format("{:.6g}", *e.metric) : "skipped",
                     e.accepted ? 1 : 0);
  s += fmt::format("# result {} block={} io_block={} constraint_violated={}\n",
                   spec.cell == rnn::CellType::kLstm ? "lstm" : "gru", spec.block, spec.io_block_size(),
                   constraint_violated ? 1 : 0);
  return s;
}

}  // namespace ernn::cost
