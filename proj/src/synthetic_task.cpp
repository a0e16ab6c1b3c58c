#include "ernn/synthetic_task.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ernn/errors.hpp"

namespace ernn {

Dataset CopyTask::generate(std::size_t count, std::uint64_t seed) const {
  const std::size_t dim = effective_input_dim();
  if (symbols < 2 || length == 0 || dim < min_input_dim())
    throw ConfigError("copy task needs >= 2 symbols, length >= 1 and input_dim >= symbols + 2");
  std::mt19937_64 rng(seed);
  const std::size_t blank = symbols;
  const std::size_t marker = symbols + 1;
  Dataset out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Example ex;
    ex.inputs.assign(steps(), std::vector<double>(dim, 0.0));
    ex.targets.assign(steps(), -1);
    std::vector<std::size_t> seq(length);
    for (auto& s : seq) s = static_cast<std::size_t>(rng() % symbols);
    for (std::size_t t = 0; t < steps(); ++t) {
      if (t < length)
        ex.inputs[t][seq[t]] = 1.0;
      else if (t == length + delay)
        ex.inputs[t][marker] = 1.0;
      else
        ex.inputs[t][blank] = 1.0;
    }
    for (std::size_t k = 0; k < length; ++k) ex.targets[length + delay + 1 + k] = static_cast<int>(seq[k]);
    out.push_back(std::move(ex));
  }
  return out;
}

TaskMetrics score_logits(const std::vector<rnn::Sequence>& logits, const Dataset& data) {
  if (logits.size() != data.size()) throw DimensionError("one logit sequence per example expected");
  TaskMetrics m;
  double total = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t t = 0; t < data[n].targets.size(); ++t) {
      const int target = data[n].targets[t];
      if (target < 0) continue;
      const auto& z = logits[n][t];
      const double zmax = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - zmax);
      total += std::log(sum) + zmax - z[static_cast<std::size_t>(target)];
      const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
      correct += best == target ? 1 : 0;
      ++m.scored;
    }
  }
  if (m.scored) {
    m.loss = total / static_cast<double>(m.scored);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.scored);
  }
  return m;
}

TaskMetrics evaluate_network(const rnn::Network& net, const Dataset& data) {
  std::vector<rnn::Sequence> logits;
  logits.reserve(data.size());
  for (const auto& ex : data) logits.push_back(net.run_sequence(ex.inputs));
  return score_logits(logits, data);
}

}  // namespace ernn
