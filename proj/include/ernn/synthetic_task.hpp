#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ernn/rnn_cells.hpp"

namespace ernn {

/// One training sequence. targets[t] < 0 marks a step that is not scored.
struct Example {
  rnn::Sequence inputs;
  std::vector<int> targets;
};

using Dataset = std::vector<Example>;

/// Copy-memory task: `length` random symbols, `delay` blank steps, a recall
/// marker, then `length` blank steps during which the model must emit the
/// symbols in order. Only the recall steps are scored.
///
/// Inputs are one-hot: [symbols..., blank, marker, zero padding...].
struct CopyTask {
  std::size_t symbols = 4;
  std::size_t length = 3;
  std::size_t delay = 4;
  std::size_t input_dim = 0;  // 0 = symbols + 2

  std::size_t min_input_dim() const noexcept { return symbols + 2; }
  std::size_t effective_input_dim() const noexcept { return input_dim ? input_dim : min_input_dim(); }
  std::size_t steps() const noexcept { return 2 * length + delay + 1; }
  std::size_t classes() const noexcept { return symbols; }

  Dataset generate(std::size_t count, std::uint64_t seed) const;
};

struct TaskMetrics {
  double loss = 0.0;      // mean cross-entropy over scored steps
  double accuracy = 0.0;  // fraction of scored steps whose arg-max is right
  std::size_t scored = 0;
};

/// Softmax cross-entropy and accuracy of per-step logits.
TaskMetrics score_logits(const std::vector<rnn::Sequence>& logits, const Dataset& data);

/// Runs an inference network over a dataset and scores it.
TaskMetrics evaluate_network(const rnn::Network& net, const Dataset& data);

}  // namespace ernn
