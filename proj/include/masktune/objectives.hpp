#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "masktune/graph.hpp"
#include "masktune/tokenizer.hpp"

namespace masktune {

/// Per-batch losses. l_masktuning == alpha * l_mlm + (1 - alpha) * l_ft.
struct LossBreakdown {
  double l_mlm = 0.0;
  double l_ft = 0.0;
  double l_masktuning = 0.0;
  double alpha = 0.0;

  bool finite() const;
};

/// alpha * l_mlm + (1 - alpha) * l_ft, the single expression both the graph
/// node and plain-number callers use.
double combine_losses(double l_mlm, double l_ft, double alpha);

/// Mean cross-entropy over masked positions. With no positions (logits
/// absent) the loss is an exact 0 constant.
Var mlm_loss(Graph& g, std::optional<Var> logits, std::span<const TokenId> targets);

/// Mean cross-entropy of classifier logits against ground-truth labels.
Var ft_loss(Graph& g, Var logits, std::span<const std::int32_t> labels);

struct IntegratedLoss {
  Var total;
  LossBreakdown breakdown;
};

/// Weighted aggregation of the two objectives. Throws std::invalid_argument
/// if alpha is outside [0, 1].
IntegratedLoss integrated_loss(Graph& g, Var l_mlm, Var l_ft, double alpha);

/// Batches where each loss fell below the threshold. Diagnostic only: the
/// optimized objective never depends on these counts.
struct ScenarioCounts {
  static constexpr double kThreshold = 0.1;
  std::size_t batches = 0;
  std::size_t mlm_small = 0;
  std::size_t ft_small = 0;
  std::size_t both_small = 0;

  void add(const LossBreakdown& b);
};

}  // namespace masktune
