#include "masktune/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace masktune {

bool LossBreakdown::finite() const {
  return std::isfinite(l_mlm) && std::isfinite(l_ft) && std::isfinite(l_masktuning);
}

double combine_losses(double l_mlm, double l_ft, double alpha) {
  return static_cast<double>(static_cast<long double>(alpha) * l_mlm + (1.0L - alpha) * l_ft);
}

Var mlm_loss(Graph& g, std::optional<Var> logits, std::span<const TokenId> targets) {
  if (!logits) {
    if (!targets.empty()) throw std::invalid_argument("mlm_loss: targets without logits");
    return g.constant(Tensor({1}, 0.0));
  }
  return g.cross_entropy(*logits, targets);
}

Var ft_loss(Graph& g, Var logits, std::span<const std::int32_t> labels) {
  return g.cross_entropy(logits, labels);
}

IntegratedLoss integrated_loss(Graph& g, Var l_mlm, Var l_ft, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  IntegratedLoss out;
  out.total = g.weighted_sum(l_mlm, l_ft, alpha, 1.0L - alpha);
  out.breakdown.l_mlm = g.scalar(l_mlm);
  out.breakdown.l_ft = g.scalar(l_ft);
  out.breakdown.l_masktuning = g.scalar(out.total);
  out.breakdown.alpha = alpha;
  return out;
}

void ScenarioCounts::add(const LossBreakdown& b) {
  ++batches;
  const bool m = b.l_mlm < kThreshold;
  const bool f = b.l_ft < kThreshold;
  mlm_small += m ? 1 : 0;
  ft_small += f ? 1 : 0;
  both_small += (m && f) ? 1 : 0;
}

}  // namespace masktune
