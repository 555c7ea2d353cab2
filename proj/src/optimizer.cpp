#include "masktune/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace masktune {

AdamW::AdamW(ModelParameters& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  for (auto& [name, t] : params.named()) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

double AdamW::current_lr() const {
  if (cfg_.total_steps == 0) return cfg_.learning_rate;
  const double frac = static_cast<double>(t_) / static_cast<double>(cfg_.total_steps);
  return cfg_.learning_rate * std::max(0.0, 1.0 - frac);
}

void AdamW::step() {
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto slots = params_->named();
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Tensor& p = *slots[s].second;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[s];
    auto& v = v_[s];
    const double decay = p.rank() == 2 ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + decay * w[i]);
    }
  }
}

}  // namespace masktune
