#pragma once

#include <cstddef>
#include <vector>

#include "masktune/model.hpp"

namespace masktune {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Learning rate decays linearly to 0 over this many steps; 0 disables decay.
  std::size_t total_steps = 0;
};

/// Adam with decoupled weight decay. Decay applies to matrices only (not to
/// biases or layer-norm gains). Every tensor is stepped every call, including
/// ones whose gradient is zero.
class AdamW {
 public:
  AdamW(ModelParameters& params, AdamConfig cfg);

  void step();
  std::size_t steps() const { return t_; }
  double current_lr() const;

 private:
  ModelParameters* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace masktune
