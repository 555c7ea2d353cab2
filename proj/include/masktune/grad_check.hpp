#pragma once

#include <functional>
#include <span>

#include "masktune/graph.hpp"

namespace masktune {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Builds a scalar from one input node.
using ScalarFn = std::function<Var(Graph&, Var)>;

/// Compares reverse-mode gradients of f at `point` with central differences.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws std::invalid_argument if f is not scalar or eps lies outside [1e-8, 1e-4].
GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double eps = 1e-6);

/// Same comparison for a tensor mutated in place, e.g. one model parameter.
/// `loss` re-evaluates the scalar at the current value of `target`;
/// `analytic` is the previously computed gradient w.r.t. `target`.
/// `target` is restored bit-for-bit before returning.
GradCheckResult grad_check_inplace(Tensor& target, const std::function<double()>& loss,
                                   std::span<const double> analytic, double eps = 1e-6);

}  // namespace masktune
