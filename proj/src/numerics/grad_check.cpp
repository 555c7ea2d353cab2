#include "masktune/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace masktune {

namespace {
void check_eps(double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) {
    throw std::invalid_argument("grad_check eps must lie in [1e-8, 1e-4]");
  }
}

double scalar_of(Graph& g, Var y) {
  if (g.value(y).size() != 1) {
    throw std::invalid_argument("grad_check needs a scalar function, got shape " +
                                shape_str(g.value(y).shape()));
  }
  return g.value(y)[0];
}
}  // namespace

GradCheckResult grad_check_inplace(Tensor& target, const std::function<double()>& loss,
                                   std::span<const double> analytic, double eps) {
  check_eps(eps);
  if (analytic.size() != target.size()) {
    throw std::invalid_argument("grad_check: analytic gradient has the wrong length");
  }
  GradCheckResult res;
  res.coordinates = target.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double orig = target[i];
    target[i] = orig + eps;
    const double up = loss();
    target[i] = orig - eps;
    const double down = loss();
    target[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (!(err <= res.max_rel_error)) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
  }
  return res;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  check_eps(eps);
  Tensor x(point.shape(), std::vector<double>(point.values()));
  x.set_requires_grad(true);
  {
    Graph g;
    Var y = f(g, g.param(x));
    scalar_of(g, y);
    g.backward(y);
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  auto eval = [&] {
    Graph g(false);
    return scalar_of(g, f(g, g.param(x)));
  };
  return grad_check_inplace(x, eval, analytic, eps);
}

}  // namespace masktune
