#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "masktune/rng.hpp"
#include "masktune/tensor.hpp"

namespace masktune {

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = 0;
};

/// Tape of performed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so node ids are a topological
/// order. backward() walks the tape once in reverse and may only be called
/// once per graph; a second call throws. Gradients of parameter leaves are
/// accumulated into the bound Tensor's grad buffer, so gradients from
/// several graphs add up until the caller zeroes them.
///
/// With grad_enabled == false no backward closures are recorded and
/// parameters are treated as constants (evaluation mode).
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf bound to an external tensor. The tensor must outlive the graph and
  /// must not be modified while the graph is alive.
  Var param(Tensor& t);
  /// Constant leaf owning its value.
  Var constant(Tensor t);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  /// Gradient w.r.t. a node after backward(); empty if the node was not reached.
  std::span<const double> grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Seeds d(loss)/d(loss) = 1 and back-propagates. loss must be a scalar.
  void backward(Var loss);

  // -- operations ---------------------------------------------------------

  /// a[m,k] * b[k,n]; both operands must be rank 2.
  Var matmul(Var a, Var b);
  /// a[m,k] * b[n,k]^T.
  Var matmul_transposed(Var a, Var b);
  /// x[..., k] * w[k, n] -> [..., n]
  Var linear(Var x, Var w);
  Var add(Var a, Var b);
  /// x[..., d] + bias[d]
  Var add_bias(Var x, Var bias);
  Var mul(Var a, Var b);
  Var sum(Var x);
  Var gelu(Var x);
  /// Softmax along `axis` (negative counts from the end).
  Var softmax(Var x, int axis = -1);
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  /// Inverted dropout; identity when rate == 0.
  Var dropout(Var x, double rate, Rng& rng);
  /// Rows of table[V, d] selected by ids -> [ids.size(), d].
  Var embedding(Var table, std::span<const std::int32_t> ids);
  /// Rows of x viewed as [rows, last_dim].
  Var gather_rows(Var x, std::span<const std::size_t> rows);
  /// Output of `x` with a new shape of equal element count.
  Var reshape(Var x, Shape shape);
  /// Multi-head scaled dot-product attention over [batch, seq, d] inputs.
  Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_valid,
                std::size_t n_heads);
  /// Mean over selected rows of -log softmax(logits)[target]. When the mask
  /// selects no rows the result is exactly 0 with zero gradient.
  Var cross_entropy(Var logits, std::span<const std::int32_t> targets,
                    std::span<const std::uint8_t> row_mask = {});
  /// wa*a + wb*b for scalars, accumulated in extended precision and rounded
  /// once. A weight of exactly zero sends no gradient to its operand.
  Var weighted_sum(Var a, Var b, long double wa, long double wb);

 private:
  struct Node {
    Tensor value;
    Tensor* external = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    std::string op;
    std::function<void(Graph&, std::size_t)> backward;
  };

  Var push(Tensor value, std::string op, bool needs_grad,
           std::function<void(Graph&, std::size_t)> backward);
  bool any_needs_grad(std::initializer_list<Var> vars) const;
  const Tensor& val(std::size_t id) const;
  std::span<const double> out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of an input, allocated on first use. Empty span if the
  /// input does not need a gradient.
  std::span<double> in_grad(std::size_t id);
  void check_live(Var v) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

}  // namespace masktune
