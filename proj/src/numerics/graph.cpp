#include "masktune/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "masktune/kernels.hpp"

namespace masktune {

namespace {

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

std::size_t leading_rows(const Tensor& t) { return t.size() / last_dim(t); }

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Graph::push(Tensor value, std::string op, bool needs_grad,
                std::function<void(Graph&, std::size_t)> backward) {
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.needs_grad = needs_grad && grad_enabled_;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

bool Graph::any_needs_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return nodes_[v.id].needs_grad; });
}

void Graph::check_live(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph variable out of range");
}

const Tensor& Graph::val(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

std::span<double> Graph::in_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return {};
  if (n.external) return n.external->grad();
  if (n.grad.empty()) n.grad.assign(val(id).size(), 0.0);
  return n.grad;
}

Var Graph::param(Tensor& t) {
  Node n;
  n.external = &t;
  n.op = "param";
  n.needs_grad = grad_enabled_ && t.requires_grad();
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(Tensor t) { return push(std::move(t), "constant", false, nullptr); }

const Tensor& Graph::value(Var v) const {
  check_live(v);
  return val(v.id);
}

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ShapeError("expected a scalar, got shape " + shape_str(t.shape()));
  return t[0];
}

std::span<const double> Graph::grad(Var v) const {
  check_live(v);
  const Node& n = nodes_[v.id];
  if (n.external) return n.external->grad();
  return n.grad;
}

void Graph::backward(Var loss) {
  check_live(loss);
  if (backward_done_) throw std::logic_error("backward() already ran on this graph");
  if (!grad_enabled_) throw std::logic_error("backward() on a graph built without gradients");
  if (value(loss).size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  backward_done_ = true;
  Node& root = nodes_[loss.id];
  if (!root.needs_grad) return;
  if (root.external) {
    root.external->grad()[0] += 1.0;
    return;
  }
  root.grad.assign(1, 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b) {
  check_live(a);
  check_live(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(A.data(), B.data(), out.data(), m, k, n, false);
  return push(std::move(out), "matmul", any_needs_grad({a, b}),
              [a, b, m, k, n](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                if (auto da = g.in_grad(a.id); !da.empty()) {
                  kernels::gemm_nt(dy, g.val(b.id).data(), da, m, n, k, true);
                }
                if (auto db = g.in_grad(b.id); !db.empty()) {
                  kernels::gemm_tn(g.val(a.id).data(), dy, db, m, k, n, true);
                }
              });
}

Var Graph::matmul_transposed(Var a, Var b) {
  check_live(a);
  check_live(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    throw ShapeError("matmul_transposed shape mismatch: " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()) + "^T");
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor out({m, n});
  kernels::gemm_nt(A.data(), B.data(), out.data(), m, k, n, false);
  return push(std::move(out), "matmul_transposed", any_needs_grad({a, b}),
              [a, b, m, k, n](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                if (auto da = g.in_grad(a.id); !da.empty()) {
                  kernels::gemm_nn(dy, g.val(b.id).data(), da, m, n, k, true);
                }
                if (auto db = g.in_grad(b.id); !db.empty()) {
                  kernels::gemm_tn(dy, g.val(a.id).data(), db, m, n, k, true);
                }
              });
}

Var Graph::linear(Var x, Var w) {
  check_live(x);
  check_live(w);
  const Tensor& X = val(x.id);
  const Tensor& W = val(w.id);
  if (W.rank() != 2 || last_dim(X) != W.dim(0)) {
    throw ShapeError("linear shape mismatch: " + shape_str(X.shape()) + " x " +
                     shape_str(W.shape()));
  }
  const std::size_t m = leading_rows(X), k = W.dim(0), n = W.dim(1);
  Shape shape = X.shape();
  shape.back() = n;
  Tensor out(std::move(shape));
  kernels::gemm_nn(X.data(), W.data(), out.data(), m, k, n, false);
  return push(std::move(out), "linear", any_needs_grad({x, w}),
              [x, w, m, k, n](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                if (auto dx = g.in_grad(x.id); !dx.empty()) {
                  kernels::gemm_nt(dy, g.val(w.id).data(), dx, m, n, k, true);
                }
                if (auto dw = g.in_grad(w.id); !dw.empty()) {
                  kernels::gemm_tn(g.val(x.id).data(), dy, dw, m, k, n, true);
                }
              });
}

Var Graph::add(Var a, Var b) {
  check_live(a);
  check_live(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.shape() != B.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  }
  Tensor out = A;
  out.set_requires_grad(false);
  add_into(out.data(), B.data());
  return push(std::move(out), "add", any_needs_grad({a, b}), [a, b](Graph& g, std::size_t self) {
    auto dy = g.out_grad(self);
    if (auto da = g.in_grad(a.id); !da.empty()) add_into(da, dy);
    if (auto db = g.in_grad(b.id); !db.empty()) add_into(db, dy);
  });
}

Var Graph::add_bias(Var x, Var bias) {
  check_live(x);
  check_live(bias);
  const Tensor& X = val(x.id);
  const Tensor& Bv = val(bias.id);
  const std::size_t d = last_dim(X);
  if (Bv.size() != d) {
    throw ShapeError("add_bias shape mismatch: " + shape_str(X.shape()) + " + " +
                     shape_str(Bv.shape()));
  }
  Tensor out(X.shape(), std::vector<double>(X.values()));
  const std::size_t rows = leading_rows(X);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += Bv[j];
  }
  return push(std::move(out), "add_bias", any_needs_grad({x, bias}),
              [x, bias, rows, d](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                if (auto dx = g.in_grad(x.id); !dx.empty()) add_into(dx, dy);
                if (auto db = g.in_grad(bias.id); !db.empty()) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
                  }
                }
              });
}

Var Graph::mul(Var a, Var b) {
  check_live(a);
  check_live(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.shape() != B.shape()) {
    throw ShapeError("mul shape mismatch: " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  }
  Tensor out(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return push(std::move(out), "mul", any_needs_grad({a, b}), [a, b](Graph& g, std::size_t self) {
    auto dy = g.out_grad(self);
    const auto& av = g.val(a.id);
    const auto& bv = g.val(b.id);
    if (auto da = g.in_grad(a.id); !da.empty()) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (auto db = g.in_grad(b.id); !db.empty()) {
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var Graph::sum(Var x) {
  check_live(x);
  double s = 0.0;
  for (double v : val(x.id).data()) s += v;
  return push(Tensor({1}, {s}), "sum", any_needs_grad({x}), [x](Graph& g, std::size_t self) {
    const double dy = g.out_grad(self)[0];
    for (double& d : g.in_grad(x.id)) d += dy;
  });
}

Var Graph::gelu(Var x) {
  check_live(x);
  const Tensor& X = val(x.id);
  Tensor out(X.shape());
  kernels::gelu_forward(X.data(), out.data());
  return push(std::move(out), "gelu", any_needs_grad({x}), [x](Graph& g, std::size_t self) {
    kernels::gelu_backward(g.out_grad(self), g.val(x.id).data(), g.in_grad(x.id));
  });
}

Var Graph::softmax(Var x, int axis) {
  check_live(x);
  const Tensor& X = val(x.id);
  const int rank = static_cast<int>(X.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("softmax axis out of range for " + shape_str(X.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= X.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= X.dim(i);
  const std::size_t n = X.dim(ax);
  Tensor out(X.shape());
  if (inner == 1) {
    kernels::softmax_rows(X.data(), out.data(), outer, n);
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double mx = X[base];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, X[base + j * inner]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          out[base + j * inner] = std::exp(X[base + j * inner] - mx);
          s += out[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
      }
    }
  }
  return push(std::move(out), "softmax", any_needs_grad({x}),
              [x, outer, inner, n](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                const auto& y = g.nodes_[self].value;
                auto dx = g.in_grad(x.id);
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n * inner + i;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < n; ++j) {
                      dx[base + j * inner] += y[base + j * inner] * (dy[base + j * inner] - dot);
                    }
                  }
                }
              });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
  check_live(x);
  check_live(gain);
  check_live(bias);
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm eps must be positive");
  const Tensor& X = val(x.id);
  const std::size_t d = last_dim(X);
  if (val(gain.id).size() != d || val(bias.id).size() != d) {
    throw ShapeError("layer_norm gain/bias must have length " + std::to_string(d));
  }
  const std::size_t rows = leading_rows(X);
  Tensor out(X.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  std::span<double> mean(stats->data(), rows);
  std::span<double> rstd(stats->data() + rows, rows);
  kernels::layer_norm_forward(X.data(), val(gain.id).data(), val(bias.id).data(), out.data(), mean,
                              rstd, rows, d, eps);
  return push(std::move(out), "layer_norm", any_needs_grad({x, gain, bias}),
              [x, gain, bias, rows, d, stats](Graph& g, std::size_t self) {
                std::span<const double> mean(stats->data(), rows);
                std::span<const double> rstd(stats->data() + rows, rows);
                kernels::layer_norm_backward(g.out_grad(self), g.val(x.id).data(),
                                             g.val(gain.id).data(), mean, rstd, g.in_grad(x.id),
                                             g.in_grad(gain.id), g.in_grad(bias.id), rows, d);
              });
}

Var Graph::dropout(Var x, double rate, Rng& rng) {
  check_live(x);
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (rate == 0.0) return x;
  const Tensor& X = val(x.id);
  auto keep = std::make_shared<std::vector<double>>(X.size());
  const double scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution bern(1.0 - rate);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*keep)[i] = bern(rng) ? scale : 0.0;
    out[i] = X[i] * (*keep)[i];
  }
  return push(std::move(out), "dropout", any_needs_grad({x}), [x, keep](Graph& g, std::size_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.in_grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * (*keep)[i];
  });
}

Var Graph::embedding(Var table, std::span<const std::int32_t> ids) {
  check_live(table);
  const Tensor& T = val(table.id);
  if (T.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(T.shape()));
  if (ids.empty()) throw ShapeError("embedding lookup with no ids");
  const std::size_t V = T.dim(0), d = T.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw std::out_of_range("embedding id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(V) + " rows");
    }
    std::copy_n(T.data().begin() + ids[i] * d, d, out.data().begin() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return push(std::move(out), "embedding", any_needs_grad({table}),
              [table, d, saved = std::move(saved)](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                auto dt = g.in_grad(table.id);
                for (std::size_t i = 0; i < saved.size(); ++i) {
                  double* row = dt.data() + static_cast<std::size_t>(saved[i]) * d;
                  for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
                }
              });
}

Var Graph::gather_rows(Var x, std::span<const std::size_t> rows) {
  check_live(x);
  const Tensor& X = val(x.id);
  const std::size_t d = last_dim(X), n = leading_rows(X);
  if (rows.empty()) throw ShapeError("gather_rows with no rows");
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw std::out_of_range("row " + std::to_string(rows[i]) + " outside " + std::to_string(n) +
                              " rows");
    }
    std::copy_n(X.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return push(std::move(out), "gather_rows", any_needs_grad({x}),
              [x, d, saved = std::move(saved)](Graph& g, std::size_t self) {
                auto dy = g.out_grad(self);
                auto dx = g.in_grad(x.id);
                for (std::size_t i = 0; i < saved.size(); ++i) {
                  for (std::size_t j = 0; j < d; ++j) dx[saved[i] * d + j] += dy[i * d + j];
                }
              });
}

Var Graph::reshape(Var x, Shape shape) {
  check_live(x);
  const Tensor& X = val(x.id);
  Tensor out(std::move(shape), std::vector<double>(X.values()));
  return push(std::move(out), "reshape", any_needs_grad({x}), [x](Graph& g, std::size_t self) {
    add_into(g.in_grad(x.id), g.out_grad(self));
  });
}

Var Graph::attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_valid,
                     std::size_t n_heads) {
  check_live(q);
  check_live(k);
  check_live(v);
  const Tensor& Q = val(q.id);
  if (Q.rank() != 3 || val(k.id).shape() != Q.shape() || val(v.id).shape() != Q.shape()) {
    throw ShapeError("attention expects equal [batch, seq, d] inputs, got " + shape_str(Q.shape()));
  }
  if (n_heads == 0 || Q.dim(2) % n_heads != 0) {
    throw ShapeError("attention: d=" + std::to_string(Q.dim(2)) + " not divisible by heads=" +
                     std::to_string(n_heads));
  }
  AttentionDims dims{Q.dim(0), Q.dim(1), n_heads, Q.dim(2) / n_heads};
  if (key_valid.size() != dims.batch * dims.seq) {
    throw ShapeError("attention key mask must have batch*seq entries");
  }
  for (std::size_t b = 0; b < dims.batch; ++b) {
    if (std::none_of(key_valid.begin() + b * dims.seq, key_valid.begin() + (b + 1) * dims.seq,
                     [](std::uint8_t m) { return m != 0; })) {
      throw std::invalid_argument("attention row " + std::to_string(b) + " has no valid keys");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(dims.probs_size());
  Tensor out(Q.shape());
  kernels::attention_forward(Q.data(), val(k.id).data(), val(v.id).data(), key_valid, *probs,
                             out.data(), dims);
  return push(std::move(out), "attention", any_needs_grad({q, k, v}),
              [q, k, v, dims, probs](Graph& g, std::size_t self) {
                const std::size_t n = g.val(q.id).size();
                std::vector<double> dq(n, 0.0), dk(n, 0.0), dv(n, 0.0);
                kernels::attention_backward(g.out_grad(self), g.val(q.id).data(),
                                            g.val(k.id).data(), g.val(v.id).data(), *probs, dq, dk,
                                            dv, dims);
                if (auto d = g.in_grad(q.id); !d.empty()) add_into(d, dq);
                if (auto d = g.in_grad(k.id); !d.empty()) add_into(d, dk);
                if (auto d = g.in_grad(v.id); !d.empty()) add_into(d, dv);
              });
}

Var Graph::cross_entropy(Var logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> row_mask) {
  check_live(logits);
  const Tensor& L = val(logits.id);
  if (L.rank() != 2) throw ShapeError("cross_entropy expects [batch, classes], got " + shape_str(L.shape()));
  const std::size_t b = L.dim(0), n = L.dim(1);
  if (targets.size() != b) throw ShapeError("cross_entropy: one target per row required");
  if (!row_mask.empty() && row_mask.size() != b) throw ShapeError("cross_entropy: mask length must equal rows");
  std::vector<std::uint8_t> use(b, 1);
  if (!row_mask.empty()) std::copy(row_mask.begin(), row_mask.end(), use.begin());
  std::size_t count = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw std::out_of_range("cross_entropy target " + std::to_string(targets[r]) +
                              " outside [0," + std::to_string(n) + ")");
    }
    count += use[r] ? 1 : 0;
  }
  if (count == 0) return constant(Tensor({1}, 0.0));

  auto probs = std::make_shared<std::vector<double>>(b * n);
  kernels::softmax_rows(L.data(), *probs, b, n);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (!use[r]) continue;
    const double* lr = L.data().data() + r * n;
    double mx = lr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, lr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(lr[j] - mx);
    total += -(lr[targets[r]] - mx - std::log(s));
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return push(Tensor({1}, {total * inv}), "cross_entropy", any_needs_grad({logits}),
              [logits, b, n, inv, probs, use = std::move(use), saved = std::move(saved)](
                  Graph& g, std::size_t self) {
                const double dy = g.out_grad(self)[0] * inv;
                auto dl = g.in_grad(logits.id);
                for (std::size_t r = 0; r < b; ++r) {
                  if (!use[r]) continue;
                  for (std::size_t j = 0; j < n; ++j) {
                    const double onehot = static_cast<std::int32_t>(j) == saved[r] ? 1.0 : 0.0;
                    dl[r * n + j] += dy * ((*probs)[r * n + j] - onehot);
                  }
                }
              });
}

Var Graph::weighted_sum(Var a, Var b, long double wa, long double wb) {
  check_live(a);
  check_live(b);
  if (val(a.id).size() != 1 || val(b.id).size() != 1) {
    throw ShapeError("weighted_sum expects scalar operands");
  }
  const auto out = static_cast<double>(wa * val(a.id)[0] + wb * val(b.id)[0]);
  return push(Tensor({1}, {out}), "weighted_sum", any_needs_grad({a, b}),
              [a, b, wa = static_cast<double>(wa), wb = static_cast<double>(wb)](Graph& g,
                                                                              std::size_t self) {
                const double dy = g.out_grad(self)[0];
                if (wa != 0.0) {
                  if (auto da = g.in_grad(a.id); !da.empty()) da[0] += wa * dy;
                }
                if (wb != 0.0) {
                  if (auto db = g.in_grad(b.id); !db.empty()) db[0] += wb * dy;
                }
              });
}

}  // namespace masktune
