#include <gtest/gtest.h>

#include <cmath>

#include "masktune/grad_check.hpp"
#include "support.hpp"

using namespace masktune;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-6;

// Weighted sum with fixed random weights so every output coordinate matters.
Var project(Graph& g, Var y, std::uint64_t seed) {
  const Tensor& v = g.value(y);
  return g.sum(g.mul(y, g.constant(random_tensor(v.shape(), seed))));
}

void expect_grad_ok(const ScalarFn& f, const Tensor& point, double tol = kTol) {
  const auto r = grad_check(f, point);
  EXPECT_LT(r.max_rel_error, tol) << "worst coordinate " << r.worst_index << " of " << r.coordinates;
  EXPECT_EQ(r.coordinates, point.size());
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A function whose tape is correct must pass; perturbing the analytic
  // gradient through grad_check_inplace must fail.
  Tensor x = random_tensor({5}, 1);
  auto loss = [&] {
    double s = 0.0;
    for (double v : x.data()) s += v * v * v;
    return s;
  };
  std::vector<double> good(5), bad(5);
  for (std::size_t i = 0; i < 5; ++i) {
    good[i] = 3.0 * x[i] * x[i];
    bad[i] = good[i] * 1.01;
  }
  const Tensor before = x;
  EXPECT_LT(grad_check_inplace(x, loss, good).max_rel_error, 1e-7);
  EXPECT_GT(grad_check_inplace(x, loss, bad).max_rel_error, 1e-3);
  EXPECT_EQ(x.values(), before.values());
}

TEST(GradCheck, RejectsBadArguments) {
  const Tensor p = random_tensor({3}, 1);
  auto identity = [](Graph&, Var x) { return x; };
  EXPECT_THROW(grad_check(identity, p), std::invalid_argument);
  auto ok = [](Graph& g, Var x) { return g.sum(x); };
  EXPECT_THROW(grad_check(ok, p, 1e-2), std::invalid_argument);
  EXPECT_THROW(grad_check(ok, p, 1e-10), std::invalid_argument);
}

TEST(GradCheckOps, Matmul) {
  const Tensor b = random_tensor({4, 3}, 2);
  expect_grad_ok([&](Graph& g, Var a) { return project(g, g.matmul(a, g.constant(b)), 9); },
                 random_tensor({2, 4}, 1));
  const Tensor a = random_tensor({2, 4}, 3);
  expect_grad_ok([&](Graph& g, Var bb) { return project(g, g.matmul(g.constant(a), bb), 9); },
                 random_tensor({4, 3}, 4));
}

TEST(GradCheckOps, MatmulTransposed) {
  const Tensor b = random_tensor({5, 4}, 2);
  expect_grad_ok(
      [&](Graph& g, Var a) { return project(g, g.matmul_transposed(a, g.constant(b)), 9); },
      random_tensor({3, 4}, 1));
  const Tensor a = random_tensor({3, 4}, 3);
  expect_grad_ok(
      [&](Graph& g, Var bb) { return project(g, g.matmul_transposed(g.constant(a), bb), 9); },
      random_tensor({5, 4}, 4));
}

TEST(GradCheckOps, Linear) {
  const Tensor w = random_tensor({4, 3}, 2);
  expect_grad_ok([&](Graph& g, Var x) { return project(g, g.linear(x, g.constant(w)), 9); },
                 random_tensor({2, 3, 4}, 1));
  const Tensor x = random_tensor({2, 3, 4}, 3);
  expect_grad_ok([&](Graph& g, Var ww) { return project(g, g.linear(g.constant(x), ww), 9); },
                 random_tensor({4, 3}, 4));
}

TEST(GradCheckOps, AddMulAddBias) {
  const Tensor other = random_tensor({3, 4}, 2);
  expect_grad_ok([&](Graph& g, Var a) { return project(g, g.add(a, g.constant(other)), 9); },
                 random_tensor({3, 4}, 1));
  expect_grad_ok([&](Graph& g, Var a) { return project(g, g.mul(a, g.constant(other)), 9); },
                 random_tensor({3, 4}, 1));
  expect_grad_ok([](Graph& g, Var a) { return project(g, g.mul(a, a), 9); },
                 random_tensor({3, 4}, 1));
  expect_grad_ok([&](Graph& g, Var b) { return project(g, g.add_bias(g.constant(other), b), 9); },
                 random_tensor({4}, 5));
  expect_grad_ok([](Graph& g, Var x) { return g.sum(x); }, random_tensor({6}, 6));
}

TEST(GradCheckOps, Gelu) {
  expect_grad_ok([](Graph& g, Var x) { return project(g, g.gelu(x), 9); },
                 random_tensor({3, 5}, 1, 2.0));
}

TEST(GradCheckOps, SoftmaxEveryAxis) {
  for (int axis : {-1, 0, 1}) {
    expect_grad_ok([axis](Graph& g, Var x) { return project(g, g.softmax(x, axis), 9); },
                   random_tensor({3, 2, 4}, 1));
  }
}

TEST(GradCheckOps, LayerNorm) {
  const Tensor gain = random_tensor({5}, 2), bias = random_tensor({5}, 3);
  expect_grad_ok(
      [&](Graph& g, Var x) {
        return project(g, g.layer_norm(x, g.constant(gain), g.constant(bias), 1e-12), 9);
      },
      random_tensor({3, 5}, 1));
  const Tensor x = random_tensor({3, 5}, 4);
  expect_grad_ok(
      [&](Graph& g, Var gg) {
        return project(g, g.layer_norm(g.constant(x), gg, g.constant(bias), 1e-12), 9);
      },
      gain);
  expect_grad_ok(
      [&](Graph& g, Var bb) {
        return project(g, g.layer_norm(g.constant(x), g.constant(gain), bb, 1e-12), 9);
      },
      bias);
}

TEST(GradCheckOps, Dropout) {
  expect_grad_ok(
      [](Graph& g, Var x) {
        Rng rng(3);  // same mask on every evaluation
        return project(g, g.dropout(x, 0.3, rng), 9);
      },
      random_tensor({4, 5}, 1));
}

TEST(GradCheckOps, EmbeddingWithRepeatedIds) {
  const std::vector<std::int32_t> ids = {1, 3, 1, 0};
  expect_grad_ok([&](Graph& g, Var t) { return project(g, g.embedding(t, ids), 9); },
                 random_tensor({4, 3}, 1));
}

TEST(GradCheckOps, GatherRowsAndReshape) {
  const std::vector<std::size_t> rows = {5, 0, 5, 2};
  expect_grad_ok([&](Graph& g, Var x) { return project(g, g.gather_rows(x, rows), 9); },
                 random_tensor({2, 3, 4}, 1));
  expect_grad_ok([](Graph& g, Var x) { return project(g, g.reshape(x, {4, 3}), 9); },
                 random_tensor({2, 6}, 1));
}

TEST(GradCheckOps, AttentionEachInputWithPadding) {
  const std::size_t B = 2, S = 4, D = 6;
  const std::vector<std::uint8_t> valid = {1, 1, 1, 0, 1, 1, 0, 0};
  const Tensor q = random_tensor({B, S, D}, 1), k = random_tensor({B, S, D}, 2);
  const Tensor v = random_tensor({B, S, D}, 3);
  expect_grad_ok(
      [&](Graph& g, Var x) {
        return project(g, g.attention(x, g.constant(k), g.constant(v), valid, 3), 9);
      },
      q);
  expect_grad_ok(
      [&](Graph& g, Var x) {
        return project(g, g.attention(g.constant(q), x, g.constant(v), valid, 3), 9);
      },
      k);
  expect_grad_ok(
      [&](Graph& g, Var x) {
        return project(g, g.attention(g.constant(q), g.constant(k), x, valid, 3), 9);
      },
      v);
  // Self-attention: the same node feeds all three inputs.
  expect_grad_ok([&](Graph& g, Var x) { return project(g, g.attention(x, x, x, valid, 2), 9); },
                 q);
}

TEST(GradCheckOps, CrossEntropyWithRowMask) {
  const std::vector<std::int32_t> t = {2, 0, 1};
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  expect_grad_ok([&](Graph& g, Var x) { return g.cross_entropy(x, t); },
                 random_tensor({3, 4}, 1, 3.0));
  expect_grad_ok([&](Graph& g, Var x) { return g.cross_entropy(x, t, mask); },
                 random_tensor({3, 4}, 2, 3.0));
}

TEST(GradCheckOps, WeightedSum) {
  for (double wa : {0.0, 0.3, 1.0}) {
    expect_grad_ok(
        [wa](Graph& g, Var x) {
          Var a = g.sum(g.mul(x, x));
          Var b = g.sum(x);
          return g.weighted_sum(a, b, wa, 1.0 - wa);
        },
        random_tensor({4}, 1));
  }
}

}  // namespace
