#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "masktune/kernels.hpp"
#include "support.hpp"

using namespace masktune;
using testutil::random_values;

namespace {

double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  }
  return m;
}

struct GemmCase {
  std::size_t m, k, n;
};

std::string gemm_case_name(const ::testing::TestParamInfo<GemmCase>& info) {
  const GemmCase& c = info.param;
  return std::to_string(c.m) + "x" + std::to_string(c.k) + "x" + std::to_string(c.n);
}

class GemmVsReference : public ::testing::TestWithParam<GemmCase> {};

TEST_P(GemmVsReference, AllVariantsMatch) {
  const auto [m, k, n] = GetParam();
  const auto a = random_values(m * k, 1), b = random_values(k * n, 2);
  const auto bt = random_values(n * k, 3), at = random_values(m * n, 4);
  for (bool acc : {false, true}) {
    std::vector<double> c1 = random_values(m * n, 5), c2 = c1;
    kernels::gemm_nn(a, b, c1, m, k, n, acc);
    reference::gemm_nn(a, b, c2, m, k, n, acc);
    EXPECT_LT(max_rel_diff(c1, c2), 1e-13);

    c1 = random_values(m * n, 6);
    c2 = c1;
    kernels::gemm_nt(a, bt, c1, m, k, n, acc);
    reference::gemm_nt(a, bt, c2, m, k, n, acc);
    EXPECT_LT(max_rel_diff(c1, c2), 1e-13);

    std::vector<double> d1 = random_values(k * n, 7), d2 = d1;
    kernels::gemm_tn(a, at, d1, m, k, n, acc);
    reference::gemm_tn(a, at, d2, m, k, n, acc);
    EXPECT_LT(max_rel_diff(d1, d2), 1e-13);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmVsReference,
                         ::testing::Values(GemmCase{1, 1, 1}, GemmCase{3, 5, 2}, GemmCase{17, 9, 31},
                                           GemmCase{64, 64, 256}, GemmCase{300, 64, 200}),
                         gemm_case_name);

TEST(Kernels, GemmHandComputed) {
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};  // [2,3]
  const std::vector<double> b = {7, 8, 9, 10, 11, 12};  // [3,2]
  std::vector<double> c(4);
  kernels::gemm_nn(a, b, c, 2, 3, 2, false);
  EXPECT_EQ(c, (std::vector<double>{58, 64, 139, 154}));
}

TEST(Kernels, SoftmaxKnownValues) {
  const std::vector<double> x = {1, 2, 3, 1000, 1000, 1000};
  std::vector<double> y(6);
  kernels::softmax_rows(x, y, 2, 3);
  EXPECT_NEAR(y[0], 0.090030573170380462, 1e-15);
  EXPECT_NEAR(y[1], 0.24472847105479767, 1e-15);
  EXPECT_NEAR(y[2], 0.6652409557748219, 1e-15);
  for (int i = 3; i < 6; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Kernels, GeluKnownValues) {
  const std::vector<double> x = {-1.0, 0.0, 1.0, 3.0};
  std::vector<double> y(4);
  kernels::gelu_forward(x, y);
  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  EXPECT_NEAR(y[0], -0.15880800939172324, 1e-15);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], 0.84119199060827676, 1e-15);
  EXPECT_NEAR(y[3], 2.996362607918227, 1e-14);
}

TEST(Kernels, ElementwiseAndLayerNormMatchReference) {
  const std::size_t rows = 300, d = 64;
  const auto x = random_values(rows * d, 11, 3.0), dy = random_values(rows * d, 12);
  const auto gain = random_values(d, 13), bias = random_values(d, 14);
  std::vector<double> y1(rows * d), y2(rows * d), m1(rows), m2(rows), r1(rows), r2(rows);
  kernels::layer_norm_forward(x, gain, bias, y1, m1, r1, rows, d, 1e-12);
  reference::layer_norm_forward(x, gain, bias, y2, m2, r2, rows, d, 1e-12);
  EXPECT_LT(max_rel_diff(y1, y2), 1e-13);
  EXPECT_LT(max_rel_diff(r1, r2), 1e-13);

  std::vector<double> dx1(rows * d, 0.5), dx2 = dx1, dg1(d, 0.25), dg2 = dg1, db1(d), db2(d);
  kernels::layer_norm_backward(dy, x, gain, m1, r1, dx1, dg1, db1, rows, d);
  reference::layer_norm_backward(dy, x, gain, m2, r2, dx2, dg2, db2, rows, d);
  EXPECT_LT(max_rel_diff(dx1, dx2), 1e-12);
  EXPECT_LT(max_rel_diff(dg1, dg2), 1e-12);
  EXPECT_LT(max_rel_diff(db1, db2), 1e-12);

  std::vector<double> s1(rows * d), s2(rows * d);
  kernels::softmax_rows(x, s1, rows, d);
  reference::softmax_rows(x, s2, rows, d);
  EXPECT_LT(max_rel_diff(s1, s2), 1e-14);

  std::vector<double> g1(rows * d), g2(rows * d), gd1(rows * d, 1.0), gd2 = gd1;
  kernels::gelu_forward(x, g1);
  reference::gelu_forward(x, g2);
  EXPECT_LT(max_rel_diff(g1, g2), 1e-14);
  kernels::gelu_backward(dy, x, gd1);
  reference::gelu_backward(dy, x, gd2);
  EXPECT_LT(max_rel_diff(gd1, gd2), 1e-14);
}

TEST(Kernels, LayerNormSkipsEmptyParamGrads) {
  const std::size_t rows = 2, d = 4;
  const auto x = random_values(rows * d, 1), dy = random_values(rows * d, 2);
  const std::vector<double> gain(d, 1.0), bias(d, 0.0);
  std::vector<double> y(rows * d), mean(rows), rstd(rows), dx(rows * d);
  kernels::layer_norm_forward(x, gain, bias, y, mean, rstd, rows, d, 1e-12);
  kernels::layer_norm_backward(dy, x, gain, mean, rstd, dx, {}, {}, rows, d);
  EXPECT_TRUE(std::all_of(dx.begin(), dx.end(), [](double v) { return std::isfinite(v); }));
}

AttentionDims attn_dims() { return {3, 7, 2, 4}; }

TEST(Kernels, AttentionMatchesReferenceWithPadding) {
  const auto dims = attn_dims();
  const std::size_t n = dims.batch * dims.seq * dims.model_dim();
  const auto q = random_values(n, 21), k = random_values(n, 22), v = random_values(n, 23);
  std::vector<std::uint8_t> valid(dims.batch * dims.seq, 1);
  for (std::size_t s = 4; s < dims.seq; ++s) valid[1 * dims.seq + s] = 0;
  valid[2 * dims.seq + 0] = 0;

  std::vector<double> p1(dims.probs_size()), p2(dims.probs_size()), c1(n), c2(n);
  kernels::attention_forward(q, k, v, valid, p1, c1, dims);
  reference::attention_forward(q, k, v, valid, p2, c2, dims);
  EXPECT_LT(max_rel_diff(p1, p2), 1e-14);
  EXPECT_LT(max_rel_diff(c1, c2), 1e-13);

  // Masked keys receive exactly zero weight.
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t i = 0; i < dims.seq; ++i) {
      for (std::size_t j = 4; j < dims.seq; ++j) {
        EXPECT_EQ(p1[((1 * dims.heads + h) * dims.seq + i) * dims.seq + j], 0.0);
      }
    }
  }

  const auto dctx = random_values(n, 24);
  std::vector<double> dq1(n), dk1(n), dv1(n), dq2(n), dk2(n), dv2(n);
  kernels::attention_backward(dctx, q, k, v, p1, dq1, dk1, dv1, dims);
  reference::attention_backward(dctx, q, k, v, p2, dq2, dk2, dv2, dims);
  EXPECT_LT(max_rel_diff(dq1, dq2), 1e-12);
  EXPECT_LT(max_rel_diff(dk1, dk2), 1e-12);
  EXPECT_LT(max_rel_diff(dv1, dv2), 1e-12);
}

TEST(Kernels, BitwiseIdenticalAcrossThreadCounts) {
  const int saved = kernels::num_threads();
  // Large enough to cross the parallel threshold.
  const std::size_t m = 256, k = 64, n = 256;
  const auto a = random_values(m * k, 31), b = random_values(k * n, 32);
  const AttentionDims dims{16, 16, 4, 16};
  const std::size_t an = dims.batch * dims.seq * dims.model_dim();
  const auto q = random_values(an, 33), kk = random_values(an, 34), v = random_values(an, 35);
  const std::vector<std::uint8_t> valid(dims.batch * dims.seq, 1);

  auto run = [&](int threads) {
    kernels::set_num_threads(threads);
    std::vector<double> out(m * n), tn(k * n), probs(dims.probs_size()), ctx(an), dq(an), dk(an),
        dv(an);
    kernels::gemm_nn(a, b, out, m, k, n, false);
    kernels::gemm_tn(a, out, tn, m, k, n, false);
    kernels::attention_forward(q, kk, v, valid, probs, ctx, dims);
    kernels::attention_backward(ctx, q, kk, v, probs, dq, dk, dv, dims);
    out.insert(out.end(), tn.begin(), tn.end());
    out.insert(out.end(), ctx.begin(), ctx.end());
    out.insert(out.end(), dq.begin(), dq.end());
    out.insert(out.end(), dv.begin(), dv.end());
    return out;
  };
  const auto one = run(1);
  const auto four = run(4);
  kernels::set_num_threads(saved);
  ASSERT_EQ(one.size(), four.size());
  EXPECT_TRUE(std::equal(one.begin(), one.end(), four.begin()));
}

}  // namespace
