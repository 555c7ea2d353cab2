// Reference vs optimized kernels at training shapes. The thread count is
// the second range argument; 1 measures the optimized serial path.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "masktune/kernels.hpp"

namespace mk = masktune::kernels;
namespace mr = masktune::reference;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// batch 16 x seq 16 rows against a d_model -> d_ff projection
constexpr std::size_t kRows = 256, kIn = 64, kOut = 256;

void BM_GemmReference(benchmark::State& st) {
  const auto a = random_vec(kRows * kIn, 1), b = random_vec(kIn * kOut, 2);
  std::vector<double> c(kRows * kOut);
  for (auto _ : st) {
    mr::gemm_nn(a, b, c, kRows, kIn, kOut, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * kRows * kIn * kOut);
}
BENCHMARK(BM_GemmReference);

void BM_GemmOptimized(benchmark::State& st) {
  mk::set_num_threads(static_cast<int>(st.range(0)));
  const auto a = random_vec(kRows * kIn, 1), b = random_vec(kIn * kOut, 2);
  std::vector<double> c(kRows * kOut);
  for (auto _ : st) {
    mk::gemm_nn(a, b, c, kRows, kIn, kOut, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * kRows * kIn * kOut);
}
BENCHMARK(BM_GemmOptimized)->Arg(1)->Arg(2)->Arg(4);

// Tied MLM head: masked rows against the whole embedding table.
void BM_GemmNtReference(benchmark::State& st) {
  constexpr std::size_t m = 64, k = 64, n = 2000;
  const auto a = random_vec(m * k, 3), b = random_vec(n * k, 4);
  std::vector<double> c(m * n);
  for (auto _ : st) {
    mr::gemm_nt(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmNtReference);

void BM_GemmNtOptimized(benchmark::State& st) {
  mk::set_num_threads(static_cast<int>(st.range(0)));
  constexpr std::size_t m = 64, k = 64, n = 2000;
  const auto a = random_vec(m * k, 3), b = random_vec(n * k, 4);
  std::vector<double> c(m * n);
  for (auto _ : st) {
    mk::gemm_nt(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmNtOptimized)->Arg(1)->Arg(2)->Arg(4);

template <bool Optimized>
void BM_Attention(benchmark::State& st) {
  if constexpr (Optimized) mk::set_num_threads(static_cast<int>(st.range(0)));
  const masktune::AttentionDims dims{16, 16, 4, 16};
  const std::size_t n = dims.batch * dims.seq * dims.model_dim();
  const auto q = random_vec(n, 5), k = random_vec(n, 6), v = random_vec(n, 7);
  const std::vector<std::uint8_t> valid(dims.batch * dims.seq, 1);
  std::vector<double> probs(dims.probs_size()), ctx(n), dq(n), dk(n), dv(n);
  for (auto _ : st) {
    if constexpr (Optimized) {
      mk::attention_forward(q, k, v, valid, probs, ctx, dims);
      mk::attention_backward(ctx, q, k, v, probs, dq, dk, dv, dims);
    } else {
      mr::attention_forward(q, k, v, valid, probs, ctx, dims);
      mr::attention_backward(ctx, q, k, v, probs, dq, dk, dv, dims);
    }
    benchmark::DoNotOptimize(dv.data());
  }
}
BENCHMARK(BM_Attention<false>)->Name("BM_AttentionReference");
BENCHMARK(BM_Attention<true>)->Name("BM_AttentionOptimized")->Arg(1)->Arg(2)->Arg(4);

template <bool Optimized>
void BM_LayerNorm(benchmark::State& st) {
  if constexpr (Optimized) mk::set_num_threads(static_cast<int>(st.range(0)));
  constexpr std::size_t rows = 256, d = 64;
  const auto x = random_vec(rows * d, 8), dy = random_vec(rows * d, 9);
  const std::vector<double> gain(d, 1.0), bias(d, 0.0);
  std::vector<double> y(rows * d), mean(rows), rstd(rows), dx(rows * d), dg(d), db(d);
  for (auto _ : st) {
    if constexpr (Optimized) {
      mk::layer_norm_forward(x, gain, bias, y, mean, rstd, rows, d, 1e-12);
      mk::layer_norm_backward(dy, x, gain, mean, rstd, dx, dg, db, rows, d);
    } else {
      mr::layer_norm_forward(x, gain, bias, y, mean, rstd, rows, d, 1e-12);
      mr::layer_norm_backward(dy, x, gain, mean, rstd, dx, dg, db, rows, d);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}
BENCHMARK(BM_LayerNorm<false>)->Name("BM_LayerNormReference");
BENCHMARK(BM_LayerNorm<true>)->Name("BM_LayerNormOptimized")->Arg(1)->Arg(2)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
