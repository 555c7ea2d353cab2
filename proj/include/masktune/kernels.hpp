#pragma once

// Dense compute kernels behind the autodiff graph.
//
// masktune::kernels holds the optimized versions: cache-friendly loop order,
// OpenMP over independent output rows (or attention heads). Each output
// element is produced by exactly one thread with a fixed summation order, so
// results are bitwise identical for any thread count.
//
// masktune::reference holds naive serial versions of the same contracts.
// They exist for tests and the benchmark only.

#include <cstddef>
#include <cstdint>
#include <span>

namespace masktune {

struct AttentionDims {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  std::size_t model_dim() const { return heads * head_dim; }
  std::size_t probs_size() const { return batch * heads * seq * seq; }
};

namespace kernels {

void set_num_threads(int n);
int num_threads();

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// C[k,n] (+)= A[m,k]^T * B[m,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// Row-wise softmax over contiguous rows of length n, max-subtracted.
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n);

/// y = (x - mean) * rstd * gain + bias per row. Saves mean and rstd per row.
void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t d, double eps);
/// Accumulates into dx, dgain, dbias.
void layer_norm_backward(std::span<const double> dy, std::span<const double> x,
                         std::span<const double> gain, std::span<const double> mean,
                         std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t d);

/// tanh-approximated GELU.
void gelu_forward(std::span<const double> x, std::span<double> y);
/// dx += dy * gelu'(x)
void gelu_backward(std::span<const double> dy, std::span<const double> x, std::span<double> dx);

/// Scaled dot-product attention for [batch, seq, heads*head_dim] inputs.
/// Keys with key_valid == 0 receive zero weight. Each query row needs at
/// least one valid key. probs holds [batch, heads, seq, seq].
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_valid,
                       std::span<double> probs, std::span<double> ctx, const AttentionDims& dims);
/// Accumulates into dq, dk, dv.
void attention_backward(std::span<const double> dctx, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& dims);

}  // namespace kernels

namespace reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t n);
void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t d, double eps);
void layer_norm_backward(std::span<const double> dy, std::span<const double> x,
                         std::span<const double> gain, std::span<const double> mean,
                         std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t d);
void gelu_forward(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> dy, std::span<const double> x, std::span<double> dx);
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_valid,
                       std::span<double> probs, std::span<double> ctx, const AttentionDims& dims);
void attention_backward(std::span<const double> dctx, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& dims);

}  // namespace reference
}  // namespace masktune
