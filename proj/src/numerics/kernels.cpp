#include "masktune/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace masktune::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void transpose(std::span<const double> src, std::vector<double>& dst, std::size_t rows,
               std::size_t cols) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = src.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = s[c];
  }
}

inline void gemm_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                     std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
  }
}

void gemm_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < m; ++i) {
    gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
  }
}

}  // namespace

void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }

int num_threads() { return omp_get_max_threads(); }

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  gemm_rows(a.data(), b.data(), c.data(), m, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> bt;
  transpose(b, bt, n, k);
  gemm_rows(a.data(), bt.data(), c.data(), m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> at;
  transpose(a, at, m, k);
  gemm_rows(at.data(), b.data(), c.data(), k, m, n, accumulate);
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t n) {
  const bool par = rows * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = y.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t d, double eps) {
  const bool par = rows * d >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double* yr = y.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x,
                         std::span<const double> gain, std::span<const double> mean,
                         std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t d) {
  const double inv_d = 1.0 / static_cast<double>(d);
  if (!dx.empty()) {
    const bool par = rows * d >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dyr = dy.data() + r * d;
      const double* xr = x.data() + r * d;
      double* dxr = dx.data() + r * d;
      const double mu = mean[r];
      const double rs = rstd[r];
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = dyr[j] * gain[j];
        sum_g += g;
        sum_gx += g * (xr[j] - mu) * rs;
      }
      sum_g *= inv_d;
      sum_gx *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (xr[j] - mu) * rs;
        dxr[j] += rs * (dyr[j] * gain[j] - sum_g - xhat * sum_gx);
      }
    }
  }
  // Cross-row reductions stay serial to keep the summation order fixed.
  if (!dgain.empty() || !dbias.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dyr = dy.data() + r * d;
      const double* xr = x.data() + r * d;
      const double mu = mean[r];
      const double rs = rstd[r];
      for (std::size_t j = 0; j < d; ++j) {
        if (!dgain.empty()) dgain[j] += dyr[j] * (xr[j] - mu) * rs;
        if (!dbias.empty()) dbias[j] += dyr[j];
      }
    }
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n >= kParallelWork)
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
}

void gelu_backward(std::span<const double> dy, std::span<const double> x, std::span<double> dx) {
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static) if (n >= kParallelWork)
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    dx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_valid,
                       std::span<double> probs, std::span<double> ctx, const AttentionDims& dims) {
  const std::size_t B = dims.batch, S = dims.seq, H = dims.heads, Dh = dims.head_dim;
  const std::size_t D = dims.model_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));
  const std::size_t pairs = B * H;
  const bool par = pairs > 1 && pairs * S * S * Dh >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = bh / H, h = bh % H;
    const std::uint8_t* valid = key_valid.data() + b * S;
    for (std::size_t i = 0; i < S; ++i) {
      const double* qi = q.data() + (b * S + i) * D + h * Dh;
      double* pi = probs.data() + (bh * S + i) * S;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < S; ++j) {
        if (!valid[j]) {
          pi[j] = 0.0;
          continue;
        }
        const double* kj = k.data() + (b * S + j) * D + h * Dh;
        double s = 0.0;
        for (std::size_t t = 0; t < Dh; ++t) s += qi[t] * kj[t];
        pi[j] = s * scale;
        mx = std::max(mx, pi[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        if (!valid[j]) continue;
        pi[j] = std::exp(pi[j] - mx);
        sum += pi[j];
      }
      const double inv = 1.0 / sum;
      double* ci = ctx.data() + (b * S + i) * D + h * Dh;
      std::fill(ci, ci + Dh, 0.0);
      for (std::size_t j = 0; j < S; ++j) {
        if (!valid[j]) continue;
        pi[j] *= inv;
        const double* vj = v.data() + (b * S + j) * D + h * Dh;
        for (std::size_t t = 0; t < Dh; ++t) ci[t] += pi[j] * vj[t];
      }
    }
  }
}

void attention_backward(std::span<const double> dctx, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& dims) {
  const std::size_t B = dims.batch, S = dims.seq, H = dims.heads, Dh = dims.head_dim;
  const std::size_t D = dims.model_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));
  const std::size_t pairs = B * H;
  const bool par = pairs > 1 && pairs * S * S * Dh >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = bh / H, h = bh % H;
    std::vector<double> dp(S);
    for (std::size_t i = 0; i < S; ++i) {
      const double* pi = probs.data() + (bh * S + i) * S;
      const double* gi = dctx.data() + (b * S + i) * D + h * Dh;
      double row = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        if (pi[j] == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        const double* vj = v.data() + (b * S + j) * D + h * Dh;
        double* dvj = dv.data() + (b * S + j) * D + h * Dh;
        double s = 0.0;
        for (std::size_t t = 0; t < Dh; ++t) {
          s += gi[t] * vj[t];
          dvj[t] += pi[j] * gi[t];
        }
        dp[j] = s;
        row += pi[j] * s;
      }
      const double* qi = q.data() + (b * S + i) * D + h * Dh;
      double* dqi = dq.data() + (b * S + i) * D + h * Dh;
      for (std::size_t j = 0; j < S; ++j) {
        if (pi[j] == 0.0) continue;
        const double ds = pi[j] * (dp[j] - row) * scale;
        const double* kj = k.data() + (b * S + j) * D + h * Dh;
        double* dkj = dk.data() + (b * S + j) * D + h * Dh;
        for (std::size_t t = 0; t < Dh; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
}

}  // namespace masktune::kernels
