// Naive serial kernels, written for readability. Used as the comparison
// baseline in tests and in the benchmark.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "masktune/kernels.hpp"

namespace masktune::reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < m; ++p) s += a[p * k + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::fmax(mx, x[r * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(x[r * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = std::exp(x[r * n + j] - mx) / sum;
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t d, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    mean[r] = mu;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      y[r * d + j] = (x[r * d + j] - mu) * rstd[r] * gain[j] + bias[j];
    }
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x,
                         std::span<const double> gain, std::span<const double> mean,
                         std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t d) {
  const double dd = static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> xhat(d), g(d);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (x[r * d + j] - mean[r]) * rstd[r];
      g[j] = dy[r * d + j] * gain[j];
      mean_g += g[j] / dd;
      mean_gx += g[j] * xhat[j] / dd;
    }
    for (std::size_t j = 0; j < d; ++j) {
      if (!dx.empty()) dx[r * d + j] += rstd[r] * (g[j] - mean_g - xhat[j] * mean_gx);
      if (!dgain.empty()) dgain[j] += dy[r * d + j] * xhat[j];
      if (!dbias.empty()) dbias[j] += dy[r * d + j];
    }
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * std::pow(v, 3))));
  }
}

void gelu_backward(std::span<const double> dy, std::span<const double> x, std::span<double> dx) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double u = c * (v + 0.044715 * std::pow(v, 3));
    const double sech2 = 1.0 / (std::cosh(u) * std::cosh(u));
    const double d = 0.5 * (1.0 + std::tanh(u)) + 0.5 * v * sech2 * c * (1.0 + 3 * 0.044715 * v * v);
    dx[i] += dy[i] * d;
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_valid,
                       std::span<double> probs, std::span<double> ctx, const AttentionDims& dims) {
  const std::size_t S = dims.seq, Dh = dims.head_dim, D = dims.model_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));
  auto at = [&](std::span<const double> t, std::size_t b, std::size_t i, std::size_t h,
                std::size_t c) { return t[(b * S + i) * D + h * Dh + c]; };
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        std::vector<double> score(S, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < S; ++j) {
          if (!key_valid[b * S + j]) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < Dh; ++c) s += at(q, b, i, h, c) * at(k, b, j, h, c);
          score[j] = s * scale;
          mx = std::fmax(mx, score[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < S; ++j) sum += std::exp(score[j] - mx);
        const std::size_t prow = ((b * dims.heads + h) * S + i) * S;
        for (std::size_t j = 0; j < S; ++j) probs[prow + j] = std::exp(score[j] - mx) / sum;
        for (std::size_t c = 0; c < Dh; ++c) {
          double s = 0.0;
          for (std::size_t j = 0; j < S; ++j) s += probs[prow + j] * at(v, b, j, h, c);
          ctx[(b * S + i) * D + h * Dh + c] = s;
        }
      }
    }
  }
}

void attention_backward(std::span<const double> dctx, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, const AttentionDims& dims) {
  const std::size_t S = dims.seq, Dh = dims.head_dim, D = dims.model_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));
  auto idx = [&](std::size_t b, std::size_t i, std::size_t h, std::size_t c) {
    return (b * S + i) * D + h * Dh + c;
  };
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const std::size_t prow = ((b * dims.heads + h) * S + i) * S;
        std::vector<double> dp(S, 0.0);
        for (std::size_t j = 0; j < S; ++j) {
          for (std::size_t c = 0; c < Dh; ++c) {
            dp[j] += dctx[idx(b, i, h, c)] * v[idx(b, j, h, c)];
            dv[idx(b, j, h, c)] += probs[prow + j] * dctx[idx(b, i, h, c)];
          }
        }
        double row = 0.0;
        for (std::size_t j = 0; j < S; ++j) row += probs[prow + j] * dp[j];
        for (std::size_t j = 0; j < S; ++j) {
          const double ds = probs[prow + j] * (dp[j] - row) * scale;
          for (std::size_t c = 0; c < Dh; ++c) {
            dq[idx(b, i, h, c)] += ds * k[idx(b, j, h, c)];
            dk[idx(b, j, h, c)] += ds * q[idx(b, i, h, c)];
          }
        }
      }
    }
  }
}

}  // namespace masktune::reference
