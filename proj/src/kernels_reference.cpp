#include <algorithm>
#include <cmath>
#include <limits>

#include "aspectminer/kernels.hpp"

namespace aspectminer::kernels::reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = sum;
    }
  }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void add_row_bias(std::span<double> x, std::span<const double> bias, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] += bias[j];
  }
}

void column_sums(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    double sum = accumulate ? out[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += x[i * n + j];
    out[j] = sum;
  }
}

void layer_norm(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                std::span<double> y, std::span<double> xhat, std::span<double> rstd, std::size_t m, std::size_t n,
                double eps) {
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[i * n + j] - mean) * (x[i * n + j] - mean);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mean) * rstd[i];
      y[i * n + j] = gamma[j] * xhat[i * n + j] + beta[j];
    }
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dy[i * n + j] * gamma[j];
      mean_g += g;
      mean_gx += g * xhat[i * n + j];
      dgamma[j] += dy[i * n + j] * xhat[i * n + j];
      dbeta[j] += dy[i * n + j];
    }
    mean_g /= static_cast<double>(n);
    mean_gx /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dy[i * n + j] * gamma[j];
      dx[i * n + j] = rstd[i] * (g - mean_g - xhat[i * n + j] * mean_gx);
    }
  }
}

void masked_softmax_rows(std::span<double> x, std::span<const std::uint8_t> key_mask, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (key_mask[j]) mx = std::max(mx, x[i * n + j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      x[i * n + j] = key_mask[j] ? std::exp(x[i * n + j] - mx) : 0.0;
      sum += x[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] = sum > 0.0 ? x[i * n + j] / sum : 0.0;
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

void masked_max_pool(std::span<const double> x, std::span<const std::uint8_t> mask, std::span<double> out,
                     std::span<std::uint32_t> argmax, std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = -std::numeric_limits<double>::infinity();
    argmax[j] = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      if (mask[i] && x[i * cols + j] > out[j]) {
        out[j] = x[i * cols + j];
        argmax[j] = static_cast<std::uint32_t>(i);
      }
    }
  }
}

}  // namespace aspectminer::kernels::reference
