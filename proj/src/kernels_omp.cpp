#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "aspectminer/kernels.hpp"

namespace aspectminer::kernels::omp {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 256;

// Each thread owns kRowBlock rows of C; B rows are streamed once per row
// block and the active C tile stays in L1.
void matmul_rows(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                 std::size_t k, std::size_t n, bool accumulate) {
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    if (!accumulate) std::fill(c + i0 * n, c + (i0 + rows) * n, 0.0);
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
      const std::size_t j1 = std::min(n, j0 + kColBlock);
      if (rows == kRowBlock) {
        double* __restrict c0 = c + (i0 + 0) * n;
        double* __restrict c1 = c + (i0 + 1) * n;
        double* __restrict c2 = c + (i0 + 2) * n;
        double* __restrict c3 = c + (i0 + 3) * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double a0 = a[(i0 + 0) * k + p];
          const double a1 = a[(i0 + 1) * k + p];
          const double a2 = a[(i0 + 2) * k + p];
          const double a3 = a[(i0 + 3) * k + p];
          const double* __restrict brow = b + p * n;
#pragma omp simd
          for (std::size_t j = j0; j < j1; ++j) {
            const double bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          double* __restrict crow = c + (i0 + r) * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[(i0 + r) * k + p];
            const double* __restrict brow = b + p * n;
#pragma omp simd
            for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
          }
        }
      }
    }
  }
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  matmul_rows(a.data(), b.data(), c.data(), m, k, n, accumulate);
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  // Transposing B (n x k) to (k x n) turns the dot-product form into the
  // vectorisable saxpy form above.
  std::vector<double> bt(k * n);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < nn; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + static_cast<std::size_t>(j)] = b[static_cast<std::size_t>(j) * k + p];
  }
  matmul_rows(a.data(), bt.data(), c.data(), m, k, n, accumulate);
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const auto mm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < mm; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* __restrict crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* __restrict brow = b.data() + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_row_bias(std::span<double> x, std::span<const double> bias, std::size_t m, std::size_t n) {
  const auto mm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < mm; ++i) {
    double* row = x.data() + static_cast<std::size_t>(i) * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

void column_sums(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n, bool accumulate) {
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < nn; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    double sum = accumulate ? out[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += x[i * n + j];
    out[j] = sum;
  }
}

void layer_norm(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                std::span<double> y, std::span<double> xhat, std::span<double> rstd, std::size_t m, std::size_t n,
                double eps) {
  const auto mm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < mm; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* row = x.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * r;
      xhat[i * n + j] = h;
      y[i * n + j] = gamma[j] * h + beta[j];
    }
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat, std::span<const double> rstd,
                         std::span<const double> gamma, std::span<double> dx, std::span<double> dgamma,
                         std::span<double> dbeta, std::size_t m, std::size_t n) {
  const auto mm = static_cast<std::ptrdiff_t>(m);
  const auto nn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
  {
#pragma omp for schedule(static) nowait
    for (std::ptrdiff_t ii = 0; ii < mm; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double mean_g = 0.0;
      double mean_gx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double g = dy[i * n + j] * gamma[j];
        mean_g += g;
        mean_gx += g * xhat[i * n + j];
      }
      mean_g /= static_cast<double>(n);
      mean_gx /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double g = dy[i * n + j] * gamma[j];
        dx[i * n + j] = rstd[i] * (g - mean_g - xhat[i * n + j] * mean_gx);
      }
    }
#pragma omp for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < nn; ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      double dg = dgamma[j];
      double db = dbeta[j];
      for (std::size_t i = 0; i < m; ++i) {
        dg += dy[i * n + j] * xhat[i * n + j];
        db += dy[i * n + j];
      }
      dgamma[j] = dg;
      dbeta[j] = db;
    }
  }
}

void masked_softmax_rows(std::span<double> x, std::span<const std::uint8_t> key_mask, std::size_t m, std::size_t n) {
  const auto mm = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < mm; ++ii) {
    double* row = x.data() + static_cast<std::size_t>(ii) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (key_mask[j]) mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = key_mask[j] ? std::exp(row[j] - mx) : 0.0;
      sum += row[j];
    }
    const double inv = sum > 0.0 ? 1.0 / sum : 0.0;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const auto count = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  const auto count = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
}

void masked_max_pool(std::span<const double> x, std::span<const std::uint8_t> mask, std::span<double> out,
                     std::span<std::uint32_t> argmax, std::size_t rows, std::size_t cols) {
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(cols), -std::numeric_limits<double>::infinity());
  std::fill(argmax.begin(), argmax.begin() + static_cast<std::ptrdiff_t>(cols), 0U);
  // Row-major sweep keeps reads contiguous; columns are split across threads.
  const auto chunks = static_cast<std::ptrdiff_t>((cols + kColBlock - 1) / kColBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t cb = 0; cb < chunks; ++cb) {
    const std::size_t j0 = static_cast<std::size_t>(cb) * kColBlock;
    const std::size_t j1 = std::min(cols, j0 + kColBlock);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!mask[i]) continue;
      const double* row = x.data() + i * cols;
      for (std::size_t j = j0; j < j1; ++j) {
        if (row[j] > out[j]) {
          out[j] = row[j];
          argmax[j] = static_cast<std::uint32_t>(i);
        }
      }
    }
  }
}

}  // namespace aspectminer::kernels::omp
