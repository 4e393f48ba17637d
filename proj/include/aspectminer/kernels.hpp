#pragma once

// Dense row-major kernels used by the encoder and head. `reference` holds
// plain serial loops kept as the test oracle; `omp` holds the OpenMP versions
// used in production. Both namespaces expose identical signatures.
//
// Every omp kernel assigns each output row to exactly one thread and sums in
// a fixed order, so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace aspectminer::kernels {

#define ASPECTMINER_KERNEL_DECLS                                                                          \
  /* C(m x n) (+)= A(m x k) * B(k x n) */                                                                 \
  void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,   \
              std::size_t k, std::size_t n, bool accumulate);                                             \
  /* C(m x n) (+)= A(m x k) * B(n x k)^T */                                                               \
  void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,               \
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate);                           \
  /* C(m x n) (+)= A(k x m)^T * B(k x n) */                                                               \
  void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,               \
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate);                           \
  /* x(m x n) += bias(n) broadcast over rows */                                                           \
  void add_row_bias(std::span<double> x, std::span<const double> bias, std::size_t m, std::size_t n);     \
  /* out(n) (+)= column sums of x(m x n) */                                                               \
  void column_sums(std::span<const double> x, std::span<double> out, std::size_t m, std::size_t n,        \
                   bool accumulate);                                                                      \
  /* y = gamma * (x - mean) * rstd + beta per row; stores xhat and rstd for backward */                   \
  void layer_norm(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta, \
                  std::span<double> y, std::span<double> xhat, std::span<double> rstd, std::size_t m,     \
                  std::size_t n, double eps);                                                             \
  /* dx = LN backward; dgamma/dbeta are accumulated */                                                    \
  void layer_norm_backward(std::span<const double> dy, std::span<const double> xhat,                      \
                           std::span<const double> rstd, std::span<const double> gamma,                   \
                           std::span<double> dx, std::span<double> dgamma, std::span<double> dbeta,       \
                           std::size_t m, std::size_t n);                                                 \
  /* Row softmax in place; columns with key_mask == 0 get probability 0. */                               \
  void masked_softmax_rows(std::span<double> x, std::span<const std::uint8_t> key_mask, std::size_t m,    \
                           std::size_t n);                                                                \
  /* erf-based GELU */                                                                                    \
  void gelu(std::span<const double> x, std::span<double> y);                                              \
  void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);        \
  /* Column-wise max over rows with mask == 1. argmax gets the winning row (first on ties). */            \
  void masked_max_pool(std::span<const double> x, std::span<const std::uint8_t> mask,                     \
                       std::span<double> out, std::span<std::uint32_t> argmax, std::size_t rows,          \
                       std::size_t cols);

namespace reference {
ASPECTMINER_KERNEL_DECLS
}  // namespace reference

namespace omp {
ASPECTMINER_KERNEL_DECLS
}  // namespace omp

#undef ASPECTMINER_KERNEL_DECLS

}  // namespace aspectminer::kernels
