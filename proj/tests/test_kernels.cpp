#include <cmath>
#include <vector>

#include "aspectminer/kernels.hpp"
#include "aspectminer/random.hpp"
#include "doctest.h"

using namespace aspectminer;
namespace ref = aspectminer::kernels::reference;
namespace par = aspectminer::kernels::omp;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform_real(rng, -2.0, 2.0);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol * (1.0 + std::abs(b[i]))) {
      FAIL("mismatch at " << i << ": " << a[i] << " vs " << b[i]);
    }
  }
}

struct Shape {
  std::size_t m, k, n;
};

const Shape kShapes[] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 300}, {9, 17, 513}, {100, 64, 100}, {13, 1, 2}};

}  // namespace

TEST_CASE("matmul variants agree with the serial reference") {
  Rng rng(1);
  for (const auto& s : kShapes) {
    for (bool acc : {false, true}) {
      const auto a = random_vec(rng, s.m * s.k);
      const auto b = random_vec(rng, s.k * s.n);
      const auto bt = random_vec(rng, s.n * s.k);
      const auto at = random_vec(rng, s.k * s.m);
      const auto init = random_vec(rng, s.m * s.n);

      auto c_ref = init;
      auto c_par = init;
      ref::matmul(a, b, c_ref, s.m, s.k, s.n, acc);
      par::matmul(a, b, c_par, s.m, s.k, s.n, acc);
      check_close(c_par, c_ref, 1e-12);

      c_ref = init;
      c_par = init;
      ref::matmul_bt(a, bt, c_ref, s.m, s.k, s.n, acc);
      par::matmul_bt(a, bt, c_par, s.m, s.k, s.n, acc);
      check_close(c_par, c_ref, 1e-12);

      c_ref = init;
      c_par = init;
      ref::matmul_at(at, b, c_ref, s.m, s.k, s.n, acc);
      par::matmul_at(at, b, c_par, s.m, s.k, s.n, acc);
      check_close(c_par, c_ref, 1e-12);
    }
  }
}

TEST_CASE("row/column reductions agree with the serial reference") {
  Rng rng(2);
  for (const auto& s : kShapes) {
    const auto x = random_vec(rng, s.m * s.n);
    const auto bias = random_vec(rng, s.n);
    auto x_ref = x;
    auto x_par = x;
    ref::add_row_bias(x_ref, bias, s.m, s.n);
    par::add_row_bias(x_par, bias, s.m, s.n);
    check_close(x_par, x_ref, 0.0);

    auto sums_ref = bias;
    auto sums_par = bias;
    ref::column_sums(x, sums_ref, s.m, s.n, true);
    par::column_sums(x, sums_par, s.m, s.n, true);
    check_close(sums_par, sums_ref, 0.0);
  }
}

TEST_CASE("layer norm forward/backward agree and match finite differences") {
  Rng rng(3);
  const std::size_t m = 5;
  const std::size_t n = 12;
  const auto x = random_vec(rng, m * n);
  const auto gamma = random_vec(rng, n);
  const auto beta = random_vec(rng, n);
  const auto dy = random_vec(rng, m * n);
  std::vector<double> y_ref(m * n), xh_ref(m * n), r_ref(m), y_par(m * n), xh_par(m * n), r_par(m);
  ref::layer_norm(x, gamma, beta, y_ref, xh_ref, r_ref, m, n, 1e-12);
  par::layer_norm(x, gamma, beta, y_par, xh_par, r_par, m, n, 1e-12);
  check_close(y_par, y_ref, 0.0);

  std::vector<double> dx_ref(m * n), dg_ref(n, 0.0), db_ref(n, 0.0);
  std::vector<double> dx_par(m * n), dg_par(n, 0.0), db_par(n, 0.0);
  ref::layer_norm_backward(dy, xh_ref, r_ref, gamma, dx_ref, dg_ref, db_ref, m, n);
  par::layer_norm_backward(dy, xh_par, r_par, gamma, dx_par, dg_par, db_par, m, n);
  check_close(dx_par, dx_ref, 1e-13);
  check_close(dg_par, dg_ref, 1e-13);
  check_close(db_par, db_ref, 1e-13);

  // d(sum dy*y)/dx by central differences.
  auto objective = [&](const std::vector<double>& xs) {
    std::vector<double> y(m * n), xh(m * n), r(m);
    ref::layer_norm(xs, gamma, beta, y, xh, r, m, n, 1e-12);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x;
    auto xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(dx_ref[i] == doctest::Approx((objective(xp) - objective(xm)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("masked softmax rows") {
  Rng rng(4);
  const std::size_t m = 7;
  const std::size_t n = 11;
  std::vector<std::uint8_t> mask(n, 1);
  mask[3] = 0;
  mask[10] = 0;
  const auto x = random_vec(rng, m * n);
  auto p_ref = x;
  auto p_par = x;
  ref::masked_softmax_rows(p_ref, mask, m, n);
  par::masked_softmax_rows(p_par, mask, m, n);
  check_close(p_par, p_ref, 1e-15);
  for (std::size_t i = 0; i < m; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += p_ref[i * n + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p_ref[i * n + 3] == 0.0);
  }
}

TEST_CASE("gelu and its derivative") {
  Rng rng(5);
  const auto x = random_vec(rng, 257);
  const auto dy = random_vec(rng, 257);
  std::vector<double> y_ref(x.size()), y_par(x.size()), dx_ref(x.size()), dx_par(x.size());
  ref::gelu(x, y_ref);
  par::gelu(x, y_par);
  check_close(y_par, y_ref, 0.0);
  ref::gelu_backward(x, dy, dx_ref);
  par::gelu_backward(x, dy, dx_par);
  check_close(dx_par, dx_ref, 0.0);
  CHECK(y_ref[0] == doctest::Approx(0.5 * x[0] * (1 + std::erf(x[0] / std::sqrt(2.0)))));
  const double h = 1e-6;
  for (std::size_t i = 0; i < 20; ++i) {
    std::vector<double> xp{x[i] + h}, xm{x[i] - h}, yp(1), ym(1);
    ref::gelu(xp, yp);
    ref::gelu(xm, ym);
    CHECK(dx_ref[i] == doctest::Approx(dy[i] * (yp[0] - ym[0]) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("masked max pool agrees with the serial reference") {
  Rng rng(6);
  for (std::size_t cols : {3UL, 8UL, 300UL, 768UL}) {
    const std::size_t rows = 100;
    const auto x = random_vec(rng, rows * cols);
    std::vector<std::uint8_t> mask(rows, 0);
    const auto real = 1 + uniform_index(rng, rows);
    for (std::size_t i = 0; i < real; ++i) mask[i] = 1;
    std::vector<double> o_ref(cols), o_par(cols);
    std::vector<std::uint32_t> a_ref(cols), a_par(cols);
    ref::masked_max_pool(x, mask, o_ref, a_ref, rows, cols);
    par::masked_max_pool(x, mask, o_par, a_par, rows, cols);
    check_close(o_par, o_ref, 0.0);
    CHECK(a_par == a_ref);
  }
}
