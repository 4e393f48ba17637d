// Serial reference vs OpenMP kernels at the encoder's working shapes
// (100 tokens x 768 hidden, 3072 intermediate).

#include <benchmark/benchmark.h>

#include <vector>

#include "aspectminer/kernels.hpp"
#include "aspectminer/random.hpp"

namespace {

using namespace aspectminer;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = uniform_real(rng, -1.0, 1.0);
  return v;
}

constexpr std::size_t kTokens = 100;

template <auto Kernel>
void BM_LinearForward(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0));
  const auto out = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec(kTokens * in, 1);
  const auto w = random_vec(out * in, 2);
  std::vector<double> y(kTokens * out);
  for (auto _ : state) {
    Kernel(x, w, y, kTokens, in, out, false);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * kTokens * in * out, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

template <auto Kernel>
void BM_WeightGradient(benchmark::State& state) {
  const auto in = static_cast<std::size_t>(state.range(0));
  const auto out = static_cast<std::size_t>(state.range(1));
  const auto dy = random_vec(kTokens * out, 3);
  const auto x = random_vec(kTokens * in, 4);
  std::vector<double> dw(out * in, 0.0);
  for (auto _ : state) {
    Kernel(dy, x, dw, out, kTokens, in, true);
    benchmark::DoNotOptimize(dw.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * kTokens * in * out, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

template <auto Kernel>
void BM_MaxPool(benchmark::State& state) {
  const std::size_t cols = 768;
  const auto x = random_vec(kTokens * cols, 5);
  std::vector<std::uint8_t> mask(kTokens, 0);
  for (std::size_t i = 0; i < 40; ++i) mask[i] = 1;
  std::vector<double> pooled(cols);
  std::vector<std::uint32_t> argmax(cols);
  for (auto _ : state) {
    Kernel(x, mask, pooled, argmax, kTokens, cols);
    benchmark::DoNotOptimize(pooled.data());
  }
}

template <auto Kernel>
void BM_LayerNorm(benchmark::State& state) {
  const std::size_t cols = 768;
  const auto x = random_vec(kTokens * cols, 6);
  const std::vector<double> gamma(cols, 1.0), beta(cols, 0.0);
  std::vector<double> y(x.size()), xhat(x.size()), rstd(kTokens);
  for (auto _ : state) {
    Kernel(x, gamma, beta, y, xhat, rstd, kTokens, cols, 1e-12);
    benchmark::DoNotOptimize(y.data());
  }
}

BENCHMARK(BM_LinearForward<kernels::reference::matmul_bt>)->Args({768, 768})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LinearForward<kernels::omp::matmul_bt>)->Args({768, 768})->Args({768, 3072})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightGradient<kernels::reference::matmul_at>)->Args({768, 768})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightGradient<kernels::omp::matmul_at>)->Args({768, 768})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool<kernels::reference::masked_max_pool>);
BENCHMARK(BM_MaxPool<kernels::omp::masked_max_pool>);
BENCHMARK(BM_LayerNorm<kernels::reference::layer_norm>);
BENCHMARK(BM_LayerNorm<kernels::omp::layer_norm>);

}  // namespace

BENCHMARK_MAIN();
