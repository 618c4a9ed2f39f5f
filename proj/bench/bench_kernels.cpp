// Serial reference kernels vs the OpenMP kernels, plus whole-model costs for
// the network sizes the experiments use.
#include <benchmark/benchmark.h>

#include <random>

#include "dydiff/kernels.hpp"
#include "dydiff/mlp.hpp"

using namespace dydiff;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

template <bool Parallel>
void BM_AffineForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  Matrix x = random_matrix(batch, width, 1);
  Matrix w = random_matrix(width, width, 2);
  std::vector<double> b(width, 0.1);
  Matrix y(batch, width);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::affine_forward(x, w, b, y.view());
    else kernels::serial::affine_forward(x, w, b, y.view());
    benchmark::DoNotOptimize(y.flat().data());
  }
  state.SetItemsProcessed(state.iterations() * batch * width * width);
}

template <bool Parallel>
void BM_AffineBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  Matrix x = random_matrix(batch, width, 1);
  Matrix w = random_matrix(width, width, 2);
  Matrix dy = random_matrix(batch, width, 3);
  Matrix dx(batch, width);
  Matrix dw(width, width);
  std::vector<double> db(width);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::affine_backward_input(dy, w, dx.view());
      kernels::parallel::affine_backward_params(dy, x, dw.view(), db);
    } else {
      kernels::serial::affine_backward_input(dy, w, dx.view());
      kernels::serial::affine_backward_params(dy, x, dw.view(), db);
    }
    benchmark::DoNotOptimize(dx.flat().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * batch * width * width);
}

// Denoiser-sized network: window of length 100 on a 4-D state, 2-D action.
void BM_DenoiserForward(benchmark::State& state) {
  const std::size_t width = 101 * 4 + 100 * 2;
  Mlp mlp = Mlp::init({width + 1, 512, 512, 512, width}, Activation::relu, 3);
  Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), width + 1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(mlp.forward(x));
}

void BM_DenoiserTrainStep(benchmark::State& state) {
  const std::size_t width = 101 * 4 + 100 * 2;
  Mlp mlp = Mlp::init({width + 1, 512, 512, 512, width}, Activation::relu, 3);
  Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), width + 1, 4);
  Matrix up = random_matrix(x.rows(), width, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_grad(mlp, x, up));
}

void BM_SmallMlpTrainStep(benchmark::State& state) {
  Mlp mlp = Mlp::init({6, 128, 128, 1}, Activation::relu, 3);
  Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), 6, 4);
  Matrix up = random_matrix(x.rows(), 1, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_grad(mlp, x, up));
}

}  // namespace

BENCHMARK(BM_AffineForward<false>)->Args({64, 512})->Args({256, 128});
BENCHMARK(BM_AffineForward<true>)->Args({64, 512})->Args({256, 128});
BENCHMARK(BM_AffineBackward<false>)->Args({64, 512})->Args({256, 128});
BENCHMARK(BM_AffineBackward<true>)->Args({64, 512})->Args({256, 128});
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64);
BENCHMARK(BM_DenoiserTrainStep)->Arg(64);
BENCHMARK(BM_SmallMlpTrainStep)->Arg(256);

BENCHMARK_MAIN();
