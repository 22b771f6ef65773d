#include <benchmark/benchmark.h>

#include "nightrack/ops.hpp"
#include "nightrack/param_store.hpp"

using namespace nightrack;

namespace {

void BM_Linear(benchmark::State& state) {
  NoGradGuard guard;
  Rng rng(1);
  const int64_t rows = state.range(0), d_in = state.range(1), d_out = state.range(2);
  const Tensor x = random_uniform({rows, d_in}, -1, 1, rng);
  const Tensor w = random_uniform({d_out, d_in}, -1, 1, rng);
  const Tensor b = random_uniform({d_out}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b));
  state.SetItemsProcessed(state.iterations() * rows * d_in * d_out);
}

void BM_Conv2d(benchmark::State& state) {
  NoGradGuard guard;
  Rng rng(2);
  const int64_t c = state.range(0), size = state.range(1), k = state.range(2);
  const Tensor x = random_uniform({c, size, size}, -1, 1, rng);
  const Tensor w = random_uniform({c, c, k, k}, -1, 1, rng);
  const Tensor b = Tensor::zeros({c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, {.stride = 1, .padding = k / 2, .groups = 1}));
}

void BM_DepthwiseConv2d(benchmark::State& state) {
  NoGradGuard guard;
  Rng rng(3);
  const int64_t c = state.range(0), size = state.range(1);
  const Tensor x = random_uniform({c, size, size}, -1, 1, rng);
  const Tensor w = random_uniform({c, 1, 5, 5}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor::zeros({c}), {.stride = 1, .padding = 2, .groups = c}));
}

void BM_LayerNorm(benchmark::State& state) {
  NoGradGuard guard;
  Rng rng(4);
  const int64_t rows = state.range(0), d = state.range(1);
  const Tensor x = random_uniform({rows, d}, -1, 1, rng);
  const Tensor g = Tensor::full({d}, 1.0f), b = Tensor::zeros({d});
  for (auto _ : state) benchmark::DoNotOptimize(layer_norm(x, g, b));
}

void BM_LinearBackward(benchmark::State& state) {
  Rng rng(5);
  const int64_t rows = state.range(0), d = state.range(1);
  Tensor x = random_uniform({rows, d}, -1, 1, rng);
  Tensor w = random_uniform({d, d}, -1, 1, rng);
  w.set_requires_grad(true);
  w.set_name("w");
  for (auto _ : state) benchmark::DoNotOptimize(grad_of(sum(linear(x, w, std::nullopt))));
}

}  // namespace

BENCHMARK(BM_Linear)->Args({320, 384, 768})->Args({256, 768, 384})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Conv2d)->Args({40, 64, 3})->Args({80, 32, 3})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DepthwiseConv2d)->Args({40, 64})->Args({40, 256})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LayerNorm)->Args({320, 384})->Args({4096, 40})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LinearBackward)->Args({320, 384})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
