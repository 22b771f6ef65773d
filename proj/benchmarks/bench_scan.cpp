#include <benchmark/benchmark.h>

#include "nightrack/ops.hpp"
#include "nightrack/param_store.hpp"
#include "nightrack/ssm.hpp"

using namespace nightrack;

namespace {

struct ScanInputs {
  Tensor u;
  ssm::SsmParams p;
};

ScanInputs make_inputs(int64_t len, int64_t d, int64_t n) {
  Rng rng(1);
  ScanInputs in;
  in.p.A = scale(random_uniform({d, n}, 0.1f, 2.0f, rng), -1.0f);
  in.p.B = random_uniform({len, n}, -1.0f, 1.0f, rng);
  in.p.C = random_uniform({len, n}, -1.0f, 1.0f, rng);
  in.p.D_skip = random_uniform({d}, -1.0f, 1.0f, rng);
  in.p.delta = random_uniform({len, d}, 0.01f, 0.5f, rng);
  in.u = random_uniform({len, d}, -1.0f, 1.0f, rng);
  return in;
}

void BM_ScanSequential(benchmark::State& state) {
  NoGradGuard guard;
  const ScanInputs in = make_inputs(state.range(0), state.range(1), 16);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::selective_scan_seq(in.u, in.p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanParallel(benchmark::State& state) {
  NoGradGuard guard;
  const ScanInputs in = make_inputs(state.range(0), state.range(1), 16);
  const int workers = static_cast<int>(state.range(2));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::selective_scan_parallel(in.u, in.p, workers));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanBackward(benchmark::State& state) {
  ScanInputs in = make_inputs(state.range(0), state.range(1), 16);
  in.u.set_requires_grad(true);
  in.u.set_name("u");
  for (auto _ : state) benchmark::DoNotOptimize(grad_of(sum(ssm::selective_scan_seq(in.u, in.p))));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_ScanSequential)->Args({64, 32})->Args({320, 768})->Args({1023, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScanParallel)->Args({320, 768, 1})->Args({320, 768, 4})->Args({1023, 32, 1})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScanBackward)->Args({64, 32})->Args({320, 768})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
