#include <benchmark/benchmark.h>

#include "nightrack/mlle.hpp"
#include "nightrack/vltrack.hpp"

using namespace nightrack;

namespace {

void BM_Enhance(benchmark::State& state) {
  NoGradGuard guard;
  ParamStore store;
  Rng rng(1);
  const mlle::EnhancerParams p = mlle::enhancer_params(ParamBuilder(store, &rng));
  const int64_t size = state.range(0);
  const Tensor img = random_uniform({3, size, size}, 0.0f, 0.3f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mlle::enhance(img, p));
  state.SetItemsProcessed(state.iterations() * size * size);
}

// One tracker update per iteration; range(0) toggles enhancement, range(1) the visual depth.
void BM_TrackerUpdate(benchmark::State& state) {
  vltrack::TrackerConfig cfg;
  cfg.enhance = state.range(0) != 0;
  cfg.visual_depth = state.range(1);
  ParamStore store = vltrack::init_weights(7, cfg);
  const vltrack::Model model = vltrack::bind_model(store, cfg);
  vltrack::SyntheticOptions so;
  so.frames = 2;
  so.brightness = 0.3f;
  const vltrack::SyntheticSequence seq = vltrack::make_synthetic_sequence(so);
  vltrack::Tracker tracker(model);
  tracker.init(seq.frames[0], seq.boxes[0], seq.prompt);
  for (auto _ : state) benchmark::DoNotOptimize(tracker.update(seq.frames[1]));
  state.SetItemsProcessed(state.iterations());
}

void BM_TrainStep(benchmark::State& state) {
  vltrack::TrackerConfig cfg;
  cfg.enhance = false;
  ParamStore store = vltrack::init_weights(1, cfg);
  const vltrack::SyntheticSequence seq = vltrack::make_synthetic_sequence();
  vltrack::TrainOptions opt;
  opt.steps = 1;
  for (auto _ : state) vltrack::train_tracker(seq.frames, seq.boxes, seq.prompt, store, cfg, opt);
}

}  // namespace

BENCHMARK(BM_Enhance)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrackerUpdate)->Args({0, 4})->Args({1, 4})->Args({0, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
