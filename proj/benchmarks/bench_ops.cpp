#include <benchmark/benchmark.h>

#include "lsk/backbone.hpp"

using namespace lsk;

static void BM_ConvDepthwise(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int d = static_cast<int>(state.range(1));
  const Tensor x = seeded_normal({1, 32, 64, 64}, 1, 0.0, 1.0);
  const ConvWeights w = make_conv_seeded(ConvKind::kDepthwise, 32, 32, k, d, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(x, w));
  }
}
BENCHMARK(BM_ConvDepthwise)->Args({5, 1})->Args({7, 3})->Args({23, 1});

static void BM_LskForward(benchmark::State& state) {
  LskConfig cfg;
  cfg.channels = 32;
  cfg.plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  const LskWeights w = make_lsk_weights(cfg, 3);
  const Tensor x = seeded_normal({1, 32, 32, 32}, 4, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lsk_forward(x, cfg, w));
  }
}
BENCHMARK(BM_LskForward);

static void BM_BackboneForwardTiny(benchmark::State& state) {
  BackboneConfig cfg;
  cfg.channels = {8, 16, 24, 32};
  cfg.depths = {1, 1, 1, 1};
  cfg.plan = DecompositionPlan::from_specs({{5, 1}, {7, 3}});
  const BackboneWeights w = build_backbone(cfg, 5);
  const Tensor x = seeded_normal({1, 3, 64, 64}, 6, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(backbone_forward(x, cfg, w));
  }
}
BENCHMARK(BM_BackboneForwardTiny);

static void BM_SearchDecompositions(benchmark::State& state) {
  SearchQuery q;
  q.target_rf = 29;
  q.max_branches = 3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(search_decompositions(q));
  }
}
BENCHMARK(BM_SearchDecompositions);

BENCHMARK_MAIN();
