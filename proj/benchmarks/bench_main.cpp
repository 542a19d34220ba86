#include <benchmark/benchmark.h>

#include <vector>

#include "proplab/anchors.hpp"
#include "proplab/box.hpp"
#include "proplab/postprocess.hpp"
#include "proplab/rng.hpp"
#include "proplab/sampling.hpp"

using namespace proplab;

namespace {

std::vector<ScoredBox> crowded_boxes(int n) {
  Rng rng = Rng::keyed(1, stream_tag("bench-boxes"));
  std::vector<ScoredBox> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.uniform(0.0, 560.0);
    const double y1 = rng.uniform(0.0, 560.0);
    ScoredBox b;
    b.box = Box(x1, y1, x1 + rng.uniform(8.0, 40.0), y1 + rng.uniform(8.0, 40.0));
    b.score = rng.uniform01();
    out.push_back(b);
  }
  return out;
}

void BM_Iou(benchmark::State& state) {
  const Box a(10, 10, 50, 50);
  const Box b(30, 30, 70, 70);
  for (auto _ : state) benchmark::DoNotOptimize(iou(a, b));
}
BENCHMARK(BM_Iou);

void BM_Nms(benchmark::State& state) {
  const auto boxes = crowded_boxes(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, 0.5));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(500)->Arg(2000)->Arg(6000)->Complexity();

void BM_NmsWithVoting(benchmark::State& state) {
  const auto boxes = crowded_boxes(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nms_with_voting(boxes, 0.5, 0.5));
}
BENCHMARK(BM_NmsWithVoting)->Arg(500)->Arg(2000);

void BM_OhemSelect(benchmark::State& state) {
  Rng rng = Rng::keyed(2, stream_tag("bench-losses"));
  std::vector<double> losses(300);
  for (double& l : losses) l = rng.uniform01();
  for (auto _ : state) benchmark::DoNotOptimize(ohem_select(losses, 300, 64));
}
BENCHMARK(BM_OhemSelect);

void BM_GenerateAnchors(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(generate_anchors(600, 600, kDefaultStride,
                                              kDefaultAnchorScales,
                                              kDefaultAspectRatios));
}
BENCHMARK(BM_GenerateAnchors);

}  // namespace

BENCHMARK_MAIN();
