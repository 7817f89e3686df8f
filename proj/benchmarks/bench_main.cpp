#include <benchmark/benchmark.h>

#include "bcr/attack.hpp"
#include "bcr/encoder.hpp"
#include "bcr/experiment.hpp"
#include "bcr/metrics.hpp"
#include "bcr/roi.hpp"

namespace {

using namespace bcr;

const Box kObject{6, 6, 10, 10};

EncoderDescriptor descriptor(int res) {
  EncoderDescriptor d;
  d.input_resolution = res;
  return d;
}

void BM_Forward(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  const auto enc = toy_encoder(7, descriptor(res));
  const auto img = experiment::make_toy_scene(7, res, kObject);
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(*enc, img, {1, 2, 3, 4}));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(32);

void BM_ForwardBackward(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  const auto enc = toy_encoder(7, descriptor(res));
  const auto img = experiment::make_toy_scene(7, res, kObject);
  const RoiSpec roi{{kObject}};
  const AttackConfig config = default_config();
  const auto clean = extract_features(*enc, img, config.layers);
  const auto part = partition_tokens(roi, res, res, enc->descriptor().patch_size);
  const auto mask = build_pixel_mask(roi, res, res);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_objective(*enc, img, clean, part, mask, config));
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(32);

void BM_AttackTenSteps(benchmark::State& state) {
  const auto enc = toy_encoder(7, descriptor(16));
  const auto img = experiment::make_toy_scene(7, 16, kObject);
  AttackConfig config = default_config();
  config.steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(run_bcr_attack(*enc, img, RoiSpec{{kObject}}, config));
}
BENCHMARK(BM_AttackTenSteps)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  const auto a = experiment::make_toy_scene(1, res, kObject);
  const auto b = experiment::make_toy_scene(2, res, kObject);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128);

}  // namespace
BENCHMARK_MAIN();
