#include <benchmark/benchmark.h>

#include "deepbet/geometry.hpp"
#include "deepbet/network.hpp"
#include "deepbet/phantom.hpp"
#include "deepbet/postprocess.hpp"
#include "deepbet/preprocess.hpp"

namespace {

using namespace deepbet;

Phantom head(std::int64_t n) {
  PhantomSpec s;
  s.seed = 3;
  s.dims = {n, n, n};
  return generate(s);
}

void BM_Forward3D(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(1);
  const auto w = build_linknet(NetworkConfig::linknet_3d(static_cast<int>(state.range(1))), rng);
  nn::Tensor<float> x(1, 1, {n, n, n});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, x));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Forward3D)->Args({64, 8})->Args({128, 8})->Args({64, 16})->Unit(benchmark::kMillisecond);

void BM_Forward2D(benchmark::State& state) {
  const std::int64_t n = state.range(0), batch = state.range(1);
  Rng rng(2);
  const auto w = build_linknet(NetworkConfig::linknet_2d(16), rng);
  nn::Tensor<float> x(batch, 5, {n, n, 1});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, x));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Forward2D)->Args({128, 8})->Unit(benchmark::kMillisecond);

void BM_LargestComponent(benchmark::State& state) {
  const auto m = binarize(head(state.range(0)).mask, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(largest_component(m));
}
BENCHMARK(BM_LargestComponent)->Arg(96)->Arg(160)->Unit(benchmark::kMillisecond);

void BM_FillHoles(benchmark::State& state) {
  const auto m = binarize(head(state.range(0)).mask, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(fill_holes(m));
}
BENCHMARK(BM_FillHoles)->Arg(96)->Arg(160)->Unit(benchmark::kMillisecond);

void BM_Resample(benchmark::State& state) {
  const Volume v = head(96).image;
  const std::int64_t n = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(resample(v, {n, n, n}));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Resample)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_RotateAboutCenter(benchmark::State& state) {
  const Volume v = head(96).image;
  for (auto _ : state) benchmark::DoNotOptimize(rotate_about_center(v, 0, 30.0));
}
BENCHMARK(BM_RotateAboutCenter)->Unit(benchmark::kMillisecond);

void BM_Preprocess(benchmark::State& state) {
  const Volume v = head(96).image;
  for (auto _ : state) benchmark::DoNotOptimize(preprocess(v, PreprocessConfig{}));
}
BENCHMARK(BM_Preprocess)->Unit(benchmark::kMillisecond);

void BM_Phantom(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(head(n));
}
BENCHMARK(BM_Phantom)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
