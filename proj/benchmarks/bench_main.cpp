#include <benchmark/benchmark.h>

#include <random>

#include "ttoreg/eval.hpp"
#include "ttoreg/losses.hpp"
#include "ttoreg/network.hpp"
#include "ttoreg/synthdata.hpp"
#include "ttoreg/warp.hpp"

using namespace ttoreg;

namespace {

Volume3D noise(int n, std::uint64_t seed) {
  Volume3D v({n, n, n});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (auto& x : v.values()) x = d(rng);
  return v;
}

Field3D smooth_field(int n) { return random_bspline_ddf(3, {n, n, n}, 8.0, 2.0); }

void BM_StudentForward(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  RegistrationNetwork net(NetworkConfig::student(), 1, NetworkRole::Student);
  auto f = noise(n, 1), m = noise(n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(net.forward(f, m));
}
BENCHMARK(BM_StudentForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_StudentForwardBackward(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  RegistrationNetwork net(NetworkConfig::student(), 1, NetworkRole::Student);
  auto f = noise(n, 1), m = noise(n, 2);
  Field3D g = smooth_field(n);
  std::vector<float> grad(net.param_count());
  for (auto _ : st) {
    ForwardCache<float> cache;
    net.forward(f, m, &cache);
    net.backward(cache, g, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_StudentForwardBackward)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TeacherForward(benchmark::State& st) {
  RegistrationNetwork net(NetworkConfig::teacher(), 1, NetworkRole::Teacher);
  auto f = noise(32, 1), m = noise(32, 2);
  for (auto _ : st) benchmark::DoNotOptimize(net.forward(f, m));
}
BENCHMARK(BM_TeacherForward)->Unit(benchmark::kMillisecond);

void BM_Warp(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto m = noise(n, 1);
  auto u = smooth_field(n);
  for (auto _ : st) benchmark::DoNotOptimize(warp(m, u));
  st.SetItemsProcessed(st.iterations() * m.size());
}
BENCHMARK(BM_Warp)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MultiAxisMI(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto f = noise(n, 1), w = noise(n, 2);
  Volume3D gf(f.shape()), gw(f.shape());
  LossWeights cfg;
  for (auto _ : st) benchmark::DoNotOptimize(multi_axis_mi(f, w, cfg, &gf, &gw));
}
BENCHMARK(BM_MultiAxisMI)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PatchwiseMI(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto f = noise(n, 1), m = noise(n, 2);
  PmmConfig cfg;
  for (auto _ : st) benchmark::DoNotOptimize(patchwise_mi_map(f, m, nullptr, cfg));
}
BENCHMARK(BM_PatchwiseMI)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GeneratePair(benchmark::State& st) {
  GeneratorConfig g;
  g.shape = {32, 32, 32};
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(generate_pair(++seed, g));
}
BENCHMARK(BM_GeneratePair)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
