#include <benchmark/benchmark.h>

#include "coopnets/langevin.hpp"
#include "coopnets/parallel.hpp"

using namespace coopnets;

namespace {

DescriptorNet mlp_descriptor() {
  const std::vector<LayerSpec> layers{{LayerKind::conv, 32, 1, 1, 1, 0, 1, Nonlinearity::relu},
                                      {LayerKind::conv, 32, 1, 1, 1, 0, 1, Nonlinearity::relu},
                                      {LayerKind::fully_connected, 1, 1, 1, 1, 0, 1, Nonlinearity::identity}};
  DescriptorNet net({2, 1, 1}, layers, 0.2);
  net.set_params(init_params(net.layers(), {InitScheme::Kind::gaussian, 0.25}, 1));
  return net;
}

// args: chains, steps, threads
void BM_Revise(benchmark::State& state) {
  set_thread_count(std::size_t(state.range(2)));
  const DescriptorNet net = mlp_descriptor();
  const Tensor y0 = Tensor::batch_of(std::size_t(state.range(0)), {2, 1, 1});
  const LangevinConfig cfg{0.1, std::size_t(state.range(1)), 1.0, 3};
  for (auto _ : state) benchmark::DoNotOptimize(langevin_revise(net, y0, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
  set_thread_count(1);
}
BENCHMARK(BM_Revise)->Args({128, 10, 1})->Args({128, 10, 2});

void BM_Infer(benchmark::State& state) {
  const std::vector<LayerSpec> layers{{LayerKind::fully_connected, 8, 1, 1, 1, 0, 1, Nonlinearity::identity}};
  GeneratorNet net({2, 1, 1}, layers, 0.3);
  net.set_params(init_params(net.layers(), {InitScheme::Kind::gaussian, 1.0}, 2));
  const auto n = std::size_t(state.range(0));
  const Tensor y = Tensor::batch_of(n, {8, 1, 1});
  const Tensor x0 = Tensor::batch_of(n, {2, 1, 1});
  const LangevinConfig cfg{0.1, 10, 1.0, 4};
  for (auto _ : state) benchmark::DoNotOptimize(langevin_infer(net, y, x0, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 10);
}
BENCHMARK(BM_Infer)->Arg(256)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
