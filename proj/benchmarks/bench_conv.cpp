#include <benchmark/benchmark.h>

#include "coopnets/nets.hpp"
#include "coopnets/rng.hpp"
#include "coopnets/tensor.hpp"

using namespace coopnets;

namespace {

Tensor random(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Engine e(seed);
  fill_normal(e, t.values());
  return t;
}

// args: channels, edge, kernel, stride
void BM_Convolve(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto n = std::size_t(state.range(1));
  const auto k = std::size_t(state.range(2));
  const ConvSpec spec{k, k, std::size_t(state.range(3)), k / 2, c, c};
  const Tensor x = random({c, n, n}, 1);
  const Tensor w = random(spec.filter_shape(), 2);
  const Tensor b({c});
  for (auto _ : state) benchmark::DoNotOptimize(convolve2d(x, w, b, spec));
}
BENCHMARK(BM_Convolve)->Args({3, 64, 5, 2})->Args({16, 32, 3, 1})->Args({64, 16, 3, 1});

void BM_TransposeConvolve(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto n = std::size_t(state.range(1));
  const ConvSpec spec{5, 5, 2, 2, c, c};
  const Tensor w = random(spec.filter_shape(), 3);
  const Tensor y = random({c, n / 2, n / 2}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(transpose_convolve2d(y, w, spec, n, n));
}
BENCHMARK(BM_TransposeConvolve)->Args({3, 64})->Args({32, 32});

void BM_DescriptorBackward(benchmark::State& state) {
  const std::vector<LayerSpec> layers{{LayerKind::conv, 32, 5, 5, 2, 2, 1, Nonlinearity::relu},
                                      {LayerKind::conv, 64, 3, 3, 2, 1, 1, Nonlinearity::relu},
                                      {LayerKind::fully_connected, 1, 1, 1, 1, 0, 1, Nonlinearity::identity}};
  DescriptorNet net({3, 32, 32}, layers, 0.016);
  net.set_params(init_params(net.layers(), {}, 5));
  const Tensor y = random({3, 32, 32}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(descriptor_backward(net, y));
}
BENCHMARK(BM_DescriptorBackward);

void BM_GeneratorBackward(benchmark::State& state) {
  const std::vector<LayerSpec> layers{{LayerKind::fully_connected, 64, 4, 4, 1, 0, 1, Nonlinearity::relu},
                                      {LayerKind::deconv, 32, 5, 5, 1, 2, 2, Nonlinearity::relu},
                                      {LayerKind::deconv, 3, 5, 5, 1, 2, 2, Nonlinearity::tanh}};
  GeneratorNet net({16, 1, 1}, layers, 0.3);
  net.set_params(init_params(net.layers(), {}, 7));
  const Tensor x = random({16, 1, 1}, 8);
  const Tensor r = random({3, 16, 16}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(generator_backward(net, x, r));
}
BENCHMARK(BM_GeneratorBackward);

}  // namespace
