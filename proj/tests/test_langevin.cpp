#include <doctest.h>

#include <cmath>

#include "coopnets/langevin.hpp"
#include "oracles.hpp"

using namespace coopnets;

namespace {

LayerSpec linear_fc(std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::fully_connected;
  s.out_channels = out;
  s.nonlinearity = Nonlinearity::identity;
  return s;
}

DescriptorNet flat(double s) { return DescriptorNet({1, 1, 1}, {linear_fc(1)}, s); }

GeneratorNet scalar_generator(double w, double sigma) {
  GeneratorNet net({1, 1, 1}, {linear_fc(1)}, sigma);
  ParamSet p = net.params();
  p.layers[0].weight[0] = w;
  net.set_params(p);
  return net;
}

GeneratorNet small_generator(std::uint64_t seed) {
  LayerSpec h = linear_fc(5);
  h.nonlinearity = Nonlinearity::tanh;
  h.kernel_height = h.kernel_width = 2;
  LayerSpec d{LayerKind::deconv, 1, 3, 3, 1, 1, 2, Nonlinearity::identity};
  GeneratorNet net({2, 1, 1}, {h, d}, 0.5);
  net.set_params(oracle::random_params(net.layers(), seed, 0.6));
  return net;
}

}  // namespace

TEST_CASE("revision") {
  const Tensor y0 = oracle::random_tensor({4, 1, 1, 1}, 1);
  CHECK(langevin_revise(flat(1.0), y0, {0.1, 0, 1.0, 3}) == y0);

  const Tensor one({1, 1, 1, 1}, 1.0);
  const Tensor y1 = langevin_revise(flat(1.0), one, {0.1, 1, 0.0, 3});
  CHECK(y1[0] == doctest::Approx(0.995).epsilon(1e-15));

  // Same seeds give the same chains; a different seed does not.
  const LangevinConfig cfg{0.1, 5, 1.0, 9};
  CHECK(langevin_revise(flat(1.0), y0, cfg) == langevin_revise(flat(1.0), y0, cfg));
  CHECK_FALSE(langevin_revise(flat(1.0), y0, cfg) == langevin_revise(flat(1.0), y0, {0.1, 5, 1.0, 10}));

  // Chain i does not depend on the other chains.
  const Tensor single = langevin_revise(flat(1.0), Tensor::stack(std::vector<Tensor>{y0.item(0)}), cfg);
  CHECK(single.item(0) == langevin_revise(flat(1.0), y0, cfg).item(0));
}

TEST_CASE("revision divergence guard") {
  const Tensor y0({1, 1, 1, 1}, 1.0);
  CHECK_THROWS_AS(langevin_revise(flat(0.01), y0, {10.0, 50, 0.0, 0}), DivergenceError);
  CHECK_THROWS_AS((LangevinConfig{-0.1, 1, 1.0, 0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((LangevinConfig{0.1, 1, -1.0, 0}).validate(), std::invalid_argument);
}

TEST_CASE("stationary variance of the flat chain") {
  constexpr double delta = 0.05;
  Tensor y = Tensor::batch_of(1000, {1, 1, 1});
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (std::size_t seg = 0; seg < 100; ++seg) {
    y = langevin_revise(flat(1.0), y, {delta, 100, 1.0, derive_seed(17, seg)});
    if (seg < 30) continue;
    for (double v : y.values()) {
      sum += v;
      sq += v * v;
      ++count;
    }
  }
  const double var = sq / double(count) - (sum / double(count)) * (sum / double(count));
  CHECK(std::abs(var / (1.0 / (1.0 - delta * delta / 4.0)) - 1.0) <= 0.05);
}

TEST_CASE("inference") {
  const GeneratorNet g = scalar_generator(1.0, 1.0);
  const Tensor y({1, 1, 1, 1}, 2.0);
  const Tensor x0 = Tensor::batch_of(1, {1, 1, 1});
  CHECK(langevin_infer(g, y, x0, {0.2, 0, 1.0, 0}) == x0);
  CHECK(langevin_infer(g, y, x0, {0.2, 1, 0.0, 0})[0] == doctest::Approx(0.04).epsilon(1e-15));
}

TEST_CASE("masked inference") {
  const GeneratorNet g = small_generator(3);
  const Tensor y = oracle::random_tensor({3, 1, 4, 4}, 4);
  const Tensor x0 = oracle::random_tensor({3, 2, 1, 1}, 5);
  const LangevinConfig cfg{0.05, 20, 1.0, 6};
  CHECK(langevin_infer_masked(g, y, Mask::all_observed({1, 4, 4}), x0, cfg) == langevin_infer(g, y, x0, cfg));

  const Tensor x1 = langevin_infer_masked(g, y, Mask(Tensor({1, 4, 4})), x0, {0.05, 1, 0.0, 6});
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(x1[i] == doctest::Approx(x0[i] * (1 - 0.05 * 0.05 / 2)).epsilon(1e-14));

  CHECK_THROWS(Mask(Tensor({2}, std::vector<double>{0.5, 1.0})));
}

TEST_CASE("masked log-joint gradient against central differences") {
  const GeneratorNet g = small_generator(7);
  const Tensor y = oracle::random_tensor({1, 4, 4}, 8);
  Tensor mask({1, 4, 4}, 1.0);
  for (std::size_t k : {0, 5, 6, 9, 15}) mask[k] = 0.0;
  const Tensor x = oracle::random_tensor({2, 1, 1}, 9);
  const double s2 = g.noise_std() * g.noise_std();
  auto objective = [&](const Tensor& z) {
    const Tensor r = hadamard(mask, y - generator_forward(g, z));
    return 0.5 * squared_norm(r) / s2 + 0.5 * squared_norm(z);
  };
  const Tensor grad = log_joint_latent_gradient(g, y, x, &mask);
  const double h = 1e-5;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Tensor p = x, m = x;
    p[k] += h;
    m[k] -= h;
    const double fd = -(objective(p) - objective(m)) / (2 * h);
    CHECK(std::abs(grad[k] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-8));
  }
}

TEST_CASE("KL decay oracle") {
  const auto flat_kl = kl_decay_oracle(0.5, 0.75, 1.0, 1.0, 20);
  CHECK(flat_kl.size() == 21);
  for (double v : flat_kl) CHECK(v == 0.0);

  const auto one = kl_decay_oracle(0.9, 0.19, 1.0, 4.0, 0);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == doctest::Approx(0.5 * (3.0 - std::log(4.0))));

  const double delta = 0.05;
  const auto kl = kl_decay_oracle(1 - delta * delta / 2, delta * delta, 1.0, 4.0, 10000);
  for (std::size_t t = 1; t < kl.size(); ++t) REQUIRE(kl[t] < kl[t - 1]);
  CHECK(kl.back() < 1e-3);

  CHECK_THROWS(kl_decay_oracle(0.5, 0.0, 1.0, 1.0, 3));
}
