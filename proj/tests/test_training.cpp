#include <doctest.h>

#include <cmath>

#include "coopnets/training.hpp"
#include "oracles.hpp"

using namespace coopnets;

namespace {

LayerSpec fc(std::size_t out, Nonlinearity act = Nonlinearity::identity) {
  LayerSpec s;
  s.kind = LayerKind::fully_connected;
  s.out_channels = out;
  s.nonlinearity = act;
  return s;
}

DescriptorNet conv_descriptor(std::uint64_t seed) {
  DescriptorNet net({1, 6, 6}, {{LayerKind::conv, 3, 3, 3, 2, 1, 1, Nonlinearity::relu}, fc(1)}, 0.5);
  net.set_params(oracle::random_params(net.layers(), seed, 0.3));
  return net;
}

DescriptorNet mlp_descriptor(std::uint64_t seed) {
  DescriptorNet net({2, 1, 1}, {{LayerKind::conv, 8, 1, 1, 1, 0, 1, Nonlinearity::relu}, fc(1)}, 0.5);
  net.set_params(oracle::random_params(net.layers(), seed, 0.3));
  return net;
}

GeneratorNet mlp_generator(std::uint64_t seed) {
  GeneratorNet net({2, 1, 1}, {fc(8, Nonlinearity::relu), fc(2)}, 0.2);
  net.set_params(oracle::random_params(net.layers(), seed, 0.5));
  return net;
}

Tensor points(std::size_t n, std::uint64_t seed) { return oracle::random_tensor({n, 2, 1, 1}, seed); }

TrainConfig small_config(std::uint64_t iterations) {
  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.learning_rate_d = 0.01;
  cfg.learning_rate_g = 0.01;
  cfg.chains = 8;
  cfg.langevin_d = {0.05, 5, 1.0, 0};
  cfg.langevin_g = {0.05, 3, 1.0, 0};
  cfg.batch_size = 16;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("descriptor gradient estimate") {
  const DescriptorNet net = conv_descriptor(1);
  const Tensor a = oracle::random_tensor({4, 1, 6, 6}, 2);
  CHECK(squared_norm(descriptor_gradient_estimate(net, a, a)) == 0.0);

  DescriptorNet lin({3, 1, 1}, {fc(1)}, 1.0);
  lin.set_params(oracle::random_params(lin.layers(), 3, 1.0));
  const Tensor obs = oracle::random_tensor({5, 3, 1, 1}, 4);
  const Tensor syn = oracle::random_tensor({7, 3, 1, 1}, 5);
  const ParamSet g = descriptor_gradient_estimate(lin, obs, syn);
  for (std::size_t j = 0; j < 3; ++j) {
    double mo = 0.0, ms = 0.0;
    for (std::size_t i = 0; i < 5; ++i) mo += obs.item(i)[j] / 5.0;
    for (std::size_t i = 0; i < 7; ++i) ms += syn.item(i)[j] / 7.0;
    CHECK(g.layers[0].weight[j] == doctest::Approx(mo - ms).epsilon(1e-12));
  }
  CHECK(std::abs(g.layers[0].bias[0]) <= 1e-15);

  const Tensor b = oracle::random_tensor({3, 1, 6, 6}, 6);
  const ParamSet est = descriptor_gradient_estimate(net, a, b);
  ParamSet want = net.params().zeros_like();
  for (std::size_t i = 0; i < 4; ++i) axpy(1.0 / 4, descriptor_backward(net, a.item(i)).params, want);
  for (std::size_t i = 0; i < 3; ++i) axpy(-1.0 / 3, descriptor_backward(net, b.item(i)).params, want);
  for (std::size_t k = 0; k < want.size(); ++k) CHECK(std::abs(est.coordinate(k) - want.coordinate(k)) <= 1e-12);

  CHECK_THROWS(descriptor_gradient_estimate(net, Tensor::batch_of(0, {1, 6, 6}), b));
}

TEST_CASE("generator gradient estimate") {
  const GeneratorNet net = mlp_generator(7);
  const Tensor x = oracle::random_tensor({6, 2, 1, 1}, 8);
  CHECK(squared_norm(generator_gradient_estimate(net, generator_forward_batch(net, x), x)) == 0.0);

  GeneratorNet lin({2, 1, 1}, {fc(3)}, 1.0);
  lin.set_params(oracle::random_params(lin.layers(), 9, 1.0));
  const Tensor x1 = oracle::random_tensor({1, 2, 1, 1}, 10);
  const Tensor y1 = oracle::random_tensor({1, 3, 1, 1}, 11);
  const Tensor r = y1.item(0) - generator_forward(lin, x1.item(0));
  const ParamSet g = generator_gradient_estimate(lin, y1, x1);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.layers[0].weight[i * 3 + j] == doctest::Approx(r[j] * x1[i]));
  }

  // Finite differences of (1/n) sum -||Y - g(X)||^2 / (2 sigma^2).
  const Tensor y = oracle::random_tensor({6, 2, 1, 1}, 12);
  auto objective = [&](const GeneratorNet& gn) {
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s -= squared_norm(y.item(i) - generator_forward(gn, x.item(i)));
    return s / (2 * gn.noise_std() * gn.noise_std() * 6);
  };
  const ParamSet est = generator_gradient_estimate(net, y, x);
  const double h = 1e-5;
  for (std::size_t k = 0; k < net.params().size(); ++k) {
    GeneratorNet p = net, m = net;
    p.params().coordinate(k) += h;
    m.params().coordinate(k) -= h;
    const double fd = (objective(p) - objective(m)) / (2 * h);
    CHECK(std::abs(est.coordinate(k) - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(est.coordinate(k)), 1e-6}));
  }
}

TEST_CASE("sgd update") {
  DescriptorNet lin({1, 1, 1}, {fc(1)}, 1.0);
  ParamSet p = lin.params();
  p.layers[0].weight[0] = 1.0;
  p.layers[0].bias[0] = 2.0;
  ParamSet g = p.zeros_like();
  g.layers[0].weight[0] = 0.5;
  g.layers[0].bias[0] = -0.5;
  const ParamSet up = sgd_update(p, g, 0.1);
  CHECK(up.layers[0].weight[0] == doctest::Approx(1.05));
  CHECK(up.layers[0].bias[0] == doctest::Approx(1.95));
  CHECK(sgd_update(p, g, 0.0) == p);
  CHECK(sgd_update(p, p.zeros_like(), 0.1) == p);
}

TEST_CASE("train config") {
  TrainConfig cfg;
  cfg.chains = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.learning_rate_d = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.g2_inner_steps = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.lr_decay = LearningRateDecay::inverse_t;
  CHECK(cfg.rate_at(0.5, 0) == 0.5);
  CHECK(cfg.rate_at(0.5, 4) == 0.1);
  CHECK(TrainConfig{}.effective_batch(64) == 64);
  CHECK(TrainConfig{}.effective_batch(1000) == 64);
  cfg.batch_size = kFullBatch;
  CHECK(cfg.effective_batch(1000) == 1000);
}

TEST_CASE("descriptor training") {
  const DescriptorNet net = mlp_descriptor(13);
  const Tensor data = points(40, 14);
  CHECK(train_descriptor(net, data, small_config(0)).net == net);

  TrainConfig frozen = small_config(5);
  frozen.learning_rate_d = 0.0;
  CHECK(train_descriptor(net, data, frozen).net == net);

  const auto a = train_descriptor(net, data, small_config(6));
  const auto b = train_descriptor(net, data, small_config(6));
  CHECK(a.net == b.net);
  CHECK(a.metrics.rows.size() == 6);
  CHECK_FALSE(a.net == net);

  // Resume from the state after 3 iterations.
  const auto first = train_descriptor(net, data, small_config(3));
  TrainOptions resume;
  resume.resume = &first.state;
  const auto rest = train_descriptor(first.net, data, small_config(6), resume);
  CHECK(rest.net == a.net);
  CHECK(rest.state == a.state);
}

TEST_CASE("descriptor training with a fixed chain source equals cooperative training with a frozen generator") {
  const DescriptorNet d = mlp_descriptor(15);
  const GeneratorNet g = mlp_generator(16);
  const Tensor data = points(40, 17);
  TrainConfig cfg = small_config(5);
  cfg.learning_rate_g = 0.0;
  cfg.g0_noise = false;
  TrainOptions source;
  source.chain_source = &g;
  const auto alone = train_descriptor(d, data, cfg, source);
  const auto coop = train_coopnets(d, g, data, cfg);
  CHECK(alone.net == coop.descriptor);
  CHECK(coop.generator == g);
}

TEST_CASE("generator training") {
  const GeneratorNet net = mlp_generator(18);
  const Tensor data = points(20, 19);
  CHECK(train_generator(net, data, small_config(0)).net == net);

  TrainConfig frozen = small_config(4);
  frozen.learning_rate_g = 0.0;
  const auto r = train_generator(net, data, frozen);
  CHECK(r.net == net);
  Tensor initial = Tensor::batch_of(20, {2, 1, 1});
  Engine e(derive_seed(frozen.seed, 0x60));
  fill_normal(e, initial.values());
  CHECK_FALSE(r.latents == initial);

  TrainConfig no_inference = small_config(2);
  no_inference.langevin_g.steps = 0;
  CHECK_THROWS(train_generator(net, data, no_inference));
}

TEST_CASE("cooperative training") {
  const DescriptorNet d = mlp_descriptor(20);
  const GeneratorNet g = mlp_generator(21);
  const Tensor data = points(30, 22);

  const auto zero = train_coopnets(d, g, data, small_config(0));
  CHECK(zero.descriptor == d);
  CHECK(zero.generator == g);

  SUBCASE("no revision and no noise leaves the generator in place") {
    TrainConfig cfg = small_config(4);
    cfg.langevin_d.steps = 0;
    cfg.langevin_g.steps = 0;
    cfg.g0_noise = false;
    const auto r = train_coopnets(d, g, data, cfg);
    CHECK(r.generator == g);
    CHECK_FALSE(r.descriptor == d);
    CHECK(r.state.chains.revised == r.state.chains.drafts);
  }
  SUBCASE("without inference steps G1 keeps the drafted latents") {
    TrainConfig cfg = small_config(3);
    cfg.langevin_g.steps = 0;
    const auto r = train_coopnets(d, g, data, cfg);
    // S3 = g(X) after the update; with X = X-hat it is reproducible from the
    // recorded latents alone.
    CHECK(r.state.chains.reconstructions == generator_forward_batch(r.generator, r.state.chains.latents));
  }
  SUBCASE("determinism and resume") {
    const TrainConfig cfg = small_config(8);
    const auto a = train_coopnets(d, g, data, cfg);
    const auto b = train_coopnets(d, g, data, cfg);
    CHECK(a.descriptor == b.descriptor);
    CHECK(a.generator == b.generator);
    CHECK(a.metrics.rows == b.metrics.rows);

    const auto half = train_coopnets(d, g, data, small_config(4));
    TrainOptions opt;
    opt.resume = &half.state;
    const auto rest = train_coopnets(half.descriptor, half.generator, data, cfg, opt);
    CHECK(rest.descriptor == a.descriptor);
    CHECK(rest.generator == a.generator);
    CHECK(rest.state == a.state);
  }
  SUBCASE("a diverging step size reports the iteration") {
    TrainConfig cfg = small_config(3);
    cfg.langevin_d = {50.0, 40, 1.0, 0};
    try {
      train_coopnets(d, g, data, cfg);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.iteration().has_value());
    }
  }
  SUBCASE("metrics are finite") {
    const auto r = train_coopnets(d, g, data, small_config(5));
    for (const auto& row : r.metrics.rows) {
      CHECK(std::isfinite(row.grad_norm_d));
      CHECK(std::isfinite(row.feature_gap));
      CHECK(std::isfinite(row.recon_error));
      CHECK(std::isfinite(row.energy_s1 + row.energy_s2 + row.energy_s3));
    }
  }
}

TEST_CASE("ancestral sampling") {
  const GeneratorNet g = mlp_generator(23);
  Tensor latents;
  const Tensor clean = ancestral_sample(g, 5, 7, false, &latents);
  CHECK(clean == generator_forward_batch(g, latents));
  CHECK_FALSE(ancestral_sample(g, 5, 7, true) == clean);
  CHECK(ancestral_sample(g, 5, 7, true) == ancestral_sample(g, 5, 7, true));
}
