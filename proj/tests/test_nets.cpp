#include <doctest.h>

#include <cmath>

#include "coopnets/nets.hpp"
#include "oracles.hpp"

using namespace coopnets;

namespace {

LayerSpec fc(std::size_t out, Nonlinearity act = Nonlinearity::identity, std::size_t size = 1) {
  LayerSpec s;
  s.kind = LayerKind::fully_connected;
  s.out_channels = out;
  s.kernel_height = s.kernel_width = size;
  s.nonlinearity = act;
  return s;
}

LayerSpec conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
               Nonlinearity act = Nonlinearity::relu) {
  return {LayerKind::conv, out, k, k, stride, pad, 1, act};
}

LayerSpec deconv(std::size_t out, std::size_t k, std::size_t factor, std::size_t pad,
                 Nonlinearity act = Nonlinearity::relu) {
  return {LayerKind::deconv, out, k, k, 1, pad, factor, act};
}

DescriptorNet linear_descriptor(std::vector<double> w, double s = 1.0) {
  const std::size_t n = w.size();
  DescriptorNet net({n, 1, 1}, {fc(1)}, s);
  ParamSet p = net.params();
  p.layers[0].weight = Tensor({1, n, 1, 1}, std::move(w));
  net.set_params(p);
  return net;
}

DescriptorNet conv_descriptor(std::uint64_t seed) {
  DescriptorNet net({2, 8, 8}, {conv(3, 3, 2, 1), conv(4, 3, 1, 1, Nonlinearity::tanh), fc(2, Nonlinearity::relu)},
                    0.7);
  net.set_params(oracle::random_params(net.layers(), seed, 0.4));
  return net;
}

GeneratorNet deconv_generator(std::uint64_t seed) {
  GeneratorNet net({3, 1, 1}, {fc(4, Nonlinearity::relu, 2), deconv(3, 5, 2, 2), deconv(2, 4, 2, 1, Nonlinearity::tanh)},
                   0.3);
  net.set_params(oracle::random_params(net.layers(), seed, 0.5));
  return net;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("layer resolution") {
  const DescriptorNet d = conv_descriptor(1);
  CHECK(d.layers()[0].output_shape == Shape{3, 4, 4});
  CHECK(d.layers()[2].output_shape == Shape{2, 1, 1});
  const GeneratorNet g = deconv_generator(1);
  CHECK(g.layers()[0].output_shape == Shape{4, 2, 2});
  CHECK(g.output_shape() == Shape{2, 8, 8});
  CHECK(g.layers()[1].weight_shape() == Shape{4, 3, 5, 5});

  CHECK_THROWS_AS(resolve_descriptor_layers({1, 4, 4}, {conv(2, 7, 1, 0)}), ShapeError);
  CHECK_THROWS_AS(resolve_generator_layers({2, 2, 2}, {fc(3)}), ShapeError);
  CHECK_THROWS_AS(resolve_generator_layers({2, 1, 1}, {conv(3, 1, 1, 0)}), ShapeError);
  CHECK_THROWS_AS(DescriptorNet({1, 4, 4}, {conv(2, 3, 1, 1)}, 0.0), std::invalid_argument);
  CHECK_THROWS(resolve_descriptor_layers({1, 4}, {fc(1)}));
}

TEST_CASE("descriptor score") {
  CHECK(descriptor_score(linear_descriptor({1, 2}), Tensor({2, 1, 1}, std::vector<double>{3, 4})) == 11.0);
  CHECK(descriptor_score(linear_descriptor({0, 0}), oracle::random_tensor({2, 1, 1}, 2)) == 0.0);

  const DescriptorNet net = conv_descriptor(3);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Tensor y = oracle::random_tensor({2, 8, 8}, 10 + k);
    CHECK(std::abs(descriptor_score(net, y) - oracle::descriptor_score(net, y)) <= 1e-12);
  }
  const Tensor batch = oracle::random_tensor({3, 2, 8, 8}, 20);
  const auto scores = descriptor_scores(net, batch);
  for (std::size_t i = 0; i < 3; ++i) CHECK(scores[i] == descriptor_score(net, batch.item(i)));
}

TEST_CASE("descriptor energy") {
  const Tensor y({2, 1, 1}, std::vector<double>{3, 4});
  CHECK(descriptor_energy(linear_descriptor({0, 0}), y) == 12.5);
  const DescriptorNet net = conv_descriptor(4);
  const Tensor zero({2, 8, 8});
  CHECK(descriptor_energy(net, zero) == -descriptor_score(net, zero));
  const Tensor r = oracle::random_tensor({2, 8, 8}, 5);
  const double want = squared_norm(r) / (2 * 0.7 * 0.7) - oracle::descriptor_score(net, r);
  CHECK(std::abs(descriptor_energy(net, r) - want) <= 1e-12 * std::abs(want));
}

TEST_CASE("descriptor backward") {
  SUBCASE("linear net: input gradient is the weight vector") {
    const DescriptorGradients g = descriptor_backward(linear_descriptor({0.5, -2.0}), oracle::random_tensor({2, 1, 1}, 6));
    CHECK(g.input == Tensor({2, 1, 1}, std::vector<double>{0.5, -2.0}));
  }
  SUBCASE("dead relu unit has a zero parameter block") {
    DescriptorNet net({1, 3, 3}, {conv(2, 3, 1, 1), fc(1)}, 1.0);
    ParamSet p = oracle::random_params(net.layers(), 7, 0.5);
    p.layers[0].bias[1] = -1e3;  // unit 1 never fires on moderate inputs
    net.set_params(p);
    const DescriptorGradients g = descriptor_backward(net, oracle::random_tensor({1, 3, 3}, 8));
    for (std::size_t k = 9; k < 18; ++k) CHECK(g.params.layers[0].weight[k] == 0.0);
    CHECK(g.params.layers[0].bias[1] == 0.0);
  }
  SUBCASE("central differences") {
    const DescriptorNet net = conv_descriptor(9);
    const Tensor y = oracle::random_tensor({2, 8, 8}, 10);
    const DescriptorGradients g = descriptor_backward(net, y);
    CHECK(descriptor_input_gradient(net, y) == g.input);
    const auto pattern = descriptor_activation_pattern(net, y);
    const double h = 1e-5;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      Tensor p = y, m = y;
      p[k] += h;
      m[k] -= h;
      if (descriptor_activation_pattern(net, p) != pattern || descriptor_activation_pattern(net, m) != pattern) continue;
      CHECK(rel(g.input[k], (descriptor_score(net, p) - descriptor_score(net, m)) / (2 * h)) <= 1e-4);
      ++checked;
    }
    for (std::size_t k = 0; k < net.params().size(); ++k) {
      DescriptorNet p = net, m = net;
      p.params().coordinate(k) += h;
      m.params().coordinate(k) -= h;
      if (descriptor_activation_pattern(p, y) != pattern || descriptor_activation_pattern(m, y) != pattern) continue;
      CHECK(rel(g.params.coordinate(k), (descriptor_score(p, y) - descriptor_score(m, y)) / (2 * h)) <= 1e-4);
      ++checked;
    }
    CHECK(checked > y.size() + net.params().size() / 2);
  }
}

TEST_CASE("generator forward") {
  SUBCASE("zero input, zero biases") {
    GeneratorNet net = deconv_generator(11);
    ParamSet p = net.params();
    for (auto& l : p.layers) l.bias = Tensor(l.bias.shape());
    net.set_params(p);
    CHECK(generator_forward(net, Tensor({3, 1, 1})) == Tensor({2, 8, 8}));
  }
  SUBCASE("identity weight") {
    GeneratorNet net({3, 1, 1}, {fc(3)}, 1.0);
    ParamSet p = net.params();
    for (std::size_t i = 0; i < 3; ++i) p.layers[0].weight[i * 3 + i] = 1.0;
    net.set_params(p);
    const Tensor x = oracle::random_tensor({3, 1, 1}, 12);
    CHECK(generator_forward(net, x) == x);
  }
  SUBCASE("matches the layer-by-layer oracle") {
    const GeneratorNet net = deconv_generator(13);
    for (std::uint64_t k = 0; k < 4; ++k) {
      const Tensor x = oracle::random_tensor({3, 1, 1}, 30 + k);
      const Tensor got = generator_forward(net, x);
      const Tensor want = oracle::generator_forward(net, x);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
    }
    const Tensor xs = oracle::random_tensor({2, 3, 1, 1}, 40);
    const Tensor batch = generator_forward_batch(net, xs);
    CHECK(batch.item(1) == generator_forward(net, xs.item(1)));
  }
}

TEST_CASE("generator backward") {
  const GeneratorNet net = deconv_generator(14);
  const Tensor x = oracle::random_tensor({3, 1, 1}, 15);

  SUBCASE("zero residual") {
    const GeneratorGradients g = generator_backward(net, x, Tensor({2, 8, 8}));
    CHECK(g.latent == Tensor({3, 1, 1}));
    CHECK(squared_norm(g.params) == 0.0);
  }
  SUBCASE("linear layer: outer product") {
    GeneratorNet lin({2, 1, 1}, {fc(3)}, 1.0);
    lin.set_params(oracle::random_params(lin.layers(), 16, 1.0));
    const Tensor xl({2, 1, 1}, std::vector<double>{0.5, -1.5});
    const Tensor r({3, 1, 1}, std::vector<double>{1.0, 2.0, -3.0});
    const GeneratorGradients g = generator_backward(lin, xl, r);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(g.params.layers[0].weight[i * 3 + j] == r[j] * xl[i]);
    }
    CHECK(g.params.layers[0].bias == r.reshaped({3}));
  }
  SUBCASE("central differences of the squared residual") {
    Tensor y = generator_forward(net, x);
    axpy(0.2, oracle::random_tensor({2, 8, 8}, 17), y);
    const double s2 = net.noise_std() * net.noise_std();
    auto loss = [&](const GeneratorNet& g, const Tensor& z) { return 0.5 * squared_norm(y - generator_forward(g, z)) / s2; };
    const GeneratorGradients g = generator_backward(net, x, (1.0 / s2) * (y - generator_forward(net, x)));
    CHECK(generator_latent_gradient(net, x, (1.0 / s2) * (y - generator_forward(net, x))) == g.latent);
    const auto pattern = generator_activation_pattern(net, x);
    const double h = 1e-5;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      Tensor p = x, m = x;
      p[k] += h;
      m[k] -= h;
      if (generator_activation_pattern(net, p) != pattern || generator_activation_pattern(net, m) != pattern) continue;
      CHECK(rel(-g.latent[k], (loss(net, p) - loss(net, m)) / (2 * h)) <= 1e-4);
      ++checked;
    }
    for (std::size_t k = 0; k < net.params().size(); ++k) {
      GeneratorNet p = net, m = net;
      p.params().coordinate(k) += h;
      m.params().coordinate(k) -= h;
      if (generator_activation_pattern(p, x) != pattern || generator_activation_pattern(m, x) != pattern) continue;
      CHECK(rel(-g.params.coordinate(k), (loss(p, x) - loss(m, x)) / (2 * h)) <= 1e-4);
      ++checked;
    }
    CHECK(checked > net.params().size() / 2);
  }
}

TEST_CASE("parameter initialization") {
  const DescriptorNet d = conv_descriptor(18);
  const ParamSet zero = init_params(d.layers(), {InitScheme::Kind::zero, 0.0}, 5);
  CHECK(squared_norm(zero) == 0.0);
  CHECK(init_params(d.layers(), {}, 42) == init_params(d.layers(), {}, 42));
  CHECK_FALSE(init_params(d.layers(), {}, 42) == init_params(d.layers(), {}, 43));

  DescriptorNet big({1, 1, 1}, {fc(10000)}, 1.0);
  const ParamSet p = init_params(big.layers(), {InitScheme::Kind::gaussian, 0.01}, 7);
  const auto w = p.layers[0].weight.values();
  double m = 0.0, v = 0.0;
  for (double x : w) m += x;
  m /= double(w.size());
  for (double x : w) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / double(w.size() - 1));
  CHECK(sd >= 0.009);
  CHECK(sd <= 0.011);
  CHECK(squared_norm(p.layers[0].bias) == 0.0);
}

TEST_CASE("parameter set arithmetic") {
  const DescriptorNet d = conv_descriptor(19);
  ParamSet p = d.params();
  CHECK(p.size() == 3 * 2 * 9 + 3 + 4 * 3 * 9 + 4 + 2 * 4 * 4 * 4 + 2);
  const double c = p.coordinate(3 * 2 * 9);  // first bias of layer 0
  CHECK(c == p.layers[0].bias[0]);
  ParamSet q = p;
  q *= 2.0;
  axpy(-1.0, p, q);
  CHECK(q == p);
  CHECK_THROWS(DescriptorNet(conv_descriptor(1)).set_params(ParamSet{}));
}
