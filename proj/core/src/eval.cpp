#include "coopnets/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "coopnets/commands.hpp"
#include "coopnets/inpaint.hpp"
#include "coopnets/parallel.hpp"
#include "coopnets/rng.hpp"

namespace coopnets {

namespace fs = std::filesystem;

bool CriterionResult::passed() const {
  return !checks.empty() && std::ranges::all_of(checks, [](const CheckResult& c) { return c.passed; });
}

std::string CriterionResult::summary() const {
  std::string line = fmt::format("{} {:>2} {}", passed() ? "PASS" : "FAIL", id, title);
  for (const auto& c : checks) {
    line += fmt::format("  {}={:.4g} ({} {:.4g}){}", c.name, c.measured, c.relation, c.threshold, c.passed ? "" : "!");
  }
  return line;
}

namespace {

CheckResult make_check(std::string name, double measured, std::string relation, double threshold,
                       std::string detail = {}) {
  CheckResult c{std::move(name), measured, std::move(relation), threshold, false, std::move(detail)};
  if (std::isfinite(measured)) {
    c.passed = c.relation == "<=" ? measured <= threshold : measured >= threshold;
  }
  return c;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double normal_draw(Engine& engine) { return std::normal_distribution<double>(0.0, 1.0)(engine); }

// He-style scale so every preset's activations stay O(1) and relu patterns are
// mixed, which keeps finite differences away from degenerate regimes.
ParamSet gradient_check_params(const std::vector<Layer>& layers, std::uint64_t seed) {
  ParamSet p;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Engine engine(derive_seed(seed, l));
    const Shape ws = layers[l].weight_shape();
    Tensor w(ws);
    const double fan = double(w.size()) / double(ws[0]);
    fill_normal(engine, w.values(), std::sqrt(2.0 / fan));
    Tensor b({layers[l].bias_size()});
    fill_normal(engine, b.values(), 0.1);
    p.layers.push_back({std::move(w), std::move(b)});
  }
  return p;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

const char* const kGradientPresets[] = {"toy2d", "linear", "texture", "object", "face", "scene"};

}  // namespace

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

RunConfig shrink_for_gradient_check(RunConfig cfg) {
  constexpr std::size_t kMaxEdge = 16;
  constexpr std::size_t kMaxChannels = 3;
  auto& d = cfg.dataset;
  d.channels = std::min(d.channels, kMaxChannels);
  d.size = std::min(d.size, kMaxEdge);
  d.patch_size = std::min(d.patch_size, kMaxEdge);
  if (!d.signal_shape.empty()) {
    d.signal_shape[0] = std::min(d.signal_shape[0], kMaxChannels);
    d.signal_shape[1] = std::min(d.signal_shape[1], kMaxEdge);
    d.signal_shape[2] = std::min(d.signal_shape[2], kMaxEdge);
  }
  const Shape signal = signal_shape(cfg);

  if (cfg.descriptor) {
    for (auto& l : cfg.descriptor->layers) l.out_channels = std::min(l.out_channels, kMaxChannels);
  }
  if (cfg.generator) {
    auto& g = *cfg.generator;
    auto& layers = g.layers;
    for (auto& l : layers) l.out_channels = std::min(l.out_channels, kMaxChannels);
    layers.back().out_channels = signal[0];
    g.latent_shape[0] = std::min(g.latent_shape[0], kMaxChannels);

    // Re-fit the spatial size: the base grid (latent or first fc) times the
    // remaining upsampling must equal the signal edge. Leading deconv layers
    // are dropped until it does.
    const bool fc_first = layers.front().kind == LayerKind::fully_connected;
    auto upsampling = [&] {
      std::size_t u = 1;
      for (const auto& l : layers) u *= l.kind == LayerKind::deconv ? l.upsample_factor : 1;
      return u;
    };
    const std::size_t first_deconv = fc_first ? 1 : 0;
    while (signal[1] % upsampling() != 0 && layers.size() > first_deconv + 1 &&
           layers[first_deconv].kind == LayerKind::deconv) {
      layers.erase(layers.begin() + static_cast<std::ptrdiff_t>(first_deconv));
    }
    const std::size_t base_h = signal[1] / upsampling();
    const std::size_t base_w = signal[2] / upsampling();
    if (fc_first) {
      layers.front().kernel_height = base_h;
      layers.front().kernel_width = base_w;
    } else {
      g.latent_shape[1] = base_h;
      g.latent_shape[2] = base_w;
    }
  }
  return cfg;
}

GradientCheckStats finite_difference_check(const RunConfig& cfg, std::size_t coordinates, std::uint64_t seed) {
  constexpr double h = 1e-5;
  GradientCheckStats stats;
  Engine engine(seed);
  const Shape signal = signal_shape(cfg);

  if (cfg.descriptor) {
    DescriptorNet net(signal, cfg.descriptor->layers, cfg.descriptor->reference_std);
    net.set_params(gradient_check_params(net.layers(), derive_seed(seed, 1)));
    Tensor y(signal);
    fill_normal(engine, y.values(), 0.5);
    const DescriptorGradients grads = descriptor_backward(net, y);
    const auto pattern = descriptor_activation_pattern(net, y);
    const std::size_t n_in = y.size();
    const std::size_t total = n_in + net.params().size();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t attempts = 0; stats.descriptor_checked < coordinates && attempts < 50 * coordinates;
         ++attempts) {
      const std::size_t k = pick(engine);
      DescriptorNet probe = net;
      Tensor yp = y;
      double& slot = k < n_in ? yp[k] : probe.params().coordinate(k - n_in);
      const double analytic = k < n_in ? grads.input[k] : grads.params.coordinate(k - n_in);
      const double orig = slot;
      slot = orig + h;
      const double f_plus = descriptor_score(probe, yp);
      const bool same_plus = descriptor_activation_pattern(probe, yp) == pattern;
      slot = orig - h;
      const double f_minus = descriptor_score(probe, yp);
      const bool same_minus = descriptor_activation_pattern(probe, yp) == pattern;
      if (!same_plus || !same_minus) {
        ++stats.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2 * h);
      stats.descriptor_max_rel = std::max(stats.descriptor_max_rel, relative_error(analytic, numeric));
      ++stats.descriptor_checked;
    }
  }

  if (cfg.generator) {
    GeneratorNet net(cfg.generator->latent_shape, cfg.generator->layers, cfg.generator->noise_std);
    net.set_params(gradient_check_params(net.layers(), derive_seed(seed, 2)));
    Tensor x(net.latent_shape());
    fill_normal(engine, x.values());
    Tensor target = generator_forward(net, x);
    for (double& v : target.values()) v += 0.1 * normal_draw(engine);
    const double inv_var = 1.0 / (net.noise_std() * net.noise_std());
    // L(X, W) = ||Y - g(X)||^2 / (2 sigma^2); dL = -J^T (Y - g) / sigma^2
    auto objective = [&](const GeneratorNet& g, const Tensor& latent) {
      const Tensor r = target - generator_forward(g, latent);
      return 0.5 * inv_var * squared_norm(r);
    };
    const Tensor residual = inv_var * (target - generator_forward(net, x));
    const GeneratorGradients grads = generator_backward(net, x, residual);
    const auto pattern = generator_activation_pattern(net, x);
    const std::size_t n_in = x.size();
    const std::size_t total = n_in + net.params().size();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t attempts = 0; stats.generator_checked < coordinates && attempts < 50 * coordinates;
         ++attempts) {
      const std::size_t k = pick(engine);
      GeneratorNet probe = net;
      Tensor xp = x;
      double& slot = k < n_in ? xp[k] : probe.params().coordinate(k - n_in);
      const double analytic = -(k < n_in ? grads.latent[k] : grads.params.coordinate(k - n_in));
      const double orig = slot;
      slot = orig + h;
      const double l_plus = objective(probe, xp);
      const bool same_plus = generator_activation_pattern(probe, xp) == pattern;
      slot = orig - h;
      const double l_minus = objective(probe, xp);
      const bool same_minus = generator_activation_pattern(probe, xp) == pattern;
      if (!same_plus || !same_minus) {
        ++stats.skipped_kinks;
        continue;
      }
      const double numeric = (l_plus - l_minus) / (2 * h);
      stats.generator_max_rel = std::max(stats.generator_max_rel, relative_error(analytic, numeric));
      ++stats.generator_checked;
    }
  }
  return stats;
}

CriterionResult check_gradient_fidelity() {
  CriterionResult r{1, "gradient-fidelity", {}};
  std::uint64_t seed = 101;
  for (const char* name : kGradientPresets) {
    const RunConfig cfg = shrink_for_gradient_check(load_run_config(name));
    validate_run_config(cfg, TrainMode::coopnets);
    const GradientCheckStats s = finite_difference_check(cfg, 100, seed++);
    const bool enough = s.descriptor_checked == 100 && s.generator_checked == 100;
    const std::string detail = fmt::format("signal {}, {} + {} coordinates, {} skipped at relu kinks",
                                           shape_to_string(signal_shape(cfg)), s.descriptor_checked,
                                           s.generator_checked, s.skipped_kinks);
    r.checks.push_back(make_check(fmt::format("{}_descriptor_rel", name),
                                  enough ? s.descriptor_max_rel : INFINITY, "<=", 1e-4, detail));
    r.checks.push_back(make_check(fmt::format("{}_generator_rel", name),
                                  enough ? s.generator_max_rel : INFINITY, "<=", 1e-4, detail));
  }
  return r;
}

// ---------------------------------------------------------------------------
// 2. Adjoint identity

namespace {

double adjoint_gap(const ConvSpec& spec, std::size_t h, std::size_t w, Engine& engine, double* rel_to_value) {
  Tensor x({spec.in_channels, h, w});
  Tensor filters(spec.filter_shape());
  Tensor y({spec.out_channels, spec.output_height(h), spec.output_width(w)});
  fill_normal(engine, x.values());
  fill_normal(engine, filters.values());
  fill_normal(engine, y.values());
  const Tensor zero_bias({spec.out_channels});
  const double lhs = dot(convolve2d(x, filters, zero_bias, spec), y);
  const double rhs = dot(x, transpose_convolve2d(y, filters, spec, h, w));
  if (rel_to_value) *rel_to_value = relative_error(lhs, rhs);
  return std::abs(lhs - rhs) / (std::sqrt(squared_norm(x)) * std::sqrt(squared_norm(y)));
}

}  // namespace

CriterionResult check_adjoint_identity() {
  CriterionResult r{2, "adjoint-identity", {}};
  Engine engine(202);
  auto draw = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(engine); };

  double worst = 0.0;
  double worst_value_rel = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ConvSpec spec;
    spec.kernel_height = draw(1, 5);
    spec.kernel_width = draw(1, 5);
    spec.stride = draw(1, 3);
    spec.padding = draw(0, std::min(spec.kernel_height, spec.kernel_width) - 1);
    spec.in_channels = draw(1, 4);
    spec.out_channels = draw(1, 4);
    const std::size_t h = draw(spec.kernel_height, spec.kernel_height + 12);
    const std::size_t w = draw(spec.kernel_width, spec.kernel_width + 12);
    double value_rel = 0.0;
    worst = std::max(worst, adjoint_gap(spec, h, w, engine, &value_rel));
    worst_value_rel = std::max(worst_value_rel, value_rel);
  }
  r.checks.push_back(make_check("random_specs", worst, "<=", 1e-10,
                                fmt::format("50 random specs; max |<Ax,y>-<x,A^T y>|/(|x||y|), value-relative {:.3g}",
                                            worst_value_rel)));

  // Every conv geometry used by the bundled presets, at native size with
  // channel counts capped at 4.
  double catalog = 0.0;
  std::size_t count = 0;
  for (const auto& preset : bundled_presets()) {
    const RunConfig cfg = load_run_config(std::string(preset.name));
    // Descriptor layers run their conv on the input grid, generator layers
    // transpose a conv that runs on their output grid.
    std::vector<std::pair<ConvSpec, Shape>> geometries;
    if (cfg.descriptor) {
      for (const auto& l : resolve_descriptor_layers(signal_shape(cfg), cfg.descriptor->layers)) {
        geometries.emplace_back(l.conv, l.input_shape);
      }
    }
    if (cfg.generator) {
      for (const auto& l : resolve_generator_layers(cfg.generator->latent_shape, cfg.generator->layers)) {
        geometries.emplace_back(l.conv, l.output_shape);
      }
    }
    for (auto [spec, grid] : geometries) {
      spec.in_channels = std::min<std::size_t>(spec.in_channels, 4);
      spec.out_channels = std::min<std::size_t>(spec.out_channels, 4);
      catalog = std::max(catalog, adjoint_gap(spec, grid[1], grid[2], engine, nullptr));
      ++count;
    }
  }
  r.checks.push_back(make_check("preset_specs", catalog, "<=", 1e-10, fmt::format("{} preset layer geometries", count)));
  return r;
}

// ---------------------------------------------------------------------------
// 3. Langevin stationarity

namespace {

DescriptorNet flat_descriptor(const Shape& input, double s) {
  // f == 0: a single zero-weight linear unit.
  LayerSpec fc;
  fc.kind = LayerKind::fully_connected;
  fc.out_channels = 1;
  fc.nonlinearity = Nonlinearity::identity;
  DescriptorNet net(input, {fc}, s);
  net.set_params(init_params(net.layers(), {InitScheme::Kind::zero, 0.0}, 0));
  return net;
}

}  // namespace

CriterionResult check_langevin_stationarity() {
  CriterionResult r{3, "langevin-stationarity", {}};
  constexpr std::size_t kChains = 1000;
  constexpr std::size_t kSteps = 10000;
  constexpr std::size_t kBurnIn = 3000;
  constexpr std::size_t kSegment = 100;
  constexpr double s = 1.0;
  constexpr double delta = 0.05;
  const DescriptorNet net = flat_descriptor({1, 1, 1}, s);

  Tensor y = Tensor::batch_of(kChains, {1, 1, 1});  // all chains start at 0
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t samples = 0;
  for (std::size_t seg = 0; seg < kSteps / kSegment; ++seg) {
    y = langevin_revise(net, y, {delta, kSegment, 1.0, derive_seed(303, seg)});
    if ((seg + 1) * kSegment <= kBurnIn) continue;
    for (double v : y.values()) {
      sum += v;
      sum_sq += v * v;
    }
    samples += kChains;
  }
  const double mean = sum / double(samples);
  const double var = sum_sq / double(samples) - mean * mean;
  const double exact = s * s / (1.0 - delta * delta / (4.0 * s * s));
  r.checks.push_back(make_check("rel_variance_error", std::abs(var / exact - 1.0), "<=", 0.05,
                                fmt::format("empirical {:.6f} vs exact discrete-chain {:.6f}; {} chains x {} steps, "
                                            "pooled every {} steps after {} burn-in",
                                            var, exact, kChains, kSteps, kSegment, kBurnIn)));
  return r;
}

// ---------------------------------------------------------------------------
// 4. KL decay

CriterionResult check_kl_decay() {
  CriterionResult r{4, "kl-monotone-decay", {}};
  Engine engine(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = 0.01 + 0.985 * unit(engine);
    const double noise_var = std::exp(std::log(1e-3) + unit(engine) * std::log(1e4));
    const double target = noise_var / (1.0 - a * a);
    const double init = target * std::exp(std::log(1e-3) + unit(engine) * std::log(1e6));
    const auto kl = kl_decay_oracle(a, noise_var, target, init, 2000);
    for (std::size_t t = 1; t < kl.size(); ++t) {
      if (kl[t] > kl[t - 1]) ++violations;
    }
  }
  r.checks.push_back(make_check("increases_random", double(violations), "<=", 0.0,
                                "100 random (a, noise, init) chains, 2000 steps each, target = stationary law"));

  // Worked example: s = 1, delta = 0.05, a = 1 - delta^2/2, noise delta^2, from variance 4.
  const double delta = 0.05;
  const auto kl = kl_decay_oracle(1.0 - delta * delta / 2.0, delta * delta, 1.0, 4.0, 10000);
  std::size_t non_strict = 0;
  for (std::size_t t = 1; t < kl.size(); ++t) {
    if (!(kl[t] < kl[t - 1])) ++non_strict;
  }
  r.checks.push_back(make_check("non_strict_steps_delta", double(non_strict), "<=", 0.0,
                                "a = 1 - delta^2/2, noise delta^2, target s^2 = 1, init 4"));
  r.checks.push_back(make_check("final_kl_delta", kl.back(), "<=", 1e-3, "after 10^4 steps"));

  // Same with a = 0.95 and the noise that keeps s^2 = 1 stationary.
  const auto kl95 = kl_decay_oracle(0.95, 1.0 - 0.95 * 0.95, 1.0, 4.0, 10000);
  std::size_t non_strict95 = 0;
  for (std::size_t t = 1; t < kl95.size(); ++t) {
    if (kl95[t - 1] >= std::numeric_limits<double>::min() && !(kl95[t] < kl95[t - 1])) ++non_strict95;
  }
  r.checks.push_back(make_check("non_strict_steps_a095", double(non_strict95), "<=", 0.0,
                                "a = 0.95, noise 1 - a^2, target 1, init 4; strict while KL is a normal double (KL reaches 0)"));
  r.checks.push_back(make_check("final_kl_a095", kl95.back(), "<=", 1e-3, "after 10^4 steps"));
  return r;
}

// 5. Descriptor maximum likelihood

CriterionResult check_descriptor_mle() {
  CriterionResult r{5, "descriptor-mle", {}};
  // f(Y) = w Y + b on a scalar signal: the model is N(w s^2, s^2), so the
  // maximum-likelihood weight is the sample mean over s^2.
  constexpr double s = 1.0;
  constexpr double mu = 0.8;
  constexpr std::size_t n = 1000;
  Tensor data = Tensor::batch_of(n, {1, 1, 1});
  Engine engine(505);
  for (double& v : data.values()) v = mu + normal_draw(engine);
  double sample_mean = 0.0;
  for (double v : data.values()) sample_mean += v;
  sample_mean /= double(n);
  const double w_hat = sample_mean / (s * s);

  TrainConfig cfg;
  cfg.iterations = 2000;
  cfg.learning_rate_d = 0.02;
  cfg.chains = 100;
  cfg.langevin_d = {0.3, 20, 1.0, 0};
  cfg.batch_size = kFullBatch;
  cfg.seed = 55;
  const DescriptorTrainResult trained = train_descriptor(flat_descriptor({1, 1, 1}, s), data, cfg);
  const double w = trained.net.params().layers[0].weight[0];
  r.checks.push_back(make_check("rel_error_w", std::abs(w - w_hat) / std::abs(w_hat), "<=", 0.1,
                                fmt::format("learned w {:.5f}, oracle mean/s^2 {:.5f}; {} iterations, {} chains",
                                            w, w_hat, cfg.iterations, cfg.chains)));
  return r;
}

// ---------------------------------------------------------------------------
// 6. Generator vs probabilistic PCA

namespace {

LayerSpec linear_fc(std::size_t out, std::size_t size = 1) {
  LayerSpec fc;
  fc.kind = LayerKind::fully_connected;
  fc.out_channels = out;
  fc.kernel_height = size;
  fc.kernel_width = size;
  fc.nonlinearity = Nonlinearity::identity;
  return fc;
}

// A generator made of one fc layer computes g(X) = A X + b with A (D x d)
// stored transposed in the weight tensor (d x D x 1 x 1).
Eigen::MatrixXd loading_matrix(const GeneratorNet& net) {
  const Tensor& w = net.params().layers.at(0).weight;
  const std::size_t d = w.shape()[0];
  const std::size_t D = w.shape()[1];
  Eigen::MatrixXd a(D, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < D; ++j) a(Eigen::Index(j), Eigen::Index(i)) = w[i * D + j];
  }
  return a;
}

void set_loading_matrix(GeneratorNet& net, const Eigen::MatrixXd& a) {
  ParamSet p = net.params().zeros_like();
  const std::size_t D = std::size_t(a.rows());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = 0; j < a.rows(); ++j) p.layers[0].weight[std::size_t(i) * D + std::size_t(j)] = a(j, i);
  }
  net.set_params(std::move(p));
}

Eigen::MatrixXd as_matrix(const Tensor& batch) {
  const std::size_t n = batch.batch_size();
  const std::size_t dim = shape_volume(batch.item_shape());
  Eigen::MatrixXd m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = batch.item_values(i);
    for (std::size_t j = 0; j < dim; ++j) m(Eigen::Index(i), Eigen::Index(j)) = v[j];
  }
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& rows) {
  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  return centered.transpose() * centered / double(rows.rows());
}

double largest_principal_angle_deg(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                             Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
                             Eigen::MatrixXd::Identity(b.rows(), b.cols());
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(qa.transpose() * qb).singularValues();
  return std::acos(std::clamp(sv.minCoeff(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

CriterionResult check_generator_ppca() {
  CriterionResult r{6, "generator-ppca", {}};
  constexpr std::size_t D = 8;
  constexpr std::size_t d = 2;
  constexpr std::size_t n = 2000;
  constexpr double sigma = 0.3;
  ToyParams params;
  params.loadings = random_loadings(D, d, 1.0, 606);
  params.signal_shape = {D, 1, 1};
  params.noise_std = sigma;
  const Dataset data = make_toy_dataset(ToyKind::linear_factor, params, n, 607);

  GeneratorNet net({d, 1, 1}, {linear_fc(D)}, sigma);
  net.set_params(init_params(net.layers(), {InitScheme::Kind::gaussian, 0.1}, 608));
  TrainConfig cfg;
  cfg.iterations = 300;
  cfg.learning_rate_g = 0.05;
  cfg.langevin_g = {0.1, 10, 1.0, 0};
  cfg.batch_size = kFullBatch;
  cfg.seed = 66;
  const GeneratorTrainResult trained = train_generator(std::move(net), data.examples, cfg);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance(as_matrix(data.examples)));
  const Eigen::MatrixXd top = eig.eigenvectors().rightCols(d);  // eigenvalues ascend
  const double angle = largest_principal_angle_deg(loading_matrix(trained.net), top);
  r.checks.push_back(make_check("principal_angle_deg", angle, "<=", 5.0,
                                fmt::format("D={} d={} n={} sigma={}; {} iterations of {} inference steps", D, d, n,
                                            sigma, cfg.iterations, cfg.langevin_g.steps)));
  return r;
}

// ---------------------------------------------------------------------------
// 7. Posterior inference

CriterionResult check_posterior_inference() {
  CriterionResult r{7, "posterior-inference", {}};
  constexpr std::size_t D = 4;
  constexpr std::size_t d = 2;
  constexpr double sigma = 0.5;
  constexpr std::size_t chains = 1000;
  constexpr std::size_t burn_in = 3000;
  constexpr std::size_t snapshots = 10;
  constexpr std::size_t spacing = 200;
  constexpr double delta = 0.1;

  Engine engine(707);
  Eigen::MatrixXd a(D, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.5 * normal_draw(engine);
  GeneratorNet net({d, 1, 1}, {linear_fc(D)}, sigma);
  set_loading_matrix(net, a);
  Eigen::VectorXd x_true(d);
  for (Eigen::Index i = 0; i < x_true.size(); ++i) x_true(i) = normal_draw(engine);
  Eigen::VectorXd y = a * x_true;
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += sigma * normal_draw(engine);

  const Eigen::MatrixXd precision = a.transpose() * a / (sigma * sigma) + Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd post_cov = precision.inverse();
  const Eigen::VectorXd post_mean = post_cov * a.transpose() * y / (sigma * sigma);

  Tensor signals = Tensor::batch_of(chains, {D, 1, 1});
  for (std::size_t i = 0; i < chains; ++i) {
    for (std::size_t j = 0; j < D; ++j) signals.item_values(i)[j] = y(Eigen::Index(j));
  }
  Tensor x = Tensor::batch_of(chains, {d, 1, 1});
  x = langevin_infer(net, signals, x, {delta, burn_in, 1.0, derive_seed(707, 0)});
  Eigen::MatrixXd pooled(chains * snapshots, d);
  for (std::size_t k = 0; k < snapshots; ++k) {
    x = langevin_infer(net, signals, x, {delta, spacing, 1.0, derive_seed(707, k + 1)});
    pooled.middleRows(Eigen::Index(k * chains), chains) = as_matrix(x);
  }
  const Eigen::VectorXd mean = pooled.colwise().mean().transpose();
  const double mean_rel = (mean - post_mean).norm() / post_mean.norm();
  const double cov_rel = (covariance(pooled) - post_cov).norm() / post_cov.norm();
  const std::string detail = fmt::format("D={} d={} sigma={} delta={}; {} chains, {} burn-in, {} snapshots {} apart", D,
                                         d, sigma, delta, chains, burn_in, snapshots, spacing);
  r.checks.push_back(make_check("mean_rel_error", mean_rel, "<=", 0.05, detail));
  r.checks.push_back(make_check("cov_rel_frobenius", cov_rel, "<=", 0.05, detail));
  return r;
}

// ---------------------------------------------------------------------------
// 8. Cooperative training on the 2-D mixture

namespace {

double window_mean(const std::vector<IterationMetrics>& rows, bool last, double IterationMetrics::*field) {
  const std::size_t w = std::max<std::size_t>(1, rows.size() / 10);
  double s = 0.0;
  for (std::size_t i = 0; i < w; ++i) s += rows[last ? rows.size() - w + i : i].*field;
  return s / double(w);
}

}  // namespace

CriterionResult check_coop_toy() {
  CriterionResult r{8, "coop-toy-mixture", {}};
  const RunConfig cfg = load_run_config("toy2d");
  validate_run_config(cfg, TrainMode::coopnets);
  const Dataset data = build_dataset(cfg);
  const std::uint64_t total = cfg.training.iterations;
  const std::uint64_t pool_from = total - std::max<std::uint64_t>(1, total / 100);

  std::vector<Tensor> pooled;
  TrainOptions options;
  options.after_iteration = [&](const TrainProgress& p) {
    if (p.state.iteration > pool_from) pooled.push_back(p.state.chains.revised);
  };
  const CoopTrainResult result = train_coopnets(build_descriptor(cfg), build_generator(cfg), data.examples,
                                                cfg.training, options);

  Eigen::MatrixXd syn(0, 2);
  for (const Tensor& t : pooled) {
    const Eigen::MatrixXd m = as_matrix(t);
    syn.conservativeResize(syn.rows() + m.rows(), Eigen::NoChange);
    syn.bottomRows(m.rows()) = m;
  }
  const Eigen::MatrixXd obs = as_matrix(data.examples);
  const double mean_dist = (syn.colwise().mean() - obs.colwise().mean()).norm();
  const Eigen::MatrixXd obs_cov = covariance(obs);
  const double cov_rel = (covariance(syn) - obs_cov).norm() / obs_cov.norm();
  const std::string pool = fmt::format("{} revised samples from the last {} iterations of {}", syn.rows(),
                                       total - pool_from, total);
  r.checks.push_back(make_check("mean_distance", mean_dist, "<=", 0.15, pool));
  r.checks.push_back(make_check("cov_rel_frobenius", cov_rel, "<=", 0.3, pool));

  const auto& rows = result.metrics.rows;
  const double gap_first = window_mean(rows, false, &IterationMetrics::feature_gap);
  const double gap_last = window_mean(rows, true, &IterationMetrics::feature_gap);
  const double rec_first = window_mean(rows, false, &IterationMetrics::recon_error);
  const double rec_last = window_mean(rows, true, &IterationMetrics::recon_error);
  r.checks.push_back(make_check("feature_gap_ratio", gap_last / gap_first, "<=", 0.5,
                                fmt::format("mean over last 10% {:.4g}, first 10% {:.4g}", gap_last, gap_first)));
  r.checks.push_back(make_check("recon_error_ratio", rec_last / rec_first, "<=", 1.0,
                                fmt::format("mean over last 10% {:.4g}, first 10% {:.4g}", rec_last, rec_first)));
  return r;
}

// ---------------------------------------------------------------------------
// 9. Auto-encoder condition at a descent terminus

CriterionResult check_autoencoder_mode() {
  CriterionResult r{9, "autoencoder-mode", {}};
  RunConfig cfg = load_run_config("toy2d");
  cfg.training.iterations = 300;
  validate_run_config(cfg, TrainMode::descriptor);
  const Dataset data = build_dataset(cfg);
  const DescriptorNet net = train_descriptor(build_descriptor(cfg), data.examples, cfg.training).net;
  const double s2 = net.reference_std() * net.reference_std();

  auto energy_gradient = [&](const Tensor& y) {
    Tensor g = (1.0 / s2) * y;
    g -= descriptor_input_gradient(net, y);
    return g;
  };

  double worst = 0.0;
  std::size_t worst_iters = 0;
  constexpr std::size_t starts = 8;
  for (std::size_t k = 0; k < starts; ++k) {
    Tensor y = data.examples.item(k * (data.size() / starts));
    double e = descriptor_energy(net, y);
    std::size_t it = 0;
    for (; it < 10000; ++it) {
      const Tensor g = energy_gradient(y);
      if (std::sqrt(squared_norm(g)) <= 1e-8) break;
      // Inside a relu linear region the energy Hessian is I / s^2, so the
      // first trial step lands on that region's minimizer.
      double step = s2;
      Tensor next = y;
      double e_next = 0.0;
      for (int halvings = 0; halvings < 60; ++halvings, step /= 2) {
        next = y;
        axpy(-step, g, next);
        e_next = descriptor_energy(net, next);
        if (e_next <= e) break;
      }
      if (e_next > e) break;
      y = std::move(next);
      e = e_next;
    }
    worst = std::max(worst, std::sqrt(squared_norm(energy_gradient(y))));
    worst_iters = std::max(worst_iters, it);
  }
  r.checks.push_back(make_check("max_grad_norm", worst, "<=", 1e-6,
                                fmt::format("{} data-point starts, descent with step s^2 and backtracking, "
                                            "at most {} steps; descriptor trained {} iterations",
                                            starts, worst_iters, cfg.training.iterations)));
  return r;
}

// ---------------------------------------------------------------------------
// 10. Inpainting

CriterionResult check_inpainting() {
  CriterionResult r{10, "inpainting", {}};
  const RunConfig cfg = load_run_config("linear");
  validate_run_config(cfg, TrainMode::generator);
  const Dataset train = build_dataset(cfg);
  const GeneratorNet net = train_generator(build_generator(cfg), train.examples, cfg.training).net;

  // Fresh images from the same factor model.
  const auto& dc = cfg.dataset;
  ToyParams params;
  params.loadings = random_loadings(shape_volume(dc.signal_shape), dc.latent_dim, dc.loadings_scale, dc.loadings_seed);
  params.signal_shape = dc.signal_shape;
  params.noise_std = dc.noise_std;
  constexpr std::size_t count = 100;
  const Dataset test = make_toy_dataset(ToyKind::linear_factor, params, count, 1010);

  const std::size_t side = dc.signal_shape[1] / 2;  // a quarter of the area
  std::size_t wins = 0;
  std::vector<double> errors;
  std::vector<double> baselines;
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor mask = square_mask(dc.signal_shape, side, derive_seed(1011, i));
    const InpaintOutcome o = inpaint(net, test.examples.item(i), mask, {0.02, 1000, 1.0, derive_seed(1012, i)});
    if (o.error < o.baseline_error) ++wins;
    errors.push_back(o.error);
    baselines.push_back(o.baseline_error);
  }
  r.checks.push_back(make_check("wins_over_mean_fill", double(wins), ">=", 95.0,
                                fmt::format("{} test images, {}x{} masks; mean error {:.4f} vs baseline {:.4f}", count,
                                            side, side, mean_of(errors), mean_of(baselines))));
  return r;
}

// ---------------------------------------------------------------------------
// 11. Determinism and resume

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_outputs(const fs::path& a, const fs::path& b) {
  for (const char* f : {"metrics.csv", "checkpoint.ckpt"}) {
    const std::string x = slurp(a / f);
    if (x.empty() || x != slurp(b / f)) return false;
  }
  return true;
}

}  // namespace

CriterionResult check_determinism_resume() {
  CriterionResult r{11, "determinism-resume", {}};
  const fs::path root = fs::temp_directory_path() / fmt::format("coopnets_eval_{:x}", std::random_device{}());
  fs::create_directories(root);

  struct Case {
    std::string config;
    std::optional<TrainMode> mode;
  };
  const Case cases[] = {{"toy2d", std::nullopt}, {"toy2d", TrainMode::descriptor}, {"linear", std::nullopt}};
  std::size_t repeat_mismatch = 0;
  std::size_t resume_mismatch = 0;
  std::size_t thread_mismatch = 0;
  std::size_t failures = 0;
  std::ostringstream log;
  for (std::size_t c = 0; c < std::size(cases); ++c) {
    auto run = [&](const std::string& tag, std::uint64_t iterations, std::size_t threads,
                   std::optional<fs::path> resume) {
      TrainArgs args;
      args.config = cases[c].config;
      args.mode = cases[c].mode;
      args.iterations = iterations;
      args.out_dir = root / fmt::format("case{}_{}", c, tag);
      args.threads = threads;
      args.quiet = true;
      args.resume = std::move(resume);
      if (cmd_train(args, log, log) != exit_code::ok) ++failures;
      return *args.out_dir;
    };
    const fs::path a = run("a", 20, 1, std::nullopt);
    const fs::path b = run("b", 20, 1, std::nullopt);
    const fs::path resumed = run("c", 10, 1, std::nullopt);
    run("c", 20, 1, resumed / "checkpoint.ckpt");
    const fs::path threaded = run("t", 20, 2, std::nullopt);
    repeat_mismatch += !same_outputs(a, b);
    resume_mismatch += !same_outputs(a, resumed);
    thread_mismatch += !same_outputs(a, threaded);
  }
  set_thread_count(1);
  std::error_code ignored;
  fs::remove_all(root, ignored);

  const std::string detail = "toy2d (coopnets, descriptor) and linear (generator), 20 iterations";
  r.checks.push_back(make_check("failed_runs", double(failures), "<=", 0.0, log.str().empty() ? detail : log.str()));
  r.checks.push_back(make_check("rerun_mismatches", double(repeat_mismatch), "<=", 0.0, detail));
  r.checks.push_back(make_check("resume_mismatches", double(resume_mismatch), "<=", 0.0,
                                "10 iterations, then resumed to 20 in the same directory"));
  r.checks.push_back(make_check("thread_mismatches", double(thread_mismatch), "<=", 0.0, "--threads 2 vs 1"));
  return r;
}

// ---------------------------------------------------------------------------

CriterionResult run_criterion(int id) {
  switch (id) {
    case 1: return check_gradient_fidelity();
    case 2: return check_adjoint_identity();
    case 3: return check_langevin_stationarity();
    case 4: return check_kl_decay();
    case 5: return check_descriptor_mle();
    case 6: return check_generator_ppca();
    case 7: return check_posterior_inference();
    case 8: return check_coop_toy();
    case 9: return check_autoencoder_mode();
    case 10: return check_inpainting();
    case 11: return check_determinism_resume();
    default: throw std::out_of_range(fmt::format("no criterion {}", id));
  }
}

std::vector<int> suite_criteria(std::string_view suite) {
  if (suite == "oracles") return {1, 2, 3, 4, 5, 6, 7, 9, 10};
  if (suite == "trends") return {8, 11};
  if (suite == "all") return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  throw std::invalid_argument(fmt::format("unknown suite '{}' (expected oracles, trends or all)", suite));
}

void write_report(const fs::path& path, const std::vector<CriterionResult>& results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  out << "criterion,check,measured,relation,threshold,passed,detail\n";
  for (const auto& r : results) {
    for (const auto& c : r.checks) {
      out << fmt::format("{},{},{:.17g},{},{:.17g},{},{}\n", r.id, c.name, c.measured, quoted(c.relation),
                         c.threshold, c.passed ? 1 : 0, quoted(c.detail));
    }
  }
}

}  // namespace coopnets
