#include "coopnets/langevin.hpp"

#include <cmath>

#include <fmt/format.h>

#include "coopnets/parallel.hpp"
#include "coopnets/rng.hpp"

namespace coopnets {

void LangevinConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument(fmt::format("Langevin step size must be >= 0, got {}", step_size));
  }
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument(fmt::format("Langevin temperature must be >= 0, got {}", temperature));
  }
}

namespace {

std::string divergence_message(std::size_t step, std::size_t chain, std::optional<std::uint64_t> iteration) {
  std::string msg = fmt::format(
      "Langevin chain {} diverged at step {} (a coordinate left [-{:g}, {:g}] or became non-finite); "
      "reduce the step size",
      chain, step, kDivergenceBound, kDivergenceBound);
  if (iteration) msg += fmt::format(" [training iteration {}]", *iteration);
  return msg;
}

void guard(const Tensor& state, std::size_t step, std::size_t chain) {
  for (double v : state.values()) {
    if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) throw DivergenceError(step, chain);
  }
}

void check_batch(const Tensor& batch, const Shape& item, const char* what) {
  if (batch.rank() != item.size() + 1 || batch.item_shape() != item) {
    throw ShapeError(fmt::format("{} has shape {}, expected N x {}", what, shape_to_string(batch.shape()),
                                 shape_to_string(item)));
  }
}

void check_seeds(std::span<const std::uint64_t> seeds, std::size_t chains) {
  if (seeds.size() != chains) {
    throw std::invalid_argument(fmt::format("{} chain seeds supplied for {} chains", seeds.size(), chains));
  }
}

}  // namespace

DivergenceError::DivergenceError(std::size_t step, std::size_t chain, std::optional<std::uint64_t> iteration)
    : std::runtime_error(divergence_message(step, chain, iteration)), step_(step), chain_(chain), iteration_(iteration) {}

Mask::Mask(Tensor values) : values_(std::move(values)) {
  for (double v : values_.values()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask values must be 0 or 1");
  }
}

std::size_t Mask::observed_count() const {
  std::size_t n = 0;
  for (double v : values_.values()) n += v == 1.0 ? 1 : 0;
  return n;
}

std::vector<std::uint64_t> default_chain_seeds(const LangevinConfig& cfg, std::size_t chains) {
  std::vector<std::uint64_t> seeds(chains);
  for (std::size_t i = 0; i < chains; ++i) seeds[i] = derive_seed(cfg.seed, i);
  return seeds;
}

// ---------------------------------------------------------------------------
// Revision

Tensor langevin_revise(const DescriptorNet& net, const Tensor& initial, const LangevinConfig& cfg) {
  check_batch(initial, net.input_shape(), "langevin_revise initial state");
  const auto seeds = default_chain_seeds(cfg, initial.batch_size());
  return langevin_revise(net, initial, cfg, seeds);
}

Tensor langevin_revise(const DescriptorNet& net, const Tensor& initial, const LangevinConfig& cfg,
                       std::span<const std::uint64_t> chain_seeds) {
  cfg.validate();
  check_batch(initial, net.input_shape(), "langevin_revise initial state");
  check_seeds(chain_seeds, initial.batch_size());
  if (!all_finite(initial)) throw DivergenceError(0, 0);

  Tensor result = initial;
  if (cfg.steps == 0) return result;

  const double s2 = net.reference_std() * net.reference_std();
  const double drift = 0.5 * cfg.step_size * cfg.step_size;
  const double noise_scale = cfg.temperature * cfg.step_size;

  parallel_for(initial.batch_size(), [&](std::size_t chain) {
    Engine engine(chain_seeds[chain]);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor y = initial.item(chain);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      const Tensor grad = descriptor_input_gradient(net, y);
      for (std::size_t k = 0; k < y.size(); ++k) {
        y[k] += -drift * (y[k] / s2 - grad[k]) + noise_scale * normal(engine);
      }
      guard(y, step, chain);
    }
    std::ranges::copy(y.values(), result.item_values(chain).begin());
  });
  return result;
}

// ---------------------------------------------------------------------------
// Inference

Tensor log_joint_latent_gradient(const GeneratorNet& net, const Tensor& signal, const Tensor& latent,
                                 const Tensor* mask) {
  const GeneratorTrace trace = generator_trace(net, latent);
  require_same_shape(signal, trace.output, "log_joint_latent_gradient signal");
  const double inv_var = 1.0 / (net.noise_std() * net.noise_std());
  Tensor residual(signal.shape());
  for (std::size_t k = 0; k < residual.size(); ++k) {
    const double r = (signal[k] - trace.output[k]) * inv_var;
    residual[k] = mask ? r * (*mask)[k] : r;
  }
  Tensor grad = generator_backward(net, trace, residual, false).latent;
  axpy(-1.0, latent, grad);
  return grad;
}

namespace {

Tensor infer_impl(const GeneratorNet& net, const Tensor& signals, const Tensor* masks, bool shared_mask,
                  const Tensor& initial_latents, const LangevinConfig& cfg,
                  std::span<const std::uint64_t> chain_seeds) {
  cfg.validate();
  check_batch(signals, net.output_shape(), "langevin_infer signals");
  check_batch(initial_latents, net.latent_shape(), "langevin_infer initial latents");
  if (signals.batch_size() != initial_latents.batch_size()) {
    throw ShapeError(fmt::format("langevin_infer: {} signals but {} latents", signals.batch_size(),
                                 initial_latents.batch_size()));
  }
  check_seeds(chain_seeds, signals.batch_size());
  if (!all_finite(initial_latents)) throw DivergenceError(0, 0);

  Tensor result = initial_latents;
  if (cfg.steps == 0) return result;

  const double drift = 0.5 * cfg.step_size * cfg.step_size;
  const double noise_scale = cfg.temperature * cfg.step_size;

  parallel_for(signals.batch_size(), [&](std::size_t chain) {
    Engine engine(chain_seeds[chain]);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Tensor y = signals.item(chain);
    std::optional<Tensor> mask;
    if (masks) mask = shared_mask ? *masks : masks->item(chain);
    Tensor x = initial_latents.item(chain);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      const Tensor grad = log_joint_latent_gradient(net, y, x, mask ? &*mask : nullptr);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += drift * grad[k] + noise_scale * normal(engine);
      guard(x, step, chain);
    }
    std::ranges::copy(x.values(), result.item_values(chain).begin());
  });
  return result;
}

}  // namespace

Tensor langevin_infer(const GeneratorNet& net, const Tensor& signals, const Tensor& initial_latents,
                      const LangevinConfig& cfg) {
  check_batch(signals, net.output_shape(), "langevin_infer signals");
  const auto seeds = default_chain_seeds(cfg, signals.batch_size());
  return infer_impl(net, signals, nullptr, false, initial_latents, cfg, seeds);
}

Tensor langevin_infer(const GeneratorNet& net, const Tensor& signals, const Tensor& initial_latents,
                      const LangevinConfig& cfg, std::span<const std::uint64_t> chain_seeds) {
  return infer_impl(net, signals, nullptr, false, initial_latents, cfg, chain_seeds);
}

Tensor langevin_infer_masked(const GeneratorNet& net, const Tensor& signals, const Mask& mask,
                             const Tensor& initial_latents, const LangevinConfig& cfg) {
  check_batch(signals, net.output_shape(), "langevin_infer_masked signals");
  const Tensor& m = mask.values();
  bool shared = false;
  if (m.shape() == net.output_shape()) {
    shared = true;
  } else if (m.shape() != signals.shape()) {
    throw ShapeError(fmt::format("mask shape {} is neither the signal shape {} nor the batch shape {}",
                                 shape_to_string(m.shape()), shape_to_string(net.output_shape()),
                                 shape_to_string(signals.shape())));
  }
  const auto seeds = default_chain_seeds(cfg, signals.batch_size());
  return infer_impl(net, signals, &m, shared, initial_latents, cfg, seeds);
}

// ---------------------------------------------------------------------------
// KL decay of the exact Gaussian marginals

namespace {

// x - log(1 + x), accurate near 0 where the direct form cancels.
double relative_entropy_kernel(double x) {
  if (std::abs(x) < 1e-3) {
    const double x2 = x * x;
    return x2 * (0.5 - x / 3.0 + x2 / 4.0 - x2 * x / 5.0 + x2 * x2 / 6.0);
  }
  return x - std::log1p(x);
}

}  // namespace

std::vector<double> kl_decay_oracle(double a, double noise_var, double target_var, double init_var,
                                    std::size_t steps) {
  if (!(noise_var > 0.0) || !(target_var > 0.0) || !(init_var > 0.0)) {
    throw std::invalid_argument("kl_decay_oracle: variances must be positive");
  }
  const double a2 = a * a;
  std::vector<double> kl;
  kl.reserve(steps + 1);
  auto push = [&](double v) { kl.push_back(0.5 * relative_entropy_kernel((v - target_var) / target_var)); };

  if (a2 < 1.0) {
    // v_t = v* + a^(2t) (v_0 - v*). The KL argument is formed from the
    // shrinking deviation directly, so it keeps resolving after v_t itself
    // has rounded to v*.
    const double stationary = noise_var / (1.0 - a2);
    const double offset = stationary - target_var;
    double deviation = init_var - stationary;
    for (std::size_t t = 0; t <= steps; ++t) {
      kl.push_back(0.5 * relative_entropy_kernel((offset + deviation) / target_var));
      deviation *= a2;
    }
  } else {
    double v = init_var;
    for (std::size_t t = 0; t <= steps; ++t) {
      push(v);
      v = a2 * v + noise_var;
    }
  }
  return kl;
}

}  // namespace coopnets
