#pragma once

// Unadjusted Langevin dynamics in signal space (revision under the
// descriptor) and in latent space (inference under the generator posterior).
//
//   revise:  Y <- Y - (d^2/2) [Y/s^2 - df/dY] + T d U
//   infer:   X <- X + (d^2/2) [J^T (Y - g(X)) / sigma^2 - X] + T d U
//
// d is the step size, T the temperature. Chain i of a batch draws its noise
// from its own engine, so chains are independent of each other and of the
// thread schedule.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "coopnets/nets.hpp"
#include "coopnets/tensor.hpp"

namespace coopnets {

struct LangevinConfig {
  double step_size = 0.01;
  std::size_t steps = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const LangevinConfig&) const = default;
};

/// Coordinates beyond this magnitude abort the chain.
inline constexpr double kDivergenceBound = 1e6;

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, std::size_t chain, std::optional<std::uint64_t> iteration = std::nullopt);

  std::size_t step() const noexcept { return step_; }
  std::size_t chain() const noexcept { return chain_; }
  std::optional<std::uint64_t> iteration() const noexcept { return iteration_; }

  /// Same error, tagged with the training iteration it happened in.
  DivergenceError at_iteration(std::uint64_t iteration) const { return {step_, chain_, iteration}; }

 private:
  std::size_t step_;
  std::size_t chain_;
  std::optional<std::uint64_t> iteration_;
};

/// Binary observation mask, 1 = observed, 0 = occluded. Either signal-shaped
/// (shared by every batch item) or batch-shaped (one mask per item).
class Mask {
 public:
  explicit Mask(Tensor values);
  static Mask all_observed(const Shape& shape) { return Mask(Tensor(shape, 1.0)); }

  const Tensor& values() const noexcept { return values_; }
  std::size_t observed_count() const;

 private:
  Tensor values_;
};

/// Per-chain seeds used when none are supplied: derive_seed(cfg.seed, i).
std::vector<std::uint64_t> default_chain_seeds(const LangevinConfig& cfg, std::size_t chains);

Tensor langevin_revise(const DescriptorNet& net, const Tensor& initial, const LangevinConfig& cfg);
Tensor langevin_revise(const DescriptorNet& net, const Tensor& initial, const LangevinConfig& cfg,
                       std::span<const std::uint64_t> chain_seeds);

Tensor langevin_infer(const GeneratorNet& net, const Tensor& signals, const Tensor& initial_latents,
                      const LangevinConfig& cfg);
Tensor langevin_infer(const GeneratorNet& net, const Tensor& signals, const Tensor& initial_latents,
                      const LangevinConfig& cfg, std::span<const std::uint64_t> chain_seeds);

/// Inference with the residual restricted to observed pixels. The prior
/// term is untouched.
Tensor langevin_infer_masked(const GeneratorNet& net, const Tensor& signals, const Mask& mask,
                             const Tensor& initial_latents, const LangevinConfig& cfg);

/// Gradient of log P(X, Y) = -||mask (Y - g(X))||^2 / (2 sigma^2) - ||X||^2 / 2 with respect to X.
Tensor log_joint_latent_gradient(const GeneratorNet& net, const Tensor& signal, const Tensor& latent,
                                 const Tensor* mask = nullptr);

/// KL(N(0, v_t) || N(0, target_var)) for the exact Gaussian marginals of the
/// scalar chain Y' = a Y + sqrt(noise_var) U started at variance init_var.
/// Returns steps + 1 entries (t = 0 .. steps).
std::vector<double> kl_decay_oracle(double a, double noise_var, double target_var, double init_var,
                                    std::size_t steps);

}  // namespace coopnets
