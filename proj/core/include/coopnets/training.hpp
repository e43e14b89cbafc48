#pragma once

// Training loops: the descriptor alone (persistent chains), the generator
// alone (persistent per-example latents), and the cooperative loop in which
// the generator seeds the descriptor's Langevin revision and then learns to
// reproduce the revised examples.
//
// Every stochastic draw comes from a master engine seeded by TrainConfig::seed.
// Each iteration takes the same four sub-seeds from it (G0, D1, minibatch, G1)
// whether or not the loop uses all of them, so the three loops stay in
// lock-step and a run resumed from a TrainState is bit-identical to an
// uninterrupted one.

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopnets/langevin.hpp"
#include "coopnets/nets.hpp"
#include "coopnets/tensor.hpp"

namespace coopnets {

enum class LearningRateDecay { constant, inverse_t };

/// Which loop a run executes.
enum class TrainMode { coopnets, descriptor, generator };

std::string_view to_string(TrainMode mode) noexcept;
TrainMode parse_train_mode(std::string_view name);

std::string_view to_string(LearningRateDecay decay) noexcept;
LearningRateDecay parse_learning_rate_decay(std::string_view name);

/// full batch when n <= 64, otherwise minibatches of 64
inline constexpr std::size_t kAutoBatch = 0;
inline constexpr std::size_t kFullBatch = std::numeric_limits<std::size_t>::max();

struct TrainConfig {
  std::uint64_t iterations = 0;
  double learning_rate_d = 0.01;
  double learning_rate_g = 1e-6;
  LearningRateDecay lr_decay = LearningRateDecay::constant;
  std::size_t chains = 16;
  // The seed fields of the two Langevin configs are ignored: the loops derive
  // a fresh seed per iteration from `seed`.
  LangevinConfig langevin_d{0.01, 10, 1.0, 0};
  LangevinConfig langevin_g{0.1, 0, 1.0, 0};
  std::size_t g2_inner_steps = 1;
  std::size_t batch_size = kAutoBatch;
  bool g0_noise = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Learning rate at (0-based) iteration t.
  double rate_at(double base, std::uint64_t t) const noexcept;
  std::size_t effective_batch(std::size_t n) const noexcept;

  bool operator==(const TrainConfig&) const = default;
};

/// The synthesized populations of the latest iteration.
/// latents: X-hat (or the per-example latents in generator training);
/// drafts: S1; revised: S2; reconstructions: S3.
struct ChainState {
  Tensor latents;
  Tensor drafts;
  Tensor revised;
  Tensor reconstructions;

  bool operator==(const ChainState&) const = default;
};

struct IterationMetrics {
  std::uint64_t iteration = 0;
  double grad_norm_d = 0.0;
  double feature_gap = 0.0;  // |mean f(observed) - mean f(synthesized)|
  double recon_error = 0.0;  // ||S2 - S3||^2 per chain per pixel
  double energy_s1 = 0.0;
  double energy_s2 = 0.0;
  double energy_s3 = 0.0;

  bool operator==(const IterationMetrics&) const = default;
};

struct TrainMetrics {
  std::vector<IterationMetrics> rows;
};

/// Everything beyond the network parameters needed to continue a run.
struct TrainState {
  std::uint64_t iteration = 0;  // iterations completed
  std::string rng_state;        // master engine; empty before the first iteration
  ChainState chains;

  bool operator==(const TrainState&) const = default;
};

/// Thrown when a parameter update produces non-finite values.
class ParameterDivergenceError : public std::runtime_error {
 public:
  ParameterDivergenceError(std::string which, std::uint64_t iteration);
  std::uint64_t iteration() const noexcept { return iteration_; }

 private:
  std::uint64_t iteration_;
};

struct TrainProgress {
  const DescriptorNet* descriptor = nullptr;
  const GeneratorNet* generator = nullptr;
  const TrainState& state;
  const TrainConfig& config;
};

struct TrainOptions {
  /// Continue from this state instead of starting fresh.
  const TrainState* resume = nullptr;
  /// Descriptor training only: re-initialize the chains every iteration from
  /// this (fixed) generator instead of keeping them persistent.
  const GeneratorNet* chain_source = nullptr;
  std::function<void(const IterationMetrics&)> on_metrics;
  std::function<void(const TrainProgress&)> after_iteration;
};

// ---------------------------------------------------------------------------
// Gradient estimators

/// (1/n) sum df(Y_i)/dW - (1/n~) sum df(Y~_i)/dW
ParamSet descriptor_gradient_estimate(const DescriptorNet& net, const Tensor& observed, const Tensor& synthesized);

/// (1/n) sum (1/sigma^2) J_W(X_i)^T (Y_i - g(X_i))
ParamSet generator_gradient_estimate(const GeneratorNet& net, const Tensor& targets, const Tensor& latents);

/// params + rate * grad (ascent on the log-likelihood).
ParamSet sgd_update(ParamSet params, const ParamSet& grad, double rate);

// ---------------------------------------------------------------------------
// Loops

struct DescriptorTrainResult {
  DescriptorNet net;
  ChainState chains;
  TrainMetrics metrics;
  TrainState state;
};

struct GeneratorTrainResult {
  GeneratorNet net;
  Tensor latents;
  TrainMetrics metrics;
  TrainState state;
};

struct CoopTrainResult {
  DescriptorNet descriptor;
  GeneratorNet generator;
  TrainMetrics metrics;
  TrainState state;
};

/// Fresh persistent chains start from the reference distribution N(0, s^2).
DescriptorTrainResult train_descriptor(DescriptorNet net, const Tensor& data, const TrainConfig& cfg,
                                       const TrainOptions& options = {});

/// Latents of every training example start at N(0, I) and are warm-started
/// from iteration to iteration. Requires langevin_g.steps >= 1.
GeneratorTrainResult train_generator(GeneratorNet net, const Tensor& data, const TrainConfig& cfg,
                                     const TrainOptions& options = {});

CoopTrainResult train_coopnets(DescriptorNet descriptor, GeneratorNet generator, const Tensor& data,
                               const TrainConfig& cfg, const TrainOptions& options = {});

/// Draws `count` latents from N(0, I) and maps them through g, adding
/// N(0, sigma^2) noise when `with_noise`. latents_out receives the latents.
Tensor ancestral_sample(const GeneratorNet& net, std::size_t count, std::uint64_t seed, bool with_noise,
                        Tensor* latents_out = nullptr);

}  // namespace coopnets
