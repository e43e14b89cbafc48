#include "coopnets/training.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include <fmt/format.h>

#include "coopnets/parallel.hpp"
#include "coopnets/rng.hpp"

namespace coopnets {

std::string_view to_string(LearningRateDecay decay) noexcept {
  return decay == LearningRateDecay::inverse_t ? "inverse_t" : "constant";
}

LearningRateDecay parse_learning_rate_decay(std::string_view name) {
  if (name == "constant") return LearningRateDecay::constant;
  if (name == "inverse_t") return LearningRateDecay::inverse_t;
  throw std::invalid_argument(fmt::format("unknown learning-rate decay '{}'", name));
}

std::string_view to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::coopnets: return "coopnets";
    case TrainMode::descriptor: return "descriptor";
    case TrainMode::generator: return "generator";
  }
  return "coopnets";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "coopnets") return TrainMode::coopnets;
  if (name == "descriptor") return TrainMode::descriptor;
  if (name == "generator") return TrainMode::generator;
  throw std::invalid_argument(fmt::format("unknown training mode '{}'", name));
}

void TrainConfig::validate() const {
  if (!(learning_rate_d >= 0.0) || !(learning_rate_g >= 0.0)) {
    throw std::invalid_argument("learning rates must be >= 0");
  }
  if (chains == 0) throw std::invalid_argument("need at least one chain");
  if (g2_inner_steps == 0) throw std::invalid_argument("g2_inner_steps must be >= 1");
  langevin_d.validate();
  langevin_g.validate();
}

double TrainConfig::rate_at(double base, std::uint64_t t) const noexcept {
  return lr_decay == LearningRateDecay::inverse_t ? base / (1.0 + static_cast<double>(t)) : base;
}

std::size_t TrainConfig::effective_batch(std::size_t n) const noexcept {
  if (batch_size == kAutoBatch) return n <= 64 ? n : 64;
  return std::min(batch_size, n);
}

ParameterDivergenceError::ParameterDivergenceError(std::string which, std::uint64_t iteration)
    : std::runtime_error(fmt::format("{} parameters became non-finite at training iteration {}; reduce the "
                                     "learning rate",
                                     which, iteration)),
      iteration_(iteration) {}

// ---------------------------------------------------------------------------
// Estimators

namespace {

// Items are summed in fixed chunks, then chunks in order, so the result does
// not depend on the worker count.
constexpr std::size_t kReduceChunk = 8;

ParamSet sum_over_items(std::size_t count, const ParamSet& zero,
                        const std::function<void(std::size_t, ParamSet&)>& accumulate) {
  const std::size_t chunks = (count + kReduceChunk - 1) / kReduceChunk;
  std::vector<ParamSet> partial(chunks, zero);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(count, (c + 1) * kReduceChunk);
    for (std::size_t i = c * kReduceChunk; i < end; ++i) accumulate(i, partial[c]);
  });
  ParamSet total = zero;
  for (const auto& p : partial) total += p;
  return total;
}

void check_batch(const Tensor& batch, const Shape& item, const char* what) {
  if (batch.rank() != item.size() + 1 || batch.item_shape() != item) {
    throw ShapeError(fmt::format("{} has shape {}, expected N x {}", what, shape_to_string(batch.shape()),
                                 shape_to_string(item)));
  }
  if (batch.batch_size() == 0) throw std::invalid_argument(fmt::format("{} is empty", what));
}

struct DescriptorEstimate {
  ParamSet grad;
  double mean_observed_score = 0.0;
  double mean_synthesized_score = 0.0;
};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

DescriptorEstimate estimate_descriptor(const DescriptorNet& net, const Tensor& observed, const Tensor& synthesized) {
  check_batch(observed, net.input_shape(), "observed batch");
  check_batch(synthesized, net.input_shape(), "synthesized batch");
  const ParamSet zero = net.params().zeros_like();

  std::vector<double> obs_scores(observed.batch_size());
  ParamSet obs = sum_over_items(observed.batch_size(), zero, [&](std::size_t i, ParamSet& acc) {
    auto g = descriptor_backward(net, observed.item(i));
    obs_scores[i] = g.score;
    acc += g.params;
  });
  std::vector<double> syn_scores(synthesized.batch_size());
  ParamSet syn = sum_over_items(synthesized.batch_size(), zero, [&](std::size_t i, ParamSet& acc) {
    auto g = descriptor_backward(net, synthesized.item(i));
    syn_scores[i] = g.score;
    acc += g.params;
  });

  DescriptorEstimate est;
  est.grad = std::move(obs);
  est.grad *= 1.0 / double(observed.batch_size());
  axpy(-1.0 / double(synthesized.batch_size()), syn, est.grad);
  est.mean_observed_score = mean_of(obs_scores);
  est.mean_synthesized_score = mean_of(syn_scores);
  return est;
}

}  // namespace

ParamSet descriptor_gradient_estimate(const DescriptorNet& net, const Tensor& observed, const Tensor& synthesized) {
  return estimate_descriptor(net, observed, synthesized).grad;
}

ParamSet generator_gradient_estimate(const GeneratorNet& net, const Tensor& targets, const Tensor& latents) {
  check_batch(targets, net.output_shape(), "generator targets");
  check_batch(latents, net.latent_shape(), "generator latents");
  if (targets.batch_size() != latents.batch_size()) {
    throw ShapeError(fmt::format("generator_gradient_estimate: {} targets but {} latents", targets.batch_size(),
                                 latents.batch_size()));
  }
  const double inv_var = 1.0 / (net.noise_std() * net.noise_std());
  ParamSet total = sum_over_items(targets.batch_size(), net.params().zeros_like(), [&](std::size_t i, ParamSet& acc) {
    const GeneratorTrace trace = generator_trace(net, latents.item(i));
    Tensor residual = targets.item(i);
    residual -= trace.output;
    residual *= inv_var;
    acc += generator_backward(net, trace, residual, true).params;
  });
  total *= 1.0 / double(targets.batch_size());
  return total;
}

ParamSet sgd_update(ParamSet params, const ParamSet& grad, double rate) {
  axpy(rate, grad, params);
  return params;
}

// ---------------------------------------------------------------------------
// Shared loop machinery

namespace {

struct IterationSeeds {
  std::uint64_t g0;
  std::uint64_t d1;
  std::uint64_t batch;
  std::uint64_t g1;
};

IterationSeeds draw_seeds(Engine& master) {
  IterationSeeds s{};
  s.g0 = master();
  s.d1 = master();
  s.batch = master();
  s.g1 = master();
  return s;
}

Engine start_engine(const TrainConfig& cfg, const TrainOptions& options) {
  if (options.resume && !options.resume->rng_state.empty()) return load_engine_state(options.resume->rng_state);
  return Engine(cfg.seed);
}

std::vector<std::size_t> select_batch(std::size_t n, std::size_t batch, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (batch >= n) return idx;
  Engine engine(seed);
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(engine)]);
  }
  idx.resize(batch);
  return idx;
}

Tensor gather(const Tensor& data, const std::vector<std::size_t>& indices) {
  Tensor out = Tensor::batch_of(indices.size(), data.item_shape());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::ranges::copy(data.item_values(indices[i]), out.item_values(i).begin());
  }
  return out;
}

double mean_energy(const DescriptorNet& net, const Tensor& batch) {
  return mean_of(descriptor_energies(net, batch));
}

double per_pixel_sq_error(const Tensor& a, const Tensor& b) {
  Tensor diff = a;
  diff -= b;
  return squared_norm(diff) / double(diff.size());
}

LangevinConfig seeded(LangevinConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  return cfg;
}

void emit(const TrainOptions& options, TrainMetrics& metrics, const IterationMetrics& row) {
  metrics.rows.push_back(row);
  if (options.on_metrics) options.on_metrics(row);
}

template <class F>
auto tag_divergence(std::uint64_t iteration, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    throw e.at_iteration(iteration);
  }
}

}  // namespace

Tensor ancestral_sample(const GeneratorNet& net, std::size_t count, std::uint64_t seed, bool with_noise,
                        Tensor* latents_out) {
  Tensor latents = Tensor::batch_of(count, net.latent_shape());
  Tensor out = Tensor::batch_of(count, net.output_shape());
  parallel_for(count, [&](std::size_t i) {
    Engine engine(derive_seed(seed, i));
    Tensor x(net.latent_shape());
    fill_normal(engine, x.values());
    Tensor y = generator_forward(net, x);
    if (with_noise) {
      Tensor eps(y.shape());
      fill_normal(engine, eps.values(), net.noise_std());
      y += eps;
    }
    latents.set_item(i, x);
    out.set_item(i, y);
  });
  if (latents_out) *latents_out = std::move(latents);
  return out;
}

// ---------------------------------------------------------------------------
// Descriptor training

DescriptorTrainResult train_descriptor(DescriptorNet net, const Tensor& data, const TrainConfig& cfg,
                                       const TrainOptions& options) {
  cfg.validate();
  check_batch(data, net.input_shape(), "training data");
  if (options.chain_source && options.chain_source->output_shape() != net.input_shape()) {
    throw ShapeError("chain-source generator output does not match the descriptor input");
  }

  TrainState state = options.resume ? *options.resume : TrainState{};
  Engine master = start_engine(cfg, options);
  if (state.chains.revised.empty()) {
    Tensor chains = Tensor::batch_of(cfg.chains, net.input_shape());
    Engine init(derive_seed(cfg.seed, 0xD0));
    fill_normal(init, chains.values(), net.reference_std());
    state.chains.revised = std::move(chains);
  }
  check_batch(state.chains.revised, net.input_shape(), "persistent chains");

  TrainMetrics metrics;
  const std::size_t batch = cfg.effective_batch(data.batch_size());
  for (std::uint64_t t = state.iteration; t < cfg.iterations; ++t) {
    const IterationSeeds seeds = draw_seeds(master);
    if (options.chain_source) {
      state.chains.revised =
          ancestral_sample(*options.chain_source, cfg.chains, seeds.g0, cfg.g0_noise, &state.chains.latents);
    }
    state.chains.drafts = state.chains.revised;
    state.chains.revised =
        tag_divergence(t, [&] { return langevin_revise(net, state.chains.drafts, seeded(cfg.langevin_d, seeds.d1)); });

    const Tensor observed = gather(data, select_batch(data.batch_size(), batch, seeds.batch));
    DescriptorEstimate est = estimate_descriptor(net, observed, state.chains.revised);

    IterationMetrics row;
    row.iteration = t;
    row.grad_norm_d = std::sqrt(squared_norm(est.grad));
    row.feature_gap = std::abs(est.mean_observed_score - est.mean_synthesized_score);
    row.energy_s1 = mean_energy(net, state.chains.drafts);
    row.energy_s2 = mean_energy(net, state.chains.revised);

    axpy(cfg.rate_at(cfg.learning_rate_d, t), est.grad, net.params());
    if (!all_finite(net.params())) throw ParameterDivergenceError("descriptor", t);

    state.iteration = t + 1;
    state.rng_state = save_engine_state(master);
    emit(options, metrics, row);
    if (options.after_iteration) options.after_iteration({&net, nullptr, state, cfg});
  }
  if (state.rng_state.empty()) state.rng_state = save_engine_state(master);
  return {std::move(net), state.chains, std::move(metrics), std::move(state)};
}

// ---------------------------------------------------------------------------
// Generator training

GeneratorTrainResult train_generator(GeneratorNet net, const Tensor& data, const TrainConfig& cfg,
                                     const TrainOptions& options) {
  cfg.validate();
  if (cfg.langevin_g.steps == 0) {
    throw std::invalid_argument("generator training needs at least one Langevin inference step");
  }
  check_batch(data, net.output_shape(), "training data");

  TrainState state = options.resume ? *options.resume : TrainState{};
  Engine master = start_engine(cfg, options);
  if (state.chains.latents.empty()) {
    Tensor latents = Tensor::batch_of(data.batch_size(), net.latent_shape());
    Engine init(derive_seed(cfg.seed, 0x60));
    fill_normal(init, latents.values());
    state.chains.latents = std::move(latents);
  }
  check_batch(state.chains.latents, net.latent_shape(), "persistent latents");
  if (state.chains.latents.batch_size() != data.batch_size()) {
    throw ShapeError("persistent latents do not match the number of training examples");
  }

  TrainMetrics metrics;
  const std::size_t batch = cfg.effective_batch(data.batch_size());
  for (std::uint64_t t = state.iteration; t < cfg.iterations; ++t) {
    const IterationSeeds seeds = draw_seeds(master);
    const auto indices = select_batch(data.batch_size(), batch, seeds.batch);
    const Tensor targets = gather(data, indices);
    Tensor latents = gather(state.chains.latents, indices);

    latents = tag_divergence(t, [&] { return langevin_infer(net, targets, latents, seeded(cfg.langevin_g, seeds.g1)); });
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::ranges::copy(latents.item_values(i), state.chains.latents.item_values(indices[i]).begin());
    }

    for (std::size_t k = 0; k < cfg.g2_inner_steps; ++k) {
      axpy(cfg.rate_at(cfg.learning_rate_g, t), generator_gradient_estimate(net, targets, latents), net.params());
    }
    if (!all_finite(net.params())) throw ParameterDivergenceError("generator", t);

    state.chains.revised = targets;
    state.chains.reconstructions = generator_forward_batch(net, latents);

    IterationMetrics row;
    row.iteration = t;
    row.recon_error = per_pixel_sq_error(targets, state.chains.reconstructions);

    state.iteration = t + 1;
    state.rng_state = save_engine_state(master);
    emit(options, metrics, row);
    if (options.after_iteration) options.after_iteration({nullptr, &net, state, cfg});
  }
  if (state.rng_state.empty()) state.rng_state = save_engine_state(master);
  Tensor latents = state.chains.latents;
  return {std::move(net), std::move(latents), std::move(metrics), std::move(state)};
}

// ---------------------------------------------------------------------------
// Cooperative training

CoopTrainResult train_coopnets(DescriptorNet descriptor, GeneratorNet generator, const Tensor& data,
                               const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (generator.output_shape() != descriptor.input_shape()) {
    throw ShapeError(fmt::format("generator output {} does not match descriptor input {}",
                                 shape_to_string(generator.output_shape()),
                                 shape_to_string(descriptor.input_shape())));
  }
  check_batch(data, descriptor.input_shape(), "training data");

  TrainState state = options.resume ? *options.resume : TrainState{};
  Engine master = start_engine(cfg, options);

  TrainMetrics metrics;
  const std::size_t batch = cfg.effective_batch(data.batch_size());
  for (std::uint64_t t = state.iteration; t < cfg.iterations; ++t) {
    const IterationSeeds seeds = draw_seeds(master);
    ChainState& chains = state.chains;

    // G0: ancestral sampling, a fresh population every iteration.
    chains.drafts = ancestral_sample(generator, cfg.chains, seeds.g0, cfg.g0_noise, &chains.latents);

    // D1: revision under the current descriptor.
    chains.revised =
        tag_divergence(t, [&] { return langevin_revise(descriptor, chains.drafts, seeded(cfg.langevin_d, seeds.d1)); });

    // G1: the generating latents are known; optionally refine them.
    Tensor inferred = chains.latents;
    if (cfg.langevin_g.steps > 0) {
      inferred = tag_divergence(
          t, [&] { return langevin_infer(generator, chains.revised, chains.latents, seeded(cfg.langevin_g, seeds.g1)); });
    }

    // D2 gradient at W_D^(t).
    const Tensor observed = gather(data, select_batch(data.batch_size(), batch, seeds.batch));
    DescriptorEstimate est = estimate_descriptor(descriptor, observed, chains.revised);

    // G2: regress the revised examples on their latents.
    for (std::size_t k = 0; k < cfg.g2_inner_steps; ++k) {
      axpy(cfg.rate_at(cfg.learning_rate_g, t), generator_gradient_estimate(generator, chains.revised, inferred),
           generator.params());
    }
    if (!all_finite(generator.params())) throw ParameterDivergenceError("generator", t);
    chains.reconstructions = generator_forward_batch(generator, inferred);
    chains.latents = std::move(inferred);

    IterationMetrics row;
    row.iteration = t;
    row.grad_norm_d = std::sqrt(squared_norm(est.grad));
    row.feature_gap = std::abs(est.mean_observed_score - est.mean_synthesized_score);
    row.recon_error = per_pixel_sq_error(chains.revised, chains.reconstructions);
    row.energy_s1 = mean_energy(descriptor, chains.drafts);
    row.energy_s2 = mean_energy(descriptor, chains.revised);
    row.energy_s3 = mean_energy(descriptor, chains.reconstructions);

    // D2 update.
    axpy(cfg.rate_at(cfg.learning_rate_d, t), est.grad, descriptor.params());
    if (!all_finite(descriptor.params())) throw ParameterDivergenceError("descriptor", t);

    state.iteration = t + 1;
    state.rng_state = save_engine_state(master);
    emit(options, metrics, row);
    if (options.after_iteration) options.after_iteration({&descriptor, &generator, state, cfg});
  }
  if (state.rng_state.empty()) state.rng_state = save_engine_state(master);
  return {std::move(descriptor), std::move(generator), std::move(metrics), std::move(state)};
}

}  // namespace coopnets
