#include "coopnets/nets.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "coopnets/rng.hpp"

namespace coopnets {

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::fully_connected: return "fc";
    case LayerKind::deconv: return "deconv";
  }
  return "conv";
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "conv") return LayerKind::conv;
  if (name == "fc" || name == "fully_connected") return LayerKind::fully_connected;
  if (name == "deconv") return LayerKind::deconv;
  throw std::invalid_argument(fmt::format("unknown layer kind '{}'", name));
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::size() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

double& ParamSet::coordinate(std::size_t index) {
  for (auto& layer : layers) {
    if (index < layer.weight.size()) return layer.weight[index];
    index -= layer.weight.size();
    if (index < layer.bias.size()) return layer.bias[index];
    index -= layer.bias.size();
  }
  throw std::out_of_range("parameter coordinate out of range");
}

double ParamSet::coordinate(std::size_t index) const { return const_cast<ParamSet&>(*this).coordinate(index); }

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  out.layers.reserve(layers.size());
  for (const auto& layer : layers) {
    out.layers.push_back({Tensor::zeros_like(layer.weight), Tensor::zeros_like(layer.bias)});
  }
  return out;
}

namespace {
void require_same_structure(const ParamSet& a, const ParamSet& b) {
  if (a.layers.size() != b.layers.size()) {
    throw ShapeError(fmt::format("parameter sets have {} vs {} layers", a.layers.size(), b.layers.size()));
  }
}
}  // namespace

ParamSet& ParamSet::operator+=(const ParamSet& other) {
  require_same_structure(*this, other);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

ParamSet& ParamSet::operator*=(double scale) noexcept {
  for (auto& layer : layers) {
    layer.weight *= scale;
    layer.bias *= scale;
  }
  return *this;
}

void axpy(double alpha, const ParamSet& x, ParamSet& y) {
  require_same_structure(x, y);
  for (std::size_t l = 0; l < y.layers.size(); ++l) {
    axpy(alpha, x.layers[l].weight, y.layers[l].weight);
    axpy(alpha, x.layers[l].bias, y.layers[l].bias);
  }
}

double squared_norm(const ParamSet& p) {
  double acc = 0.0;
  for (const auto& layer : p.layers) acc += squared_norm(layer.weight) + squared_norm(layer.bias);
  return acc;
}

bool all_finite(const ParamSet& p) noexcept {
  return std::ranges::all_of(p.layers, [](const LayerParams& l) { return all_finite(l.weight) && all_finite(l.bias); });
}

ParamSet init_params(const std::vector<Layer>& layers, const InitScheme& scheme, std::uint64_t seed) {
  if (scheme.kind == InitScheme::Kind::gaussian && !(scheme.stddev > 0.0)) {
    throw std::invalid_argument("gaussian initialization needs stddev > 0");
  }
  ParamSet params;
  params.layers.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerParams p{Tensor(layers[l].weight_shape()), Tensor({layers[l].bias_size()})};
    if (scheme.kind == InitScheme::Kind::gaussian) {
      Engine engine(derive_seed(seed, l));
      fill_normal(engine, p.weight.values(), scheme.stddev);
    }
    params.layers.push_back(std::move(p));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Layer resolution

namespace {

void require_image_shape(const Shape& shape, const char* what) {
  if (shape.size() != 3 || shape_volume(shape) == 0) {
    throw ShapeError(fmt::format("{} must be a non-empty C x H x W shape, got {}", what, shape_to_string(shape)));
  }
}

}  // namespace

std::vector<Layer> resolve_descriptor_layers(const Shape& input_shape, const std::vector<LayerSpec>& specs) {
  require_image_shape(input_shape, "descriptor input");
  if (specs.empty()) throw ShapeError("descriptor needs at least one layer");
  std::vector<Layer> layers;
  Shape current = input_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    Layer layer{spec, {}, current, {}};
    try {
      if (spec.out_channels == 0) throw ShapeError("out_channels must be >= 1");
      switch (spec.kind) {
        case LayerKind::conv:
          layer.conv = {spec.kernel_height, spec.kernel_width, spec.stride, spec.padding, current[0],
                        spec.out_channels};
          break;
        case LayerKind::fully_connected:
          layer.conv = {current[1], current[2], 1, 0, current[0], spec.out_channels};
          break;
        case LayerKind::deconv:
          throw ShapeError("deconv layers belong to the generator");
      }
      layer.conv.validate();
      layer.output_shape = {spec.out_channels, layer.conv.output_height(current[1]),
                            layer.conv.output_width(current[2])};
    } catch (const ShapeError& e) {
      throw ShapeError(fmt::format("descriptor layer {} ({}) on input {}: {}", i + 1, to_string(spec.kind),
                                   shape_to_string(current), e.what()));
    }
    current = layer.output_shape;
    layers.push_back(std::move(layer));
  }
  return layers;
}

std::vector<Layer> resolve_generator_layers(const Shape& latent_shape, const std::vector<LayerSpec>& specs) {
  require_image_shape(latent_shape, "generator latent");
  if (specs.empty()) throw ShapeError("generator needs at least one layer");
  std::vector<Layer> layers;
  Shape current = latent_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    Layer layer{spec, {}, current, {}};
    try {
      if (spec.out_channels == 0) throw ShapeError("out_channels must be >= 1");
      switch (spec.kind) {
        case LayerKind::deconv: {
          if (spec.upsample_factor == 0) throw ShapeError("upsample factor must be >= 1");
          layer.conv = {spec.kernel_height, spec.kernel_width, spec.upsample_factor, spec.padding, spec.out_channels,
                        current[0]};
          layer.conv.validate();
          const std::size_t out_h = current[1] * spec.upsample_factor;
          const std::size_t out_w = current[2] * spec.upsample_factor;
          if (layer.conv.output_height(out_h) != current[1] || layer.conv.output_width(out_w) != current[2]) {
            throw ShapeError(fmt::format(
                "kernel {}x{} with padding {} does not invert a stride-{} conv from {}x{} to {}x{}",
                spec.kernel_height, spec.kernel_width, spec.padding, spec.upsample_factor, out_h, out_w, current[1],
                current[2]));
          }
          layer.output_shape = {spec.out_channels, out_h, out_w};
          break;
        }
        case LayerKind::fully_connected:
          if (current[1] != 1 || current[2] != 1) {
            throw ShapeError("generator fully-connected layers need a C x 1 x 1 input");
          }
          layer.conv = {spec.kernel_height, spec.kernel_width, 1, 0, spec.out_channels, current[0]};
          layer.conv.validate();
          layer.output_shape = {spec.out_channels, spec.kernel_height, spec.kernel_width};
          break;
        case LayerKind::conv:
          throw ShapeError("conv layers belong to the descriptor");
      }
    } catch (const ShapeError& e) {
      throw ShapeError(fmt::format("generator layer {} ({}) on input {}: {}", i + 1, to_string(spec.kind),
                                   shape_to_string(current), e.what()));
    }
    current = layer.output_shape;
    layers.push_back(std::move(layer));
  }
  return layers;
}

namespace {

std::vector<LayerSpec> specs_of(const std::vector<Layer>& layers) {
  std::vector<LayerSpec> specs;
  specs.reserve(layers.size());
  for (const auto& layer : layers) specs.push_back(layer.spec);
  return specs;
}

void check_params(const std::vector<Layer>& layers, const ParamSet& params) {
  if (params.layers.size() != layers.size()) {
    throw ShapeError(fmt::format("expected parameters for {} layers, got {}", layers.size(), params.layers.size()));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (params.layers[l].weight.shape() != layers[l].weight_shape() ||
        params.layers[l].bias.shape() != Shape{layers[l].bias_size()}) {
      throw ShapeError(fmt::format("layer {} parameters have shape {} / {}, expected {} / [{}]", l + 1,
                                   shape_to_string(params.layers[l].weight.shape()),
                                   shape_to_string(params.layers[l].bias.shape()),
                                   shape_to_string(layers[l].weight_shape()), layers[l].bias_size()));
    }
  }
}

void check_input(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(fmt::format("{} has shape {}, expected {}", what, shape_to_string(t.shape()),
                                 shape_to_string(expected)));
  }
}

void check_batch(const Tensor& batch, const Shape& item, const char* what) {
  if (batch.rank() != item.size() + 1 || batch.item_shape() != item) {
    throw ShapeError(fmt::format("{} has shape {}, expected N x {}", what, shape_to_string(batch.shape()),
                                 shape_to_string(item)));
  }
}

}  // namespace

DescriptorNet::DescriptorNet(Shape input_shape, std::vector<LayerSpec> specs, double reference_std)
    : input_shape_(std::move(input_shape)),
      layers_(resolve_descriptor_layers(input_shape_, specs)),
      reference_std_(reference_std) {
  if (!(reference_std_ > 0.0)) throw std::invalid_argument("descriptor reference std s must be > 0");
  params_ = init_params(layers_, {InitScheme::Kind::zero, 0.0}, 0);
}

std::vector<LayerSpec> DescriptorNet::layer_specs() const { return specs_of(layers_); }

void DescriptorNet::set_params(ParamSet params) {
  check_params(layers_, params);
  params_ = std::move(params);
}

GeneratorNet::GeneratorNet(Shape latent_shape, std::vector<LayerSpec> specs, double noise_std)
    : latent_shape_(std::move(latent_shape)),
      layers_(resolve_generator_layers(latent_shape_, specs)),
      noise_std_(noise_std) {
  if (!(noise_std_ > 0.0)) throw std::invalid_argument("generator noise std sigma must be > 0");
  params_ = init_params(layers_, {InitScheme::Kind::zero, 0.0}, 0);
}

std::vector<LayerSpec> GeneratorNet::layer_specs() const { return specs_of(layers_); }

void GeneratorNet::set_params(ParamSet params) {
  check_params(layers_, params);
  params_ = std::move(params);
}

// ---------------------------------------------------------------------------
// Descriptor passes

namespace {

struct DescriptorTrace {
  std::vector<Tensor> inputs;
  std::vector<Tensor> preactivations;
  Tensor output;
};

DescriptorTrace descriptor_trace(const DescriptorNet& net, const Tensor& y) {
  check_input(y, net.input_shape(), "descriptor input");
  DescriptorTrace trace;
  trace.inputs.reserve(net.layers().size());
  trace.preactivations.reserve(net.layers().size());
  Tensor current = y;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const Layer& layer = net.layers()[l];
    const LayerParams& p = net.params().layers[l];
    Tensor z = convolve2d(current, p.weight, p.bias, layer.conv);
    Tensor a = apply_nonlinearity(z, layer.spec.nonlinearity);
    trace.inputs.push_back(std::move(current));
    trace.preactivations.push_back(std::move(z));
    current = std::move(a);
  }
  trace.output = std::move(current);
  return trace;
}

double sum_of(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return acc;
}

DescriptorGradients descriptor_pullback(const DescriptorNet& net, const DescriptorTrace& trace, bool with_params) {
  DescriptorGradients grads;
  grads.score = sum_of(trace.output);
  if (with_params) grads.params = net.params().zeros_like();
  // df/d(output) = 1 everywhere since f sums the final layer.
  Tensor upstream(trace.output.shape(), 1.0);
  for (std::size_t l = net.layers().size(); l-- > 0;) {
    const Layer& layer = net.layers()[l];
    Tensor dz = hadamard(upstream, nonlinearity_derivative(trace.preactivations[l], layer.spec.nonlinearity));
    if (with_params) {
      grads.params.layers[l].weight = conv_filter_gradient(trace.inputs[l], dz, layer.conv);
      grads.params.layers[l].bias = channel_sums(dz);
    }
    upstream = transpose_convolve2d(dz, net.params().layers[l].weight, layer.conv, layer.input_shape[1],
                                    layer.input_shape[2]);
  }
  grads.input = std::move(upstream);
  return grads;
}

}  // namespace

double descriptor_score(const DescriptorNet& net, const Tensor& y) { return sum_of(descriptor_trace(net, y).output); }

std::vector<double> descriptor_scores(const DescriptorNet& net, const Tensor& batch) {
  check_batch(batch, net.input_shape(), "descriptor batch");
  std::vector<double> scores(batch.batch_size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = descriptor_score(net, batch.item(i));
  return scores;
}

double descriptor_energy(const DescriptorNet& net, const Tensor& y) {
  const double s = net.reference_std();
  return squared_norm(y) / (2.0 * s * s) - descriptor_score(net, y);
}

std::vector<double> descriptor_energies(const DescriptorNet& net, const Tensor& batch) {
  check_batch(batch, net.input_shape(), "descriptor batch");
  std::vector<double> energies(batch.batch_size());
  for (std::size_t i = 0; i < energies.size(); ++i) energies[i] = descriptor_energy(net, batch.item(i));
  return energies;
}

DescriptorGradients descriptor_backward(const DescriptorNet& net, const Tensor& y) {
  return descriptor_pullback(net, descriptor_trace(net, y), true);
}

Tensor descriptor_input_gradient(const DescriptorNet& net, const Tensor& y) {
  return descriptor_pullback(net, descriptor_trace(net, y), false).input;
}

std::vector<bool> descriptor_activation_pattern(const DescriptorNet& net, const Tensor& y) {
  const DescriptorTrace trace = descriptor_trace(net, y);
  std::vector<bool> pattern;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (net.layers()[l].spec.nonlinearity != Nonlinearity::relu) continue;
    for (double z : trace.preactivations[l].values()) pattern.push_back(z > 0.0);
  }
  return pattern;
}

// ---------------------------------------------------------------------------
// Generator passes

GeneratorTrace generator_trace(const GeneratorNet& net, const Tensor& x) {
  check_input(x, net.latent_shape(), "generator latent");
  GeneratorTrace trace;
  trace.inputs.reserve(net.layers().size());
  trace.preactivations.reserve(net.layers().size());
  Tensor current = x;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const Layer& layer = net.layers()[l];
    const LayerParams& p = net.params().layers[l];
    Tensor z = transpose_convolve2d(current, p.weight, layer.conv, layer.output_shape[1], layer.output_shape[2]);
    const std::size_t plane = layer.output_shape[1] * layer.output_shape[2];
    for (std::size_t c = 0; c < layer.output_shape[0]; ++c) {
      double* zc = z.data() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) zc[k] += p.bias[c];
    }
    Tensor a = apply_nonlinearity(z, layer.spec.nonlinearity);
    trace.inputs.push_back(std::move(current));
    trace.preactivations.push_back(std::move(z));
    current = std::move(a);
  }
  trace.output = std::move(current);
  return trace;
}

GeneratorGradients generator_backward(const GeneratorNet& net, const GeneratorTrace& trace, const Tensor& residual,
                                      bool with_params) {
  check_input(residual, net.output_shape(), "generator residual");
  GeneratorGradients grads;
  if (with_params) grads.params = net.params().zeros_like();
  Tensor upstream = residual;
  for (std::size_t l = net.layers().size(); l-- > 0;) {
    const Layer& layer = net.layers()[l];
    Tensor dz = hadamard(upstream, nonlinearity_derivative(trace.preactivations[l], layer.spec.nonlinearity));
    if (with_params) {
      // z = conv^T(x): the filter gradient swaps the roles of input and cotangent.
      grads.params.layers[l].weight = conv_filter_gradient(dz, trace.inputs[l], layer.conv);
      grads.params.layers[l].bias = channel_sums(dz);
    }
    upstream = convolve2d(dz, net.params().layers[l].weight, Tensor({layer.conv.out_channels}), layer.conv);
  }
  grads.latent = std::move(upstream);
  return grads;
}

Tensor generator_forward(const GeneratorNet& net, const Tensor& x) { return generator_trace(net, x).output; }

Tensor generator_forward_batch(const GeneratorNet& net, const Tensor& latents) {
  check_batch(latents, net.latent_shape(), "generator latent batch");
  Tensor out = Tensor::batch_of(latents.batch_size(), net.output_shape());
  for (std::size_t i = 0; i < latents.batch_size(); ++i) out.set_item(i, generator_forward(net, latents.item(i)));
  return out;
}

GeneratorGradients generator_backward(const GeneratorNet& net, const Tensor& x, const Tensor& residual) {
  return generator_backward(net, generator_trace(net, x), residual, true);
}

Tensor generator_latent_gradient(const GeneratorNet& net, const Tensor& x, const Tensor& residual) {
  return generator_backward(net, generator_trace(net, x), residual, false).latent;
}

std::vector<bool> generator_activation_pattern(const GeneratorNet& net, const Tensor& x) {
  const GeneratorTrace trace = generator_trace(net, x);
  std::vector<bool> pattern;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (net.layers()[l].spec.nonlinearity != Nonlinearity::relu) continue;
    for (double z : trace.preactivations[l].values()) pattern.push_back(z > 0.0);
  }
  return pattern;
}

}  // namespace coopnets
