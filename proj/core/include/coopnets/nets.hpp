#pragma once

// The two networks of opposite direction:
//
//   descriptor  Y --conv--> ... --> f(Y; W_D)    (bottom-up, scalar score)
//   generator   X --deconv--> ... --> g(X; W_G)  (top-down, signal-shaped)
//
// Each backward pass produces the input gradient and the parameter gradient
// from one traversal over cached activations.

#include <cstdint>
#include <string_view>
#include <vector>

#include "coopnets/tensor.hpp"

namespace coopnets {

enum class LayerKind { conv, fully_connected, deconv };

std::string_view to_string(LayerKind kind) noexcept;
LayerKind parse_layer_kind(std::string_view name);

/// User-facing layer description.
///
/// conv:            strided cross-correlation (descriptor only).
/// fully_connected: descriptor: a conv whose kernel spans the whole incoming
///                  feature map; generator: maps a C x 1 x 1 input to
///                  out_channels x kernel_height x kernel_width.
/// deconv:          zero-insertion upsampling by upsample_factor followed by
///                  convolution, implemented as the adjoint of a stride-factor
///                  conv (generator only). Output extent = input * factor.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t out_channels = 1;
  std::size_t kernel_height = 1;
  std::size_t kernel_width = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t upsample_factor = 1;
  Nonlinearity nonlinearity = Nonlinearity::relu;

  bool operator==(const LayerSpec&) const = default;
};

/// A LayerSpec resolved against a concrete input geometry.
struct Layer {
  LayerSpec spec;
  ConvSpec conv;  // for deconv/generator-fc this is the forward conv being transposed
  Shape input_shape;
  Shape output_shape;

  Shape weight_shape() const { return conv.filter_shape(); }
  std::size_t bias_size() const { return output_shape.at(0); }

  bool operator==(const Layer&) const = default;
};

struct LayerParams {
  Tensor weight;
  Tensor bias;

  bool operator==(const LayerParams&) const = default;
};

/// Parameters of a whole network, one (weight, bias) pair per layer.
struct ParamSet {
  std::vector<LayerParams> layers;

  std::size_t size() const noexcept;
  /// Flat view over all coordinates: layer 0 weight, layer 0 bias, layer 1 weight, ...
  double& coordinate(std::size_t index);
  double coordinate(std::size_t index) const;
  ParamSet zeros_like() const;

  ParamSet& operator+=(const ParamSet& other);
  ParamSet& operator*=(double scale) noexcept;
  bool operator==(const ParamSet&) const = default;
};

void axpy(double alpha, const ParamSet& x, ParamSet& y);
double squared_norm(const ParamSet& p);
bool all_finite(const ParamSet& p) noexcept;

struct InitScheme {
  enum class Kind { gaussian, zero } kind = Kind::gaussian;
  double stddev = 0.01;
};

/// Filters ~ N(0, stddev^2), biases 0. Deterministic given the seed.
ParamSet init_params(const std::vector<Layer>& layers, const InitScheme& scheme, std::uint64_t seed);

/// Resolves layer specs against the descriptor input shape. Throws ShapeError
/// naming the first layer that does not chain.
std::vector<Layer> resolve_descriptor_layers(const Shape& input_shape, const std::vector<LayerSpec>& specs);
std::vector<Layer> resolve_generator_layers(const Shape& latent_shape, const std::vector<LayerSpec>& specs);

class DescriptorNet {
 public:
  DescriptorNet() = default;
  /// Parameters start at zero; see init_params.
  DescriptorNet(Shape input_shape, std::vector<LayerSpec> specs, double reference_std);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<LayerSpec> layer_specs() const;
  double reference_std() const noexcept { return reference_std_; }

  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  void set_params(ParamSet params);

  bool operator==(const DescriptorNet&) const = default;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  double reference_std_ = 1.0;
  ParamSet params_;
};

class GeneratorNet {
 public:
  GeneratorNet() = default;
  GeneratorNet(Shape latent_shape, std::vector<LayerSpec> specs, double noise_std);

  const Shape& latent_shape() const noexcept { return latent_shape_; }
  const Shape& output_shape() const noexcept { return layers_.back().output_shape; }
  std::size_t latent_dim() const noexcept { return shape_volume(latent_shape_); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<LayerSpec> layer_specs() const;
  double noise_std() const noexcept { return noise_std_; }

  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  void set_params(ParamSet params);

  bool operator==(const GeneratorNet&) const = default;

 private:
  Shape latent_shape_;
  std::vector<Layer> layers_;
  double noise_std_ = 1.0;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Descriptor. Single-item functions take Y shaped like input_shape(); batch
// functions take N x input_shape().

/// f(Y; W_D): the sum of the final layer's outputs.
double descriptor_score(const DescriptorNet& net, const Tensor& y);
std::vector<double> descriptor_scores(const DescriptorNet& net, const Tensor& batch);

/// ||Y||^2 / (2 s^2) - f(Y; W_D)
double descriptor_energy(const DescriptorNet& net, const Tensor& y);
std::vector<double> descriptor_energies(const DescriptorNet& net, const Tensor& batch);

struct DescriptorGradients {
  Tensor input;     // df/dY
  ParamSet params;  // df/dW_D
  double score = 0.0;
};

DescriptorGradients descriptor_backward(const DescriptorNet& net, const Tensor& y);

/// df/dY only; skips the parameter accumulation.
Tensor descriptor_input_gradient(const DescriptorNet& net, const Tensor& y);

/// Signs of every relu pre-activation, in layer order.
std::vector<bool> descriptor_activation_pattern(const DescriptorNet& net, const Tensor& y);

// ---------------------------------------------------------------------------
// Generator. Single-item X is shaped like latent_shape().

Tensor generator_forward(const GeneratorNet& net, const Tensor& x);
Tensor generator_forward_batch(const GeneratorNet& net, const Tensor& latents);

struct GeneratorGradients {
  Tensor latent;    // J_X^T residual
  ParamSet params;  // J_W^T residual
};

/// Pulls the signal-space cotangent `residual` back through g.
GeneratorGradients generator_backward(const GeneratorNet& net, const Tensor& x, const Tensor& residual);

Tensor generator_latent_gradient(const GeneratorNet& net, const Tensor& x, const Tensor& residual);

std::vector<bool> generator_activation_pattern(const GeneratorNet& net, const Tensor& x);

/// Cached forward pass, for callers that need g(X) before choosing the
/// cotangent (the inference dynamics): forward once, pull back once.
struct GeneratorTrace {
  std::vector<Tensor> inputs;
  std::vector<Tensor> preactivations;
  Tensor output;
};

GeneratorTrace generator_trace(const GeneratorNet& net, const Tensor& x);
GeneratorGradients generator_backward(const GeneratorNet& net, const GeneratorTrace& trace, const Tensor& residual,
                                      bool with_params);

}  // namespace coopnets
