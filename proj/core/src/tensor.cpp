#include "coopnets/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace coopnets {

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError(fmt::format("tensor of shape {} needs {} values, got {}", shape_to_string(shape_),
                                 shape_volume(shape_), data_.size()));
  }
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError(fmt::format("axis {} out of range for shape {}", axis, shape_to_string(shape_)));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_to_string(shape_), shape_to_string(shape)));
  }
  return Tensor(std::move(shape), data_);
}

Shape Tensor::item_shape() const {
  if (shape_.empty()) throw ShapeError("rank-0 tensor has no batch axis");
  return Shape(shape_.begin() + 1, shape_.end());
}

std::span<const double> Tensor::item_values(std::size_t index) const {
  const std::size_t stride = data_.size() / std::max<std::size_t>(batch_size(), 1);
  if (index >= batch_size()) {
    throw ShapeError(fmt::format("batch index {} out of range (batch of {})", index, batch_size()));
  }
  return std::span<const double>(data_).subspan(index * stride, stride);
}

std::span<double> Tensor::item_values(std::size_t index) {
  const std::size_t stride = data_.size() / std::max<std::size_t>(batch_size(), 1);
  if (index >= batch_size()) {
    throw ShapeError(fmt::format("batch index {} out of range (batch of {})", index, batch_size()));
  }
  return std::span<double>(data_).subspan(index * stride, stride);
}

Tensor Tensor::item(std::size_t index) const {
  auto span = item_values(index);
  return Tensor(item_shape(), std::vector<double>(span.begin(), span.end()));
}

void Tensor::set_item(std::size_t index, const Tensor& item) {
  if (item.shape() != item_shape()) {
    throw ShapeError(fmt::format("batch item shape {} does not match {}", shape_to_string(item.shape()),
                                 shape_to_string(item_shape())));
  }
  std::ranges::copy(item.values(), item_values(index).begin());
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list of tensors");
  Tensor out = batch_of(items.size(), items.front().shape());
  for (std::size_t i = 0; i < items.size(); ++i) out.set_item(i, items[i]);
  return out;
}

Tensor Tensor::batch_of(std::size_t count, const Shape& item_shape) {
  Shape shape;
  shape.reserve(item_shape.size() + 1);
  shape.push_back(count);
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  return Tensor(std::move(shape));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(
        fmt::format("{}: shape {} vs {}", what, shape_to_string(a.shape()), shape_to_string(b.shape())));
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) noexcept {
  for (double& v : data_) v *= scale;
  return *this;
}

Tensor operator+(Tensor lhs, const Tensor& rhs) { return lhs += rhs; }
Tensor operator-(Tensor lhs, const Tensor& rhs) { return lhs -= rhs; }
Tensor operator*(double scale, Tensor t) { return t *= scale; }

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  const double* xs = x.data();
  double* ys = y.data();
  for (std::size_t i = 0; i < y.size(); ++i) ys[i] += alpha * xs[i];
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError(fmt::format("dot: sizes {} vs {}", a.size(), b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(const Tensor& t) { return dot(t, t); }

bool all_finite(const Tensor& t) noexcept {
  return std::ranges::all_of(t.values(), [](double v) { return std::isfinite(v); });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                          const char* axis) {
  if (stride == 0) throw ShapeError("conv stride must be >= 1");
  if (in + 2 * padding < kernel) {
    throw ShapeError(fmt::format("conv {}: kernel {} exceeds padded input {} (input {}, padding {})", axis,
                                 kernel, in + 2 * padding, in, padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

void check_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(fmt::format("{} must be C x H x W, got shape {}", what, shape_to_string(t.shape())));
  }
}

void check_filters(const Tensor& filters, const ConvSpec& spec) {
  if (filters.shape() != spec.filter_shape()) {
    throw ShapeError(fmt::format("filters shape {} does not match spec {}", shape_to_string(filters.shape()),
                                 shape_to_string(spec.filter_shape())));
  }
}

}  // namespace

std::size_t ConvSpec::output_height(std::size_t in_height) const {
  return output_extent(in_height, kernel_height, stride, padding, "height");
}

std::size_t ConvSpec::output_width(std::size_t in_width) const {
  return output_extent(in_width, kernel_width, stride, padding, "width");
}

void ConvSpec::validate() const {
  if (kernel_height == 0 || kernel_width == 0) throw ShapeError("conv kernel extent must be >= 1");
  if (stride == 0) throw ShapeError("conv stride must be >= 1");
  if (in_channels == 0) throw ShapeError("conv in_channels must be >= 1");
  if (out_channels == 0) throw ShapeError("conv out_channels must be >= 1");
}

Tensor convolve2d(const Tensor& input, const Tensor& filters, const Tensor& bias, const ConvSpec& spec) {
  spec.validate();
  check_rank3(input, "convolve2d input");
  if (input.extent(0) != spec.in_channels) {
    throw ShapeError(fmt::format("convolve2d: input channels {} but spec expects {}", input.extent(0),
                                 spec.in_channels));
  }
  check_filters(filters, spec);
  if (bias.size() != spec.out_channels) {
    throw ShapeError(
        fmt::format("convolve2d: bias has {} entries, expected {}", bias.size(), spec.out_channels));
  }

  const std::size_t in_h = input.extent(1);
  const std::size_t in_w = input.extent(2);
  const std::size_t out_h = spec.output_height(in_h);
  const std::size_t out_w = spec.output_width(in_w);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto stride = static_cast<std::ptrdiff_t>(spec.stride);

  Tensor out({spec.out_channels, out_h, out_w});
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    double* o = out.data() + co * out_h * out_w;
    std::fill(o, o + out_h * out_w, bias[co]);
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
      const double* x = input.data() + ci * in_h * in_w;
      for (std::size_t kh = 0; kh < spec.kernel_height; ++kh) {
        for (std::size_t kw = 0; kw < spec.kernel_width; ++kw) {
          const double w = filters.data()[((co * spec.in_channels + ci) * spec.kernel_height + kh) *
                                              spec.kernel_width + kw];
          if (w == 0.0) continue;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
            const double* xrow = x + ih * static_cast<std::ptrdiff_t>(in_w);
            double* orow = o + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in_w)) continue;
              orow[ow] += w * xrow[iw];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor transpose_convolve2d(const Tensor& grad_out, const Tensor& filters, const ConvSpec& spec,
                            std::size_t in_height, std::size_t in_width) {
  spec.validate();
  check_rank3(grad_out, "transpose_convolve2d grad_out");
  check_filters(filters, spec);
  const std::size_t out_h = spec.output_height(in_height);
  const std::size_t out_w = spec.output_width(in_width);
  if (grad_out.extent(0) != spec.out_channels || grad_out.extent(1) != out_h || grad_out.extent(2) != out_w) {
    throw ShapeError(fmt::format(
        "transpose_convolve2d: grad_out shape {} inconsistent with target input {}x{} (expects {}x{}x{})",
        shape_to_string(grad_out.shape()), in_height, in_width, spec.out_channels, out_h, out_w));
  }
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto stride = static_cast<std::ptrdiff_t>(spec.stride);

  Tensor result({spec.in_channels, in_height, in_width});
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    const double* g = grad_out.data() + co * out_h * out_w;
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
      double* x = result.data() + ci * in_height * in_width;
      for (std::size_t kh = 0; kh < spec.kernel_height; ++kh) {
        for (std::size_t kw = 0; kw < spec.kernel_width; ++kw) {
          const double w = filters.data()[((co * spec.in_channels + ci) * spec.kernel_height + kh) *
                                              spec.kernel_width + kw];
          if (w == 0.0) continue;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_height)) continue;
            double* xrow = x + ih * static_cast<std::ptrdiff_t>(in_width);
            const double* grow = g + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in_width)) continue;
              xrow[iw] += w * grow[ow];
            }
          }
        }
      }
    }
  }
  return result;
}

Tensor conv_filter_gradient(const Tensor& input, const Tensor& grad_out, const ConvSpec& spec) {
  spec.validate();
  check_rank3(input, "conv_filter_gradient input");
  check_rank3(grad_out, "conv_filter_gradient grad_out");
  const std::size_t in_h = input.extent(1);
  const std::size_t in_w = input.extent(2);
  const std::size_t out_h = spec.output_height(in_h);
  const std::size_t out_w = spec.output_width(in_w);
  if (input.extent(0) != spec.in_channels) {
    throw ShapeError(fmt::format("conv_filter_gradient: input channels {} but spec expects {}",
                                 input.extent(0), spec.in_channels));
  }
  if (grad_out.extent(0) != spec.out_channels || grad_out.extent(1) != out_h || grad_out.extent(2) != out_w) {
    throw ShapeError(fmt::format("conv_filter_gradient: grad_out shape {} but forward output is {}x{}x{}",
                                 shape_to_string(grad_out.shape()), spec.out_channels, out_h, out_w));
  }
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  const auto stride = static_cast<std::ptrdiff_t>(spec.stride);

  Tensor grad(spec.filter_shape());
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    const double* g = grad_out.data() + co * out_h * out_w;
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
      const double* x = input.data() + ci * in_h * in_w;
      for (std::size_t kh = 0; kh < spec.kernel_height; ++kh) {
        for (std::size_t kw = 0; kw < spec.kernel_width; ++kw) {
          double acc = 0.0;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride + static_cast<std::ptrdiff_t>(kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in_h)) continue;
            const double* xrow = x + ih * static_cast<std::ptrdiff_t>(in_w);
            const double* grow = g + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride + static_cast<std::ptrdiff_t>(kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in_w)) continue;
              acc += grow[ow] * xrow[iw];
            }
          }
          grad.data()[((co * spec.in_channels + ci) * spec.kernel_height + kh) * spec.kernel_width + kw] = acc;
        }
      }
    }
  }
  return grad;
}

Tensor channel_sums(const Tensor& t) {
  check_rank3(t, "channel_sums");
  const std::size_t plane = t.extent(1) * t.extent(2);
  Tensor out({t.extent(0)});
  for (std::size_t c = 0; c < t.extent(0); ++c) {
    const double* p = t.data() + c * plane;
    out[c] = std::accumulate(p, p + plane, 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

std::string_view to_string(Nonlinearity kind) noexcept {
  switch (kind) {
    case Nonlinearity::identity: return "identity";
    case Nonlinearity::relu: return "relu";
    case Nonlinearity::tanh: return "tanh";
  }
  return "identity";
}

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "identity" || name == "linear" || name == "none") return Nonlinearity::identity;
  if (name == "relu") return Nonlinearity::relu;
  if (name == "tanh") return Nonlinearity::tanh;
  throw std::invalid_argument(fmt::format("unknown nonlinearity '{}'", name));
}

Tensor apply_nonlinearity(const Tensor& input, Nonlinearity kind) {
  Tensor out = input;
  switch (kind) {
    case Nonlinearity::identity: break;
    case Nonlinearity::relu:
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Nonlinearity::tanh:
      for (double& v : out.values()) v = std::tanh(v);
      break;
  }
  return out;
}

Tensor nonlinearity_derivative(const Tensor& input, Nonlinearity kind) {
  Tensor out(input.shape());
  switch (kind) {
    case Nonlinearity::identity:
      std::ranges::fill(out.values(), 1.0);
      break;
    case Nonlinearity::relu:
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? 1.0 : 0.0;
      break;
    case Nonlinearity::tanh:
      for (std::size_t i = 0; i < input.size(); ++i) {
        const double t = std::tanh(input[i]);
        out[i] = 1.0 - t * t;
      }
      break;
  }
  return out;
}

}  // namespace coopnets
