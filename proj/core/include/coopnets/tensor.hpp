#pragma once

// Dense double-precision tensors and the convolution kernels every network
// layer is assembled from. Images are channels-first (C x H x W); a batch is
// a leading extent in front of that.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace coopnets {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Thrown when tensor extents do not line up. The message names the dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Channels-first element access for rank-3 tensors.
  double& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const;

  // Batch helpers: the leading extent indexes items.
  std::size_t batch_size() const { return extent(0); }
  Shape item_shape() const;
  Tensor item(std::size_t index) const;
  std::span<const double> item_values(std::size_t index) const;
  std::span<double> item_values(std::size_t index);
  void set_item(std::size_t index, const Tensor& item);
  static Tensor stack(std::span<const Tensor> items);
  static Tensor batch_of(std::size_t count, const Shape& item_shape);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale) noexcept;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor lhs, const Tensor& rhs);
Tensor operator-(Tensor lhs, const Tensor& rhs);
Tensor operator*(double scale, Tensor t);

/// y += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& y);
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& t);
bool all_finite(const Tensor& t) noexcept;
Tensor hadamard(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);

/// Filter geometry of a 2-D cross-correlation. Zero padding is the only
/// boundary mode.
struct ConvSpec {
  std::size_t kernel_height = 1;
  std::size_t kernel_width = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  /// floor((in + 2*padding - kernel) / stride) + 1; throws when it would be < 1.
  std::size_t output_height(std::size_t in_height) const;
  std::size_t output_width(std::size_t in_width) const;
  Shape filter_shape() const { return {out_channels, in_channels, kernel_height, kernel_width}; }
  void validate() const;

  bool operator==(const ConvSpec&) const = default;
};

/// Strided, zero-padded cross-correlation plus a per-output-channel bias.
/// input C_in x H x W, filters C_out x C_in x kh x kw, bias C_out.
Tensor convolve2d(const Tensor& input, const Tensor& filters, const Tensor& bias, const ConvSpec& spec);

/// Adjoint of convolve2d with respect to its input. The caller names the input
/// geometry (height, width) because striding makes it ambiguous.
Tensor transpose_convolve2d(const Tensor& grad_out, const Tensor& filters, const ConvSpec& spec,
                            std::size_t in_height, std::size_t in_width);

/// d<convolve2d(input), grad_out>/d filters.
Tensor conv_filter_gradient(const Tensor& input, const Tensor& grad_out, const ConvSpec& spec);

/// Per-channel sums of a C x H x W tensor (the bias gradient).
Tensor channel_sums(const Tensor& t);

enum class Nonlinearity { identity, relu, tanh };

std::string_view to_string(Nonlinearity kind) noexcept;
Nonlinearity parse_nonlinearity(std::string_view name);

Tensor apply_nonlinearity(const Tensor& input, Nonlinearity kind);
/// Element-wise derivative at `input`; relu'(0) is 0.
Tensor nonlinearity_derivative(const Tensor& input, Nonlinearity kind);

}  // namespace coopnets
