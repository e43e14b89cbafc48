#pragma once

// Straight-line reference implementations for the unit tests. Nothing here
// calls into the library's convolution code.

#include <cmath>
#include <cstddef>
#include <vector>

#include "coopnets/nets.hpp"
#include "coopnets/rng.hpp"
#include "coopnets/tensor.hpp"

namespace oracle {

using coopnets::ConvSpec;
using coopnets::Tensor;

// out[o][i][j] = b[o] + sum_c sum_p sum_q x[c][i*s+p-pad][j*s+q-pad] * w[o][c][p][q]
inline Tensor conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
  const long H = long(x.extent(1)), W = long(x.extent(2));
  const long kh = long(spec.kernel_height), kw = long(spec.kernel_width);
  const long s = long(spec.stride), pad = long(spec.padding);
  const long oh = (H + 2 * pad - kh) / s + 1, ow = (W + 2 * pad - kw) / s + 1;
  Tensor out({spec.out_channels, std::size_t(oh), std::size_t(ow)});
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (long i = 0; i < oh; ++i) {
      for (long j = 0; j < ow; ++j) {
        double acc = b.empty() ? 0.0 : b[o];
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
          for (long p = 0; p < kh; ++p) {
            for (long q = 0; q < kw; ++q) {
              const long r = i * s + p - pad, t = j * s + q - pad;
              if (r < 0 || t < 0 || r >= H || t >= W) continue;
              acc += x.at(c, std::size_t(r), std::size_t(t)) *
                     w[((o * spec.in_channels + c) * std::size_t(kh) + std::size_t(p)) * std::size_t(kw) + std::size_t(q)];
            }
          }
        }
        out.at(o, std::size_t(i), std::size_t(j)) = acc;
      }
    }
  }
  return out;
}

// Transposed conv by scattering: each output cell of the forward conv sends
// y * w back to the inputs it read.
inline Tensor conv_transpose(const Tensor& y, const Tensor& w, const ConvSpec& spec, std::size_t H, std::size_t W) {
  Tensor x({spec.in_channels, H, W});
  const long kh = long(spec.kernel_height), kw = long(spec.kernel_width);
  const long s = long(spec.stride), pad = long(spec.padding);
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (long i = 0; i < long(y.extent(1)); ++i) {
      for (long j = 0; j < long(y.extent(2)); ++j) {
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
          for (long p = 0; p < kh; ++p) {
            for (long q = 0; q < kw; ++q) {
              const long r = i * s + p - pad, t = j * s + q - pad;
              if (r < 0 || t < 0 || r >= long(H) || t >= long(W)) continue;
              x.at(c, std::size_t(r), std::size_t(t)) +=
                  y.at(o, std::size_t(i), std::size_t(j)) *
                  w[((o * spec.in_channels + c) * std::size_t(kh) + std::size_t(p)) * std::size_t(kw) + std::size_t(q)];
            }
          }
        }
      }
    }
  }
  return x;
}

inline Tensor activate(Tensor t, coopnets::Nonlinearity n) {
  for (double& v : t.values()) {
    if (n == coopnets::Nonlinearity::relu) v = v > 0 ? v : 0.0;
    if (n == coopnets::Nonlinearity::tanh) v = std::tanh(v);
  }
  return t;
}

inline double descriptor_score(const coopnets::DescriptorNet& net, const Tensor& y) {
  Tensor cur = y;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    const auto& p = net.params().layers[l];
    cur = activate(conv(cur, p.weight, p.bias, layer.conv), layer.spec.nonlinearity);
  }
  double s = 0.0;
  for (double v : cur.values()) s += v;
  return s;
}

inline Tensor generator_forward(const coopnets::GeneratorNet& net, const Tensor& x) {
  Tensor cur = x;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    const auto& p = net.params().layers[l];
    Tensor pre = conv_transpose(cur, p.weight, layer.conv, layer.output_shape[1], layer.output_shape[2]);
    for (std::size_t c = 0; c < layer.output_shape[0]; ++c) {
      for (std::size_t k = 0; k < layer.output_shape[1] * layer.output_shape[2]; ++k) {
        pre[c * layer.output_shape[1] * layer.output_shape[2] + k] += p.bias[c];
      }
    }
    cur = activate(std::move(pre), layer.spec.nonlinearity);
  }
  return cur;
}

inline Tensor random_tensor(coopnets::Shape shape, std::uint64_t seed, double std = 1.0) {
  Tensor t(std::move(shape));
  coopnets::Engine e(seed);
  coopnets::fill_normal(e, t.values(), std);
  return t;
}

inline coopnets::ParamSet random_params(const std::vector<coopnets::Layer>& layers, std::uint64_t seed, double std) {
  coopnets::ParamSet p = coopnets::init_params(layers, {coopnets::InitScheme::Kind::gaussian, std}, seed);
  coopnets::Engine e(seed + 1);
  for (auto& l : p.layers) coopnets::fill_normal(e, l.bias.values(), 0.1);
  return p;
}

}  // namespace oracle
