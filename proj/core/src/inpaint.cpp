#include "coopnets/inpaint.hpp"

#include <cmath>

#include <fmt/format.h>

#include "coopnets/rng.hpp"

namespace coopnets {

Tensor square_mask(const Shape& signal_shape, std::size_t size, std::uint64_t seed) {
  if (signal_shape.size() != 3) throw ShapeError("square_mask expects a C x H x W shape");
  const std::size_t c_n = signal_shape[0];
  const std::size_t h = signal_shape[1];
  const std::size_t w = signal_shape[2];
  if (size > h || size > w) {
    throw std::invalid_argument(fmt::format("a {}x{} mask does not fit a {}x{} image", size, size, h, w));
  }
  Tensor mask(signal_shape, 1.0);
  if (size == 0) return mask;
  Engine engine(seed);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - size)(engine);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - size)(engine);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = y0; y < y0 + size; ++y)
      for (std::size_t x = x0; x < x0 + size; ++x) mask.at(c, y, x) = 0.0;
  return mask;
}

InpaintOutcome inpaint(const GeneratorNet& net, const Tensor& image, const Tensor& mask, const LangevinConfig& cfg) {
  require_same_shape(image, mask, "inpaint mask");
  const Mask m(mask);

  Tensor x0 = Tensor::batch_of(1, net.latent_shape());
  Engine engine(derive_seed(cfg.seed, 0x1A7));
  fill_normal(engine, x0.values());
  Tensor signals = Tensor::batch_of(1, image.shape());
  signals.set_item(0, image);
  const Tensor x = langevin_infer_masked(net, signals, m, x0, cfg);

  InpaintOutcome out;
  out.completion = generator_forward(net, x.item(0));

  double observed_sum = 0.0;
  std::size_t observed = 0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (mask[i] != 0.0) {
      observed_sum += image[i];
      ++observed;
    }
  }
  const double fill = observed > 0 ? observed_sum / double(observed) : 0.0;
  double err = 0.0;
  double base = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (mask[i] == 0.0) {
      err += std::abs(out.completion[i] - image[i]);
      base += std::abs(fill - image[i]);
      ++out.occluded;
    }
  }
  // Signals span [-1, 1]; halving reports errors on a [0, 1] intensity scale.
  if (out.occluded > 0) {
    out.error = err / double(out.occluded) / 2.0;
    out.baseline_error = base / double(out.occluded) / 2.0;
  }
  return out;
}

}  // namespace coopnets
