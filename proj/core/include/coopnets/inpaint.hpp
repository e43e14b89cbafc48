#pragma once

// Image completion with a trained generator: infer X from the observed pixels
// only, then read the occluded pixels off g(X).

#include <cstdint>

#include "coopnets/langevin.hpp"
#include "coopnets/nets.hpp"
#include "coopnets/tensor.hpp"

namespace coopnets {

/// Signal-shaped mask with a size x size occluded square (zeros) at a random
/// position, the same in every channel. size 0 gives an all-observed mask.
/// Throws std::invalid_argument when the square does not fit.
Tensor square_mask(const Shape& signal_shape, std::size_t size, std::uint64_t seed);

struct InpaintOutcome {
  Tensor completion;             // g(X)
  std::size_t occluded = 0;      // number of occluded values
  double error = 0.0;            // mean |g(X) - Y| over occluded values, intensity units
  double baseline_error = 0.0;   // same for filling with the observed mean
};

/// Runs masked inference from X0 ~ N(0, I) (drawn from cfg.seed) and scores the
/// completion. Errors are 0 when nothing is occluded.
InpaintOutcome inpaint(const GeneratorNet& net, const Tensor& image, const Tensor& mask, const LangevinConfig& cfg);

}  // namespace coopnets
