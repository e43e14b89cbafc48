#pragma once

// Datasets, image files, montages, metrics CSV and checkpoints.
//
// Pixels map to signal values by p -> 2p/255 - 1, so images live in [-1, 1]
// like the generator's tanh output.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopnets/nets.hpp"
#include "coopnets/tensor.hpp"
#include "coopnets/training.hpp"

namespace coopnets {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor examples;     // N x C x H x W
  std::string source;  // provenance
  std::size_t channels = 1;

  std::size_t size() const { return examples.batch_size(); }
};

/// 8-bit interleaved pixels as decoded from disk.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes binary PGM (P5, maxval <= 255) or PNG, chosen by content.
Image read_image(const std::filesystem::path& path);
/// Writes PGM for ".pgm" (gray only) and PNG otherwise.
void write_image(const Image& image, const std::filesystem::path& path);

double pixel_to_signal(std::uint8_t p) noexcept;
std::uint8_t signal_to_pixel(double v) noexcept;

/// Bilinear resampling of a C x H x W tensor with half-pixel centers and
/// clamped borders.
Tensor bilinear_resize(const Tensor& image, std::size_t height, std::size_t width);

/// C x target x target tensor in [-1, 1]. Gray/RGB is converted to `channels`.
Tensor image_to_tensor(const Image& image, std::size_t channels, std::size_t target_height,
                       std::size_t target_width);

/// Every decodable image file in `dir` (sorted by name), resized and normalized.
Dataset load_images(const std::filesystem::path& dir, std::size_t channels, std::size_t target_size);

/// Tiles a batch row-major into a grid_cols-wide sheet. Values are clamped to
/// [-1, 1] before quantization. Unused cells are black.
Image make_montage(const Tensor& batch, std::size_t grid_cols);
void save_montage(const Tensor& batch, std::size_t grid_cols, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic datasets

enum class ToyKind { gaussian_mixture_2d, linear_factor, texture_patch };

std::string_view to_string(ToyKind kind) noexcept;
ToyKind parse_toy_kind(std::string_view name);

struct MixtureComponent {
  double x = 0.0;
  double y = 0.0;
  double stddev = 0.0;
};

struct ToyParams {
  // gaussian_mixture_2d: components drawn with equal probability.
  std::vector<MixtureComponent> components;
  // linear_factor: Y = W X + eps, W is D x d, items shaped `signal_shape`.
  Tensor loadings;
  Shape signal_shape;
  double noise_std = 0.0;
  // texture_patch: random square crops of one C x H x W image.
  Tensor source_image;
  std::size_t patch_size = 0;
};

/// gaussian_mixture_2d items are 2 x 1 x 1. The point-cloud kinds are not
/// clipped to [-1, 1].
Dataset make_toy_dataset(ToyKind kind, const ToyParams& params, std::size_t n, std::uint64_t seed);

/// Loadings with N(0, scale^2) entries for a linear_factor dataset.
Tensor random_loadings(std::size_t signal_dim, std::size_t latent_dim, double scale, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
    "iter,grad_norm_D,feature_gap,recon_error,energy_S1,energy_S2,energy_S3";

std::string format_metrics_row(const IterationMetrics& row);

/// Appends rows to a CSV file, writing the header when the file is new.
class MetricsCsvWriter {
 public:
  explicit MetricsCsvWriter(const std::filesystem::path& path, bool append = false);
  void write(const IterationMetrics& row);

 private:
  std::ofstream out_;
};

std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian): "COOP", u32 version, then the sections written by
// save_checkpoint in a fixed order. Doubles are stored as their IEEE-754 bit
// patterns, so a round trip is exact.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainMode mode = TrainMode::coopnets;
  std::optional<DescriptorNet> descriptor;
  std::optional<GeneratorNet> generator;
  TrainConfig config;
  TrainState state;  // iteration index, RNG state, chains

  std::uint64_t iteration() const noexcept { return state.iteration; }
  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace coopnets
