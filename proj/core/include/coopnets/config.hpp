#pragma once

// Run configuration: a line-oriented text format with [section] headers and
// `key = value` entries. `#` starts a comment. Example:
//
//   [experiment]
//   name = toy2d
//
//   [dataset]
//   kind = gaussian_mixture_2d
//   component = -1 0 0.2
//   component = 1 0 0.2
//   n = 400
//   seed = 7
//
//   [descriptor]
//   s = 0.5
//   layer = conv out=32 kernel=1 act=relu
//   layer = fc out=1 act=identity
//
//   [training]
//   seed = 1
//
// See README.md for the full key list.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "coopnets/data_io.hpp"
#include "coopnets/nets.hpp"
#include "coopnets/training.hpp"

namespace coopnets {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string source, std::size_t line, std::string field, const std::string& message);

  std::size_t line() const noexcept { return line_; }  // 0 when not tied to a line
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

struct DatasetConfig {
  std::string kind;  // images | gaussian_mixture_2d | linear_factor | texture_patch
  std::filesystem::path path;    // images: directory; texture_patch: source image
  std::size_t size = 0;          // images: target edge length
  std::size_t channels = 1;
  std::size_t n = 0;             // synthetic kinds
  std::optional<std::uint64_t> seed;
  std::vector<MixtureComponent> components;
  Shape signal_shape;            // linear_factor
  std::size_t latent_dim = 0;    // linear_factor
  std::uint64_t loadings_seed = 0;
  double loadings_scale = 1.0;
  double noise_std = 0.0;
  std::size_t patch_size = 0;    // texture_patch
};

struct DescriptorConfig {
  double reference_std = 0.0;
  double init_std = 0.01;
  std::vector<LayerSpec> layers;
};

struct GeneratorConfig {
  Shape latent_shape;
  double noise_std = 0.0;
  double init_std = 0.01;
  std::vector<LayerSpec> layers;
};

struct RunConfig {
  std::string source;  // file name or preset name, for diagnostics
  std::string name;
  TrainMode mode = TrainMode::coopnets;
  DatasetConfig dataset;
  std::optional<DescriptorConfig> descriptor;
  std::optional<GeneratorConfig> generator;
  TrainConfig training;
  std::filesystem::path output_dir = "out";
  std::uint64_t montage_period = 0;     // 0: only at the end
  std::uint64_t checkpoint_period = 0;  // 0: only at the end
  std::size_t montage_cols = 8;
};

/// Parses config text. `overrides` are `section.key=value` strings applied on
/// top of the text (replacing single-valued keys, appending to `layer` and
/// `component`). Throws ConfigError with the offending line and field.
RunConfig parse_run_config(std::string_view text, const std::string& source,
                           const std::vector<std::string>& overrides = {});

/// Reads a config file, or a bundled preset when `name_or_path` is not a file
/// but names one ("toy2d", "toy2d.cfg" or "preset:toy2d").
RunConfig load_run_config(const std::string& name_or_path, const std::vector<std::string>& overrides = {});

struct BundledPreset {
  std::string_view name;
  std::string_view text;
};

const std::vector<BundledPreset>& bundled_presets();
std::optional<std::string_view> bundled_preset(std::string_view name);

/// Parses one `layer = ...` value, e.g. "conv out=100 kernel=15 stride=3 pad=7 act=relu".
LayerSpec parse_layer_spec(std::string_view text);
std::string format_layer_spec(const LayerSpec& spec);

/// Shape of one training example implied by the dataset block.
Shape signal_shape(const RunConfig& cfg);

/// Checks everything that can be checked without touching data: training
/// parameters, layer chaining, generator output vs. signal shape, and that
/// `mode` has the networks it needs. Throws ConfigError.
void validate_run_config(const RunConfig& cfg, TrainMode mode);

Dataset build_dataset(const RunConfig& cfg);
/// Networks with freshly initialized parameters (seeded from training.seed).
DescriptorNet build_descriptor(const RunConfig& cfg);
GeneratorNet build_generator(const RunConfig& cfg);

}  // namespace coopnets
