#include "coopnets/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "coopnets/rng.hpp"

namespace coopnets {

namespace fs = std::filesystem;

ConfigError::ConfigError(std::string source, std::size_t line, std::string field, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("{}:{}: {}: {}", source, line, field, message)
                                  : fmt::format("{}: {}: {}", source, field, message)),
      line_(line),
      field_(std::move(field)) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <class T>
T parse_unsigned(std::string_view s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument(fmt::format("expected a non-negative integer, got '{}'", s));
  }
  return v;
}

double parse_real(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument(fmt::format("expected a number, got '{}'", s));
  }
  return v;
}

double parse_positive(std::string_view s) {
  const double v = parse_real(s);
  if (!(v > 0.0)) throw std::invalid_argument(fmt::format("must be > 0, got {}", v));
  return v;
}

double parse_non_negative(std::string_view s) {
  const double v = parse_real(s);
  if (!(v >= 0.0)) throw std::invalid_argument(fmt::format("must be >= 0, got {}", v));
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw std::invalid_argument(fmt::format("expected true or false, got '{}'", s));
}

// "1x8x8", "8x8" (one channel implied) or "100" (100 x 1 x 1)
Shape parse_shape(std::string_view s) {
  Shape dims;
  std::size_t start = 0;
  while (true) {
    const auto x = s.find('x', start);
    dims.push_back(parse_unsigned<std::size_t>(s.substr(start, x - start)));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  if (dims.size() == 1) dims = {dims[0], 1, 1};
  else if (dims.size() == 2) dims.insert(dims.begin(), 1);
  if (dims.size() != 3) throw std::invalid_argument(fmt::format("expected CxHxW, got '{}'", s));
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument(fmt::format("shape extents must be >= 1, got '{}'", s));
  }
  return dims;
}

std::pair<std::size_t, std::size_t> parse_extent_pair(std::string_view s) {
  const auto x = s.find('x');
  if (x == std::string_view::npos) {
    const auto k = parse_unsigned<std::size_t>(s);
    return {k, k};
  }
  return {parse_unsigned<std::size_t>(s.substr(0, x)), parse_unsigned<std::size_t>(s.substr(x + 1))};
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;
};

bool is_repeatable(std::string_view section, std::string_view key) {
  return key == "layer" || (section == "dataset" && key == "component");
}

const std::vector<std::string_view>& known_keys(std::string_view section) {
  static const std::vector<std::string_view> experiment = {"name"};
  static const std::vector<std::string_view> dataset = {
      "kind", "path", "size", "channels", "n", "seed", "component", "shape", "signal_dim", "latent_dim",
      "loadings_seed", "loadings_scale", "noise_std", "patch_size"};
  static const std::vector<std::string_view> descriptor = {"s", "init_std", "layer"};
  static const std::vector<std::string_view> generator = {"latent", "sigma", "init_std", "layer"};
  static const std::vector<std::string_view> training = {
      "mode", "iterations", "lr_d", "lr_g", "lr_decay", "chains", "langevin_d_steps", "langevin_d_step_size",
      "langevin_d_temperature", "langevin_g_steps", "langevin_g_step_size", "langevin_g_temperature",
      "g2_inner_steps", "batch_size", "g0_noise", "seed"};
  static const std::vector<std::string_view> output = {"dir", "montage_period", "checkpoint_period", "montage_cols"};
  static const std::vector<std::string_view> none;
  if (section == "experiment") return experiment;
  if (section == "dataset") return dataset;
  if (section == "descriptor") return descriptor;
  if (section == "generator") return generator;
  if (section == "training") return training;
  if (section == "output") return output;
  return none;
}

void check_known(const std::string& source, const Entry& e) {
  const auto& keys = known_keys(e.section);
  if (keys.empty()) throw ConfigError(source, e.line, e.section, "unknown section");
  if (std::ranges::find(keys, e.key) == keys.end()) {
    throw ConfigError(source, e.line, fmt::format("{}.{}", e.section, e.key), "unknown key");
  }
}

std::vector<Entry> read_entries(std::string_view text, const std::string& source) {
  std::vector<Entry> entries;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source, line_no, "section", "missing ']'");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (known_keys(section).empty()) throw ConfigError(source, line_no, section, "unknown section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source, line_no, std::string(line), "expected 'key = value'");
    Entry e{section, std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (section.empty()) throw ConfigError(source, line_no, e.key, "entry before any [section] header");
    if (e.value.empty()) throw ConfigError(source, line_no, fmt::format("{}.{}", section, e.key), "empty value");
    check_known(source, e);
    if (!is_repeatable(e.section, e.key)) {
      for (const auto& prev : entries) {
        if (prev.section == e.section && prev.key == e.key) {
          throw ConfigError(source, line_no, fmt::format("{}.{}", section, e.key),
                            fmt::format("duplicate key (first set on line {})", prev.line));
        }
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void apply_overrides(std::vector<Entry>& entries, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override", 0, o, "expected section.key=value");
    }
    Entry e{std::string(trim(std::string_view(o).substr(0, dot))),
            std::string(trim(std::string_view(o).substr(dot + 1, eq - dot - 1))),
            std::string(trim(std::string_view(o).substr(eq + 1))), 0};
    check_known("override", e);
    if (e.value.empty()) throw ConfigError("override", 0, o, "empty value");
    if (!is_repeatable(e.section, e.key)) {
      std::erase_if(entries, [&](const Entry& x) { return x.section == e.section && x.key == e.key; });
    }
    entries.push_back(std::move(e));
  }
}

MixtureComponent parse_component(std::string_view s) {
  const auto parts = split_ws(s);
  if (parts.size() != 3) throw std::invalid_argument("expected 'x y stddev'");
  return {parse_real(parts[0]), parse_real(parts[1]), parse_non_negative(parts[2])};
}

std::size_t parse_batch_size(std::string_view s) {
  if (s == "auto") return kAutoBatch;
  if (s == "full") return kFullBatch;
  const auto v = parse_unsigned<std::size_t>(s);
  if (v == 0) throw std::invalid_argument("batch_size must be >= 1, 'auto' or 'full'");
  return v;
}

void apply_entry(RunConfig& cfg, const Entry& e, bool& has_train_seed, bool& has_s, bool& has_latent,
                 bool& has_sigma) {
  const std::string& k = e.key;
  const std::string_view v = e.value;
  if (e.section == "experiment") {
    cfg.name = e.value;
  } else if (e.section == "dataset") {
    auto& d = cfg.dataset;
    if (k == "kind") {
      if (v != "images") parse_toy_kind(v);
      d.kind = e.value;
    } else if (k == "path") {
      d.path = e.value;
    } else if (k == "size") {
      d.size = parse_unsigned<std::size_t>(v);
    } else if (k == "channels") {
      d.channels = parse_unsigned<std::size_t>(v);
      if (d.channels != 1 && d.channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    } else if (k == "n") {
      d.n = parse_unsigned<std::size_t>(v);
    } else if (k == "seed") {
      d.seed = parse_unsigned<std::uint64_t>(v);
    } else if (k == "component") {
      d.components.push_back(parse_component(v));
    } else if (k == "shape") {
      d.signal_shape = parse_shape(v);
    } else if (k == "signal_dim") {
      d.signal_shape = {parse_unsigned<std::size_t>(v), 1, 1};
    } else if (k == "latent_dim") {
      d.latent_dim = parse_unsigned<std::size_t>(v);
    } else if (k == "loadings_seed") {
      d.loadings_seed = parse_unsigned<std::uint64_t>(v);
    } else if (k == "loadings_scale") {
      d.loadings_scale = parse_positive(v);
    } else if (k == "noise_std") {
      d.noise_std = parse_non_negative(v);
    } else if (k == "patch_size") {
      d.patch_size = parse_unsigned<std::size_t>(v);
    }
  } else if (e.section == "descriptor") {
    if (!cfg.descriptor) cfg.descriptor.emplace();
    auto& d = *cfg.descriptor;
    if (k == "s") {
      d.reference_std = parse_positive(v);
      has_s = true;
    } else if (k == "init_std") {
      d.init_std = parse_non_negative(v);
    } else if (k == "layer") {
      d.layers.push_back(parse_layer_spec(v));
    }
  } else if (e.section == "generator") {
    if (!cfg.generator) cfg.generator.emplace();
    auto& g = *cfg.generator;
    if (k == "latent") {
      g.latent_shape = parse_shape(v);
      has_latent = true;
    } else if (k == "sigma") {
      g.noise_std = parse_positive(v);
      has_sigma = true;
    } else if (k == "init_std") {
      g.init_std = parse_non_negative(v);
    } else if (k == "layer") {
      g.layers.push_back(parse_layer_spec(v));
    }
  } else if (e.section == "training") {
    auto& t = cfg.training;
    if (k == "mode") cfg.mode = parse_train_mode(v);
    else if (k == "iterations") t.iterations = parse_unsigned<std::uint64_t>(v);
    else if (k == "lr_d") t.learning_rate_d = parse_non_negative(v);
    else if (k == "lr_g") t.learning_rate_g = parse_non_negative(v);
    else if (k == "lr_decay") t.lr_decay = parse_learning_rate_decay(v);
    else if (k == "chains") t.chains = parse_unsigned<std::size_t>(v);
    else if (k == "langevin_d_steps") t.langevin_d.steps = parse_unsigned<std::size_t>(v);
    else if (k == "langevin_d_step_size") t.langevin_d.step_size = parse_non_negative(v);
    else if (k == "langevin_d_temperature") t.langevin_d.temperature = parse_non_negative(v);
    else if (k == "langevin_g_steps") t.langevin_g.steps = parse_unsigned<std::size_t>(v);
    else if (k == "langevin_g_step_size") t.langevin_g.step_size = parse_non_negative(v);
    else if (k == "langevin_g_temperature") t.langevin_g.temperature = parse_non_negative(v);
    else if (k == "g2_inner_steps") t.g2_inner_steps = parse_unsigned<std::size_t>(v);
    else if (k == "batch_size") t.batch_size = parse_batch_size(v);
    else if (k == "g0_noise") t.g0_noise = parse_bool(v);
    else if (k == "seed") {
      t.seed = parse_unsigned<std::uint64_t>(v);
      has_train_seed = true;
    }
  } else if (e.section == "output") {
    if (k == "dir") cfg.output_dir = e.value;
    else if (k == "montage_period") cfg.montage_period = parse_unsigned<std::uint64_t>(v);
    else if (k == "checkpoint_period") cfg.checkpoint_period = parse_unsigned<std::uint64_t>(v);
    else if (k == "montage_cols") {
      cfg.montage_cols = parse_unsigned<std::size_t>(v);
      if (cfg.montage_cols == 0) throw std::invalid_argument("montage_cols must be >= 1");
    }
  }
}

std::string_view strip_preset_name(std::string_view name) {
  if (name.starts_with("preset:")) name.remove_prefix(7);
  if (name.ends_with(".cfg")) name.remove_suffix(4);
  return name;
}

}  // namespace

LayerSpec parse_layer_spec(std::string_view text) {
  const auto tokens = split_ws(text);
  if (tokens.empty()) throw std::invalid_argument("empty layer");
  LayerSpec spec;
  spec.kind = parse_layer_kind(tokens[0]);
  bool has_out = false;
  bool has_kernel = false;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument(fmt::format("expected name=value, got '{}'", tokens[i]));
    }
    const auto key = tokens[i].substr(0, eq);
    const auto val = tokens[i].substr(eq + 1);
    if (key == "out") {
      spec.out_channels = parse_unsigned<std::size_t>(val);
      has_out = true;
    } else if (key == "kernel" || key == "size") {
      std::tie(spec.kernel_height, spec.kernel_width) = parse_extent_pair(val);
      has_kernel = true;
    } else if (key == "stride") {
      spec.stride = parse_unsigned<std::size_t>(val);
    } else if (key == "pad") {
      spec.padding = parse_unsigned<std::size_t>(val);
    } else if (key == "factor") {
      spec.upsample_factor = parse_unsigned<std::size_t>(val);
    } else if (key == "act") {
      spec.nonlinearity = parse_nonlinearity(val);
    } else {
      throw std::invalid_argument(fmt::format("unknown layer attribute '{}'", key));
    }
  }
  if (!has_out) throw std::invalid_argument("layer needs out=");
  if (spec.kind == LayerKind::fully_connected) {
    if (spec.stride != 1 || spec.padding != 0 || spec.upsample_factor != 1) {
      throw std::invalid_argument("fc layers take no stride, pad or factor");
    }
  } else if (!has_kernel) {
    throw std::invalid_argument("layer needs kernel=");
  }
  if (spec.kind == LayerKind::deconv && spec.stride != 1) {
    throw std::invalid_argument("deconv layers use factor=, not stride=");
  }
  if (spec.kind == LayerKind::conv && spec.upsample_factor != 1) {
    throw std::invalid_argument("conv layers use stride=, not factor=");
  }
  return spec;
}

std::string format_layer_spec(const LayerSpec& s) {
  std::string out = fmt::format("{} out={}", to_string(s.kind), s.out_channels);
  if (s.kind == LayerKind::fully_connected) {
    if (s.kernel_height != 1 || s.kernel_width != 1) out += fmt::format(" size={}x{}", s.kernel_height, s.kernel_width);
  } else {
    out += fmt::format(" kernel={}x{}", s.kernel_height, s.kernel_width);
  }
  if (s.stride != 1) out += fmt::format(" stride={}", s.stride);
  if (s.padding != 0) out += fmt::format(" pad={}", s.padding);
  if (s.upsample_factor != 1) out += fmt::format(" factor={}", s.upsample_factor);
  out += fmt::format(" act={}", to_string(s.nonlinearity));
  return out;
}

RunConfig parse_run_config(std::string_view text, const std::string& source,
                           const std::vector<std::string>& overrides) {
  auto entries = read_entries(text, source);
  apply_overrides(entries, overrides);

  RunConfig cfg;
  cfg.source = source;
  bool has_train_seed = false;
  bool has_s = false;
  bool has_latent = false;
  bool has_sigma = false;
  for (const auto& e : entries) {
    try {
      apply_entry(cfg, e, has_train_seed, has_s, has_latent, has_sigma);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(e.line > 0 ? source : "override", e.line, fmt::format("{}.{}", e.section, e.key),
                        err.what());
    }
  }
  if (!has_train_seed) {
    throw ConfigError(source, 0, "training.seed", "missing; seeds must be explicit");
  }
  if (cfg.dataset.kind.empty()) throw ConfigError(source, 0, "dataset.kind", "missing");
  if (cfg.descriptor && !has_s) throw ConfigError(source, 0, "descriptor.s", "missing");
  if (cfg.generator && !has_latent) throw ConfigError(source, 0, "generator.latent", "missing");
  if (cfg.generator && !has_sigma) throw ConfigError(source, 0, "generator.sigma", "missing");
  if (cfg.name.empty()) cfg.name = std::string(strip_preset_name(fs::path(source).filename().string()));
  return cfg;
}

const std::vector<BundledPreset>& bundled_presets();  // generated at build time

std::optional<std::string_view> bundled_preset(std::string_view name) {
  name = strip_preset_name(name);
  for (const auto& p : bundled_presets()) {
    if (p.name == name) return p.text;
  }
  return std::nullopt;
}

RunConfig load_run_config(const std::string& name_or_path, const std::vector<std::string>& overrides) {
  const fs::path path(name_or_path);
  std::error_code ec;
  if (!name_or_path.starts_with("preset:") && fs::is_regular_file(path, ec)) {
    std::ifstream in(path);
    if (!in) throw ConfigError(name_or_path, 0, "file", "cannot read");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), name_or_path, overrides);
  }
  if (auto text = bundled_preset(name_or_path)) {
    return parse_run_config(*text, std::string(strip_preset_name(name_or_path)) + ".cfg", overrides);
  }
  std::string names;
  for (const auto& p : bundled_presets()) names += fmt::format("{}{}", names.empty() ? "" : ", ", p.name);
  throw ConfigError(name_or_path, 0, "config", fmt::format("no such file or bundled preset (bundled: {})", names));
}

Shape signal_shape(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind == "images") return {d.channels, d.size, d.size};
  if (d.kind == "gaussian_mixture_2d") return {2, 1, 1};
  if (d.kind == "linear_factor") return d.signal_shape;
  if (d.kind == "texture_patch") return {d.channels, d.patch_size, d.patch_size};
  return {};
}

void validate_run_config(const RunConfig& cfg, TrainMode mode) {
  const std::string& src = cfg.source;
  const auto& d = cfg.dataset;
  auto need = [&](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(src, 0, field, what);
  };
  if (d.kind == "images") {
    need(!d.path.empty(), "dataset.path", "required for kind = images");
    need(d.size > 0, "dataset.size", "required for kind = images");
  } else {
    need(d.n > 0, "dataset.n", "synthetic datasets need n >= 1");
    need(d.seed.has_value(), "dataset.seed", "missing; seeds must be explicit");
    if (d.kind == "gaussian_mixture_2d") {
      need(!d.components.empty(), "dataset.component", "at least one component is required");
    } else if (d.kind == "linear_factor") {
      need(!d.signal_shape.empty(), "dataset.shape", "linear_factor needs shape or signal_dim");
      need(d.latent_dim > 0, "dataset.latent_dim", "linear_factor needs latent_dim >= 1");
    } else if (d.kind == "texture_patch") {
      need(!d.path.empty(), "dataset.path", "texture_patch needs a source image path");
      need(d.patch_size > 0, "dataset.patch_size", "texture_patch needs patch_size >= 1");
    }
  }

  try {
    cfg.training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(src, 0, "training", e.what());
  }

  const Shape signal = signal_shape(cfg);
  const bool needs_d = mode != TrainMode::generator;
  const bool needs_g = mode != TrainMode::descriptor;
  need(!needs_d || cfg.descriptor.has_value(), "descriptor",
       "this training mode needs a [descriptor] section");
  need(!needs_g || cfg.generator.has_value(), "generator", "this training mode needs a [generator] section");
  if (mode == TrainMode::generator) {
    need(cfg.training.langevin_g.steps >= 1, "training.langevin_g_steps",
         "generator-only training needs at least one inference step");
  }

  if (cfg.descriptor) {
    need(!cfg.descriptor->layers.empty(), "descriptor.layer", "at least one layer is required");
    try {
      resolve_descriptor_layers(signal, cfg.descriptor->layers);
    } catch (const ShapeError& e) {
      throw ConfigError(src, 0, "descriptor.layer", e.what());
    }
  }
  if (cfg.generator) {
    need(!cfg.generator->layers.empty(), "generator.layer", "at least one layer is required");
    std::vector<Layer> layers;
    try {
      layers = resolve_generator_layers(cfg.generator->latent_shape, cfg.generator->layers);
    } catch (const ShapeError& e) {
      throw ConfigError(src, 0, "generator.layer", e.what());
    }
    if (layers.back().output_shape != signal) {
      throw ConfigError(src, 0, "generator.layer",
                        fmt::format("generator output {} does not match the signal shape {}",
                                    shape_to_string(layers.back().output_shape), shape_to_string(signal)));
    }
  }
}

Dataset build_dataset(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind == "images") return load_images(d.path, d.channels, d.size);
  ToyParams params;
  const ToyKind kind = parse_toy_kind(d.kind);
  switch (kind) {
    case ToyKind::gaussian_mixture_2d:
      params.components = d.components;
      break;
    case ToyKind::linear_factor:
      params.loadings = random_loadings(shape_volume(d.signal_shape), d.latent_dim, d.loadings_scale, d.loadings_seed);
      params.signal_shape = d.signal_shape;
      params.noise_std = d.noise_std;
      break;
    case ToyKind::texture_patch: {
      const Image img = read_image(d.path);
      params.source_image = image_to_tensor(img, d.channels, img.height, img.width);
      params.patch_size = d.patch_size;
      break;
    }
  }
  return make_toy_dataset(kind, params, d.n, *d.seed);
}

DescriptorNet build_descriptor(const RunConfig& cfg) {
  const auto& d = cfg.descriptor.value();
  DescriptorNet net(signal_shape(cfg), d.layers, d.reference_std);
  const InitScheme scheme{d.init_std > 0.0 ? InitScheme::Kind::gaussian : InitScheme::Kind::zero, d.init_std};
  net.set_params(init_params(net.layers(), scheme, derive_seed(cfg.training.seed, 0xDE5C)));
  return net;
}

GeneratorNet build_generator(const RunConfig& cfg) {
  const auto& g = cfg.generator.value();
  GeneratorNet net(g.latent_shape, g.layers, g.noise_std);
  const InitScheme scheme{g.init_std > 0.0 ? InitScheme::Kind::gaussian : InitScheme::Kind::zero, g.init_std};
  net.set_params(init_params(net.layers(), scheme, derive_seed(cfg.training.seed, 0x6E7)));
  return net;
}

}  // namespace coopnets
