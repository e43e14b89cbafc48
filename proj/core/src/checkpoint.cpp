#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "coopnets/data_io.hpp"

namespace coopnets {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'O', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto e : s) u64(e);
  }
  void tensor(const Tensor& t) {
    if (t.empty() && t.rank() == 0) {
      u8(0);
      return;
    }
    u8(1);
    shape(t.shape());
    for (double v : t.values()) f64(v);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointTruncatedError(
          fmt::format("checkpoint truncated: needed {} more bytes at offset {} of {}", n, pos_, bytes_.size()));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > bytes_.size()) throw CheckpointTruncatedError("checkpoint truncated inside a string");
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  Shape shape() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw CheckpointFormatError(fmt::format("implausible tensor rank {}", rank));
    Shape s(rank);
    for (auto& e : s) e = u64();
    return s;
  }
  Tensor tensor() {
    const std::uint8_t present = u8();
    if (present == 0) return Tensor();
    if (present != 1) throw CheckpointFormatError("bad tensor marker");
    Shape s = shape();
    std::size_t count = 1;
    for (auto e : s) {
      if (e != 0 && count > (bytes_.size() - pos_) / e) throw CheckpointTruncatedError("checkpoint truncated inside a tensor");
      count *= e;
    }
    if ((bytes_.size() - pos_) / 8 < count) throw CheckpointTruncatedError("checkpoint truncated inside a tensor");
    std::vector<double> values(count);
    for (auto& v : values) v = f64();
    return Tensor(std::move(s), std::move(values));
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void write_langevin(Writer& w, const LangevinConfig& c) {
  w.f64(c.step_size);
  w.u64(c.steps);
  w.f64(c.temperature);
  w.u64(c.seed);
}

LangevinConfig read_langevin(Reader& r) {
  LangevinConfig c;
  c.step_size = r.f64();
  c.steps = r.u64();
  c.temperature = r.f64();
  c.seed = r.u64();
  return c;
}

void write_layers(Writer& w, const std::vector<LayerSpec>& specs) {
  w.u32(static_cast<std::uint32_t>(specs.size()));
  for (const auto& s : specs) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u64(s.out_channels);
    w.u64(s.kernel_height);
    w.u64(s.kernel_width);
    w.u64(s.stride);
    w.u64(s.padding);
    w.u64(s.upsample_factor);
    w.u8(static_cast<std::uint8_t>(s.nonlinearity));
  }
}

std::vector<LayerSpec> read_layers(Reader& r) {
  const std::uint32_t n = r.u32();
  if (n > 4096) throw CheckpointFormatError(fmt::format("implausible layer count {}", n));
  std::vector<LayerSpec> specs(n);
  for (auto& s : specs) {
    const auto kind = r.u8();
    if (kind > 2) throw CheckpointFormatError("unknown layer kind");
    s.kind = static_cast<LayerKind>(kind);
    s.out_channels = r.u64();
    s.kernel_height = r.u64();
    s.kernel_width = r.u64();
    s.stride = r.u64();
    s.padding = r.u64();
    s.upsample_factor = r.u64();
    const auto act = r.u8();
    if (act > 2) throw CheckpointFormatError("unknown nonlinearity");
    s.nonlinearity = static_cast<Nonlinearity>(act);
  }
  return specs;
}

void write_params(Writer& w, const ParamSet& p) {
  for (const auto& layer : p.layers) {
    w.tensor(layer.weight);
    w.tensor(layer.bias);
  }
}

ParamSet read_params(Reader& r, std::size_t layers) {
  ParamSet p;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor weight = r.tensor();
    Tensor bias = r.tensor();
    p.layers.push_back({std::move(weight), std::move(bias)});
  }
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(c.mode));
  w.u64(c.state.iteration);

  const TrainConfig& t = c.config;
  w.u64(t.iterations);
  w.f64(t.learning_rate_d);
  w.f64(t.learning_rate_g);
  w.u8(static_cast<std::uint8_t>(t.lr_decay));
  w.u64(t.chains);
  write_langevin(w, t.langevin_d);
  write_langevin(w, t.langevin_g);
  w.u64(t.g2_inner_steps);
  w.u64(t.batch_size);
  w.u8(t.g0_noise ? 1 : 0);
  w.u64(t.seed);

  w.u8(c.descriptor ? 1 : 0);
  if (c.descriptor) {
    w.shape(c.descriptor->input_shape());
    w.f64(c.descriptor->reference_std());
    write_layers(w, c.descriptor->layer_specs());
    write_params(w, c.descriptor->params());
  }
  w.u8(c.generator ? 1 : 0);
  if (c.generator) {
    w.shape(c.generator->latent_shape());
    w.f64(c.generator->noise_std());
    write_layers(w, c.generator->layer_specs());
    write_params(w, c.generator->params());
  }

  w.str(c.state.rng_state);
  w.tensor(c.state.chains.latents);
  w.tensor(c.state.chains.drafts);
  w.tensor(c.state.chains.revised);
  w.tensor(c.state.chains.reconstructions);
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
    throw CheckpointTruncatedError(fmt::format("checkpoint truncated: {} bytes", bytes.size()));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointMagicError("not a checkpoint file (bad magic; expected \"COOP\")");
  }
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(
        fmt::format("unsupported checkpoint version {} (this build reads version {})", version, kCheckpointVersion));
  }

  Checkpoint c;
  const auto mode = r.u8();
  if (mode > 2) throw CheckpointFormatError("unknown training mode");
  c.mode = static_cast<TrainMode>(mode);
  c.state.iteration = r.u64();

  TrainConfig& t = c.config;
  t.iterations = r.u64();
  t.learning_rate_d = r.f64();
  t.learning_rate_g = r.f64();
  const auto decay = r.u8();
  if (decay > 1) throw CheckpointFormatError("unknown learning-rate decay");
  t.lr_decay = static_cast<LearningRateDecay>(decay);
  t.chains = r.u64();
  t.langevin_d = read_langevin(r);
  t.langevin_g = read_langevin(r);
  t.g2_inner_steps = r.u64();
  t.batch_size = r.u64();
  t.g0_noise = r.u8() != 0;
  t.seed = r.u64();

  try {
    if (r.u8()) {
      Shape input = r.shape();
      const double s = r.f64();
      auto specs = read_layers(r);
      DescriptorNet net(std::move(input), specs, s);
      net.set_params(read_params(r, specs.size()));
      c.descriptor = std::move(net);
    }
    if (r.u8()) {
      Shape latent = r.shape();
      const double sigma = r.f64();
      auto specs = read_layers(r);
      GeneratorNet net(std::move(latent), specs, sigma);
      net.set_params(read_params(r, specs.size()));
      c.generator = std::move(net);
    }
  } catch (const ShapeError& e) {
    throw CheckpointFormatError(fmt::format("inconsistent network in checkpoint: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointFormatError(fmt::format("invalid network in checkpoint: {}", e.what()));
  }

  c.state.rng_state = r.str();
  c.state.chains.latents = r.tensor();
  c.state.chains.drafts = r.tensor();
  c.state.chains.revised = r.tensor();
  c.state.chains.reconstructions = r.tensor();
  if (!r.at_end()) throw CheckpointFormatError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace coopnets
