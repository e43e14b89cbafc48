#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "coopnets/data_io.hpp"
#include "coopnets/rng.hpp"

namespace coopnets {

std::string_view to_string(ToyKind kind) noexcept {
  switch (kind) {
    case ToyKind::gaussian_mixture_2d: return "gaussian_mixture_2d";
    case ToyKind::linear_factor: return "linear_factor";
    case ToyKind::texture_patch: return "texture_patch";
  }
  return "gaussian_mixture_2d";
}

ToyKind parse_toy_kind(std::string_view name) {
  if (name == "gaussian_mixture_2d") return ToyKind::gaussian_mixture_2d;
  if (name == "linear_factor") return ToyKind::linear_factor;
  if (name == "texture_patch") return ToyKind::texture_patch;
  throw std::invalid_argument(fmt::format("unknown dataset kind '{}'", name));
}

Tensor random_loadings(std::size_t signal_dim, std::size_t latent_dim, double scale, std::uint64_t seed) {
  Tensor w({signal_dim, latent_dim});
  Engine engine(seed);
  fill_normal(engine, w.values(), scale);
  return w;
}

Dataset make_toy_dataset(ToyKind kind, const ToyParams& params, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("toy dataset needs n >= 1");
  Engine engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  switch (kind) {
    case ToyKind::gaussian_mixture_2d: {
      if (params.components.empty()) throw std::invalid_argument("gaussian_mixture_2d needs at least one component");
      for (const auto& c : params.components) {
        if (!(c.stddev >= 0.0)) throw std::invalid_argument("mixture component std must be >= 0");
      }
      std::uniform_int_distribution<std::size_t> pick(0, params.components.size() - 1);
      Tensor ex = Tensor::batch_of(n, {2, 1, 1});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = params.components[pick(engine)];
        const double dx = normal(engine);
        const double dy = normal(engine);
        ex[2 * i] = c.x + c.stddev * dx;
        ex[2 * i + 1] = c.y + c.stddev * dy;
      }
      return {std::move(ex), fmt::format("gaussian_mixture_2d({} components, seed {})", params.components.size(), seed), 2};
    }
    case ToyKind::linear_factor: {
      const Tensor& w = params.loadings;
      if (w.rank() != 2 || w.size() == 0) throw std::invalid_argument("linear_factor needs a D x d loading matrix");
      const std::size_t signal_dim = w.extent(0);
      const std::size_t latent_dim = w.extent(1);
      Shape shape = params.signal_shape.empty() ? Shape{signal_dim, 1, 1} : params.signal_shape;
      if (shape_volume(shape) != signal_dim) {
        throw std::invalid_argument(fmt::format("linear_factor signal shape {} does not hold D = {} values",
                                                shape_to_string(shape), signal_dim));
      }
      if (!(params.noise_std >= 0.0)) throw std::invalid_argument("linear_factor noise std must be >= 0");
      Tensor ex = Tensor::batch_of(n, shape);
      std::vector<double> x(latent_dim);
      for (std::size_t i = 0; i < n; ++i) {
        for (double& v : x) v = normal(engine);
        auto item = ex.item_values(i);
        for (std::size_t r = 0; r < signal_dim; ++r) {
          double acc = 0.0;
          for (std::size_t k = 0; k < latent_dim; ++k) acc += w[r * latent_dim + k] * x[k];
          item[r] = acc + params.noise_std * normal(engine);
        }
      }
      return {std::move(ex), fmt::format("linear_factor(D={}, d={}, seed {})", signal_dim, latent_dim, seed), shape[0]};
    }
    case ToyKind::texture_patch: {
      const Tensor& src = params.source_image;
      const std::size_t p = params.patch_size;
      if (src.rank() != 3) throw std::invalid_argument("texture_patch needs a C x H x W source image");
      if (p == 0 || p > src.extent(1) || p > src.extent(2)) {
        throw std::invalid_argument(fmt::format("patch size {} does not fit the {}x{} source", p, src.extent(1),
                                                src.extent(2)));
      }
      std::uniform_int_distribution<std::size_t> oy(0, src.extent(1) - p);
      std::uniform_int_distribution<std::size_t> ox(0, src.extent(2) - p);
      Tensor ex = Tensor::batch_of(n, {src.extent(0), p, p});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y0 = oy(engine);
        const std::size_t x0 = ox(engine);
        auto item = ex.item_values(i);
        for (std::size_t c = 0; c < src.extent(0); ++c)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) item[(c * p + y) * p + x] = src.at(c, y0 + y, x0 + x);
      }
      return {std::move(ex), fmt::format("texture_patch({}px, seed {})", p, seed), src.extent(0)};
    }
  }
  throw std::invalid_argument("unknown dataset kind");
}

// ---------------------------------------------------------------------------
// Metrics CSV

std::string format_metrics_row(const IterationMetrics& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.iteration, r.grad_norm_d, r.feature_gap,
                     r.recon_error, r.energy_s1, r.energy_s2, r.energy_s3);
}

MetricsCsvWriter::MetricsCsvWriter(const std::filesystem::path& path, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw IoError(fmt::format("cannot write metrics to '{}'", path.string()));
  if (fresh) out_ << kMetricsHeader << '\n';
}

void MetricsCsvWriter::write(const IterationMetrics& row) {
  out_ << format_metrics_row(row) << '\n';
  out_.flush();
}

std::vector<IterationMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read '{}'", path.string()));
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw IoError(fmt::format("'{}' is not a metrics CSV", path.string()));
  std::vector<IterationMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    IterationMetrics r;
    char comma = 0;
    ls >> r.iteration >> comma >> r.grad_norm_d >> comma >> r.feature_gap >> comma >> r.recon_error >> comma >>
        r.energy_s1 >> comma >> r.energy_s2 >> comma >> r.energy_s3;
    if (!ls) throw IoError(fmt::format("'{}': malformed row '{}'", path.string(), line));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace coopnets
