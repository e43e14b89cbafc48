#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <png.h>

#include "coopnets/data_io.hpp"

namespace coopnets {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

Image decode_pgm(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  std::size_t pos = 2;
  auto fail = [&](const char* why) { return IoError(fmt::format("'{}': bad PGM ({})", path.string(), why)); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail("expected a header number");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  Image img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (img.width == 0 || img.height == 0) throw fail("zero extent");
  if (maxval == 0 || maxval > 255) throw fail("only 8-bit maxval is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("missing header terminator");
  ++pos;
  const std::size_t count = img.width * img.height;
  if (bytes.size() - pos < count) throw fail("truncated pixel data");
  img.channels = 1;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(255.0 * std::min<double>(p, maxval) / maxval));
  }
  return img;
}

Image decode_png(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw IoError(fmt::format("'{}': {}", path.string(), png.message));
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img;
  img.width = png.width;
  img.height = png.height;
  img.channels = color ? 3 : 1;
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError(fmt::format("'{}': {}", path.string(), png.message));
  }
  return img;
}

}  // namespace

Image read_image(const fs::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  if (is_png(bytes)) return decode_png(bytes, path);
  throw IoError(fmt::format("'{}': not a binary PGM (P5) or PNG file", path.string()));
}

void write_image(const Image& image, const fs::path& path) {
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw IoError("image pixel buffer does not match its extents");
  }
  if (path.extension() == ".pgm") {
    if (image.channels != 1) throw IoError(fmt::format("'{}': PGM needs a single channel", path.string()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    return;
  }
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(fmt::format("cannot write '{}': {}", path.string(), png.message));
  }
}

double pixel_to_signal(std::uint8_t p) noexcept { return 2.0 * p / 255.0 - 1.0; }

std::uint8_t signal_to_pixel(double v) noexcept {
  if (!(v > -1.0)) return 0;
  if (v >= 1.0) return 255;
  // The slack keeps values that came from a pixel on the same pixel.
  const double p = std::floor((v + 1.0) * 127.5 + 1e-9);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

Tensor bilinear_resize(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("bilinear_resize expects C x H x W");
  if (height == 0 || width == 0) throw ShapeError("bilinear_resize target must be non-empty");
  const std::size_t c_n = image.extent(0);
  const std::size_t in_h = image.extent(1);
  const std::size_t in_w = image.extent(2);
  if (in_h == height && in_w == width) return image;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = double(in) / double(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, double(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[o] = {lo, std::min(lo + 1, in - 1), src - double(lo)};
    }
    return t;
  };
  const auto ty = taps(in_h, height);
  const auto tx = taps(in_w, width);

  Tensor out({c_n, height, width});
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double top = (1 - tx[x].frac) * image.at(c, ty[y].lo, tx[x].lo) + tx[x].frac * image.at(c, ty[y].lo, tx[x].hi);
        const double bot = (1 - tx[x].frac) * image.at(c, ty[y].hi, tx[x].lo) + tx[x].frac * image.at(c, ty[y].hi, tx[x].hi);
        out.at(c, y, x) = (1 - ty[y].frac) * top + ty[y].frac * bot;
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& image, std::size_t channels, std::size_t target_height,
                       std::size_t target_width) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  Tensor raw({channels, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* px = image.pixels.data() + (y * image.width + x) * image.channels;
      for (std::size_t c = 0; c < channels; ++c) {
        double v;
        if (image.channels == channels) {
          v = pixel_to_signal(px[c]);
        } else if (image.channels == 1) {
          v = pixel_to_signal(px[0]);
        } else {
          v = (pixel_to_signal(px[0]) + pixel_to_signal(px[1]) + pixel_to_signal(px[2])) / 3.0;
        }
        raw.at(c, y, x) = v;
      }
    }
  }
  return bilinear_resize(raw, target_height, target_width);
}

Dataset load_images(const fs::path& dir, std::size_t channels, std::size_t target_size) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("'{}' is not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".png" || ext == ".PGM" || ext == ".PNG") files.push_back(entry.path());
  }
  if (files.empty()) throw IoError(fmt::format("no PGM/PNG images in '{}'", dir.string()));
  std::ranges::sort(files);

  Tensor examples = Tensor::batch_of(files.size(), {channels, target_size, target_size});
  for (std::size_t i = 0; i < files.size(); ++i) {
    examples.set_item(i, image_to_tensor(read_image(files[i]), channels, target_size, target_size));
  }
  return {std::move(examples), dir.string(), channels};
}

Image make_montage(const Tensor& batch, std::size_t grid_cols) {
  if (batch.rank() != 4 || batch.batch_size() == 0) throw ShapeError("montage needs a non-empty N x C x H x W batch");
  const std::size_t n = batch.batch_size();
  const std::size_t c_n = batch.extent(1);
  const std::size_t h = batch.extent(2);
  const std::size_t w = batch.extent(3);
  if (c_n != 1 && c_n != 3) throw ShapeError(fmt::format("montage needs 1 or 3 channels, got {}", c_n));
  const std::size_t cols = std::clamp<std::size_t>(grid_cols, 1, n);
  const std::size_t rows = (n + cols - 1) / cols;

  Image img;
  img.width = cols * w;
  img.height = rows * h;
  img.channels = c_n;
  img.pixels.assign(img.width * img.height * c_n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * h;
    const std::size_t ox = (i % cols) * w;
    const auto item = batch.item_values(i);
    for (std::size_t c = 0; c < c_n; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          img.pixels[((oy + y) * img.width + ox + x) * c_n + c] = signal_to_pixel(item[(c * h + y) * w + x]);
        }
      }
    }
  }
  return img;
}

void save_montage(const Tensor& batch, std::size_t grid_cols, const fs::path& path) {
  write_image(make_montage(batch, grid_cols), path);
}

}  // namespace coopnets
