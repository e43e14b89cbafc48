#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "coopnets/data_io.hpp"
#include "oracles.hpp"

using namespace coopnets;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("coopnets_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

double bilinear_oracle(const Tensor& img, std::size_t c, double sy, double sx) {
  const long H = long(img.extent(1)), W = long(img.extent(2));
  auto px = [&](long y, long x) {
    return img.at(c, std::size_t(std::clamp(y, 0L, H - 1)), std::size_t(std::clamp(x, 0L, W - 1)));
  };
  const long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
  const double fy = sy - double(y0), fx = sx - double(x0);
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) + fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace

TEST_CASE("pixel mapping") {
  CHECK(pixel_to_signal(0) == -1.0);
  CHECK(pixel_to_signal(255) == 1.0);
  CHECK(signal_to_pixel(0.0) == 127);
  for (int p = 0; p < 256; ++p) CHECK(signal_to_pixel(pixel_to_signal(std::uint8_t(p))) == p);
}

TEST_CASE("PGM decoding") {
  TempDir tmp;
  write_bytes(tmp.path / "black.pgm", std::string("P5\n1 1\n255\n") + char(0));
  const Image img = read_image(tmp.path / "black.pgm");
  CHECK(img.width == 1);
  CHECK(img.channels == 1);
  const Tensor t = image_to_tensor(img, 1, 1, 1);
  CHECK(t[0] == -1.0);

  write_bytes(tmp.path / "white.pgm", std::string("P5 1 1 255\n") + char(255));
  CHECK(image_to_tensor(read_image(tmp.path / "white.pgm"), 1, 1, 1)[0] == 1.0);

  write_bytes(tmp.path / "short.pgm", "P5\n4 4\n255\n\x01\x02");
  CHECK_THROWS_AS(read_image(tmp.path / "short.pgm"), IoError);
  write_bytes(tmp.path / "junk.pgm", "hello");
  CHECK_THROWS_AS(read_image(tmp.path / "junk.pgm"), IoError);
  CHECK_THROWS_AS(read_image(tmp.path / "missing.png"), IoError);
}

TEST_CASE("bilinear resize of a checkerboard") {
  Tensor board({1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) board.at(0, y, x) = double((x + y) % 2);
  }
  const Tensor small = bilinear_resize(board, 2, 2);
  REQUIRE(small.shape() == Shape{1, 2, 2});
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) {
      const double want = bilinear_oracle(board, 0, (double(y) + 0.5) * 2 - 0.5, (double(x) + 0.5) * 2 - 0.5);
      CHECK(std::abs(small.at(0, y, x) - want) <= 1e-12);
    }
  }
  const Tensor src = oracle::random_tensor({2, 5, 7}, 3);
  const Tensor up = bilinear_resize(src, 8, 3);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 3; ++x) {
        const double want = bilinear_oracle(src, c, (double(y) + 0.5) * 5 / 8 - 0.5, (double(x) + 0.5) * 7 / 3 - 0.5);
        CHECK(std::abs(up.at(c, y, x) - want) <= 1e-12);
      }
    }
  }
}

TEST_CASE("montages") {
  TempDir tmp;
  const Image mid = make_montage(Tensor::batch_of(1, {1, 3, 3}), 1);
  for (auto p : mid.pixels) CHECK(p == 127);

  const Image grid = make_montage(Tensor::batch_of(4, {3, 5, 6}), 2);
  CHECK(grid.width == 12);
  CHECK(grid.height == 10);
  CHECK(grid.channels == 3);

  Tensor batch = oracle::random_tensor({3, 1, 4, 4}, 4, 0.5);
  for (double& v : batch.values()) v = std::clamp(v, -1.0, 1.0);
  for (const char* name : {"m.png", "m.pgm"}) {
    save_montage(batch, 3, tmp.path / name);
    const Tensor back = image_to_tensor(read_image(tmp.path / name), 1, 4, 12);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
          CHECK(std::abs(back.at(0, y, i * 4 + x) - batch.item(i).at(0, y, x)) <= 2.0 / 255 + 1e-12);
        }
      }
    }
  }
  const Tensor rgb = oracle::random_tensor({2, 3, 4, 4}, 5, 0.5);
  save_montage(rgb, 2, tmp.path / "rgb.png");
  CHECK(read_image(tmp.path / "rgb.png").channels == 3);
  CHECK_THROWS(save_montage(rgb, 2, tmp.path / "rgb.pgm"));
}

TEST_CASE("image directories") {
  TempDir tmp;
  Image img{2, 2, 1, {0, 255, 255, 0}};
  write_image(img, tmp.path / "b.png");
  img.pixels = {255, 255, 255, 255};
  write_image(img, tmp.path / "a.pgm");
  write_bytes(tmp.path / "notes.txt", "not an image");
  const Dataset d = load_images(tmp.path, 1, 2);
  REQUIRE(d.size() == 2);
  CHECK(d.examples.item(0) == Tensor({1, 2, 2}, 1.0));
  CHECK(d.examples.item(1)[0] == -1.0);
  for (double v : d.examples.values()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(load_images(tmp.path / "nowhere", 1, 2), IoError);
}

TEST_CASE("synthetic datasets") {
  ToyParams mix;
  mix.components = {{-1, 0, 0.2}, {1, 0, 0.2}};
  CHECK(make_toy_dataset(ToyKind::gaussian_mixture_2d, mix, 50, 3).examples ==
        make_toy_dataset(ToyKind::gaussian_mixture_2d, mix, 50, 3).examples);
  CHECK_FALSE(make_toy_dataset(ToyKind::gaussian_mixture_2d, mix, 50, 3).examples ==
              make_toy_dataset(ToyKind::gaussian_mixture_2d, mix, 50, 4).examples);

  ToyParams origin;
  origin.components = {{0, 0, 0}};
  const Dataset o = make_toy_dataset(ToyKind::gaussian_mixture_2d, origin, 10, 1);
  CHECK(o.examples == Tensor::batch_of(10, {2, 1, 1}));

  // Sample covariance of Y = W X + eps is W W^T + sigma^2 I.
  constexpr std::size_t D = 4, d = 2, n = 10000;
  ToyParams lin;
  lin.loadings = random_loadings(D, d, 1.0, 5);
  lin.signal_shape = {D, 1, 1};
  lin.noise_std = 0.5;
  const Dataset y = make_toy_dataset(ToyKind::linear_factor, lin, n, 6);
  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < D; ++a) {
    for (std::size_t b = 0; b < D; ++b) {
      double want = a == b ? 0.25 : 0.0;
      for (std::size_t k = 0; k < d; ++k) want += lin.loadings[a * d + k] * lin.loadings[b * d + k];
      double ma = 0.0, mb = 0.0, c = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ma += y.examples.item_values(i)[a];
        mb += y.examples.item_values(i)[b];
      }
      ma /= n;
      mb /= n;
      for (std::size_t i = 0; i < n; ++i) {
        c += (y.examples.item_values(i)[a] - ma) * (y.examples.item_values(i)[b] - mb);
      }
      c /= n;
      num += (c - want) * (c - want);
      den += want * want;
    }
  }
  CHECK(std::sqrt(num / den) <= 0.1);

  ToyParams tex;
  tex.source_image = oracle::random_tensor({3, 10, 12}, 7, 0.3);
  tex.patch_size = 4;
  const Dataset patches = make_toy_dataset(ToyKind::texture_patch, tex, 5, 8);
  CHECK(patches.examples.shape() == Shape{5, 3, 4, 4});
  tex.patch_size = 11;
  CHECK_THROWS(make_toy_dataset(ToyKind::texture_patch, tex, 5, 8));
}

TEST_CASE("metrics csv") {
  TempDir tmp;
  const fs::path p = tmp.path / "m.csv";
  const IterationMetrics r1{0, 1.5, 0.25, 1e-3, -2.0, -3.0, -1.0};
  const IterationMetrics r2{1, 0.1, 1.0 / 3.0, 2e-300, 4.0, 5.0, 6.0};
  {
    MetricsCsvWriter w(p);
    w.write(r1);
  }
  {
    MetricsCsvWriter w(p, true);
    w.write(r2);
  }
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header == kMetricsHeader);
  const auto rows = read_metrics_csv(p);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == r1);
  CHECK(rows[1] == r2);
}

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.mode = TrainMode::coopnets;
  LayerSpec fc;
  fc.kind = LayerKind::fully_connected;
  fc.nonlinearity = Nonlinearity::identity;
  DescriptorNet d({1, 4, 4}, {{LayerKind::conv, 2, 3, 3, 1, 1, 1, Nonlinearity::relu}, fc}, 0.3);
  d.set_params(oracle::random_params(d.layers(), 1, 0.2));
  LayerSpec gfc = fc;
  gfc.out_channels = 2;
  gfc.kernel_height = gfc.kernel_width = 2;
  GeneratorNet g({3, 1, 1}, {gfc, {LayerKind::deconv, 1, 4, 4, 1, 1, 2, Nonlinearity::tanh}}, 0.1);
  g.set_params(oracle::random_params(g.layers(), 2, 0.2));
  c.descriptor = d;
  c.generator = g;
  c.config.iterations = 77;
  c.config.learning_rate_d = 0.1 / 3;
  c.config.lr_decay = LearningRateDecay::inverse_t;
  c.config.batch_size = kFullBatch;
  c.config.seed = 0xFFFFFFFFFFFFFFFFull;
  Engine e(5);
  e.discard(17);
  c.state.iteration = 12;
  c.state.rng_state = save_engine_state(e);
  c.state.chains.latents = oracle::random_tensor({2, 3, 1, 1}, 3);
  c.state.chains.drafts = oracle::random_tensor({2, 1, 4, 4}, 4);
  c.state.chains.revised = oracle::random_tensor({2, 1, 4, 4}, 5);
  return c;
}

}  // namespace

TEST_CASE("checkpoints") {
  TempDir tmp;
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, tmp.path / "c.ckpt");
  const Checkpoint back = load_checkpoint(tmp.path / "c.ckpt");
  CHECK(back == c);
  CHECK(encode_checkpoint(back) == encode_checkpoint(c));
  CHECK(load_engine_state(back.state.rng_state)() == load_engine_state(c.state.rng_state)());

  Checkpoint only_g = c;
  only_g.mode = TrainMode::generator;
  only_g.descriptor.reset();
  CHECK(decode_checkpoint(encode_checkpoint(only_g)) == only_g);

  const auto bytes = encode_checkpoint(c);
  for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(10), bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint({bytes.begin(), bytes.begin() + std::ptrdiff_t(cut)}), CheckpointTruncatedError);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointMagicError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointVersionError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointFormatError);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "none.ckpt"), IoError);
}
