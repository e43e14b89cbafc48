#include <doctest.h>

#include "coopnets/config.hpp"

using namespace coopnets;

namespace {

const char* kToy = R"(
# a comment
[experiment]
name = tiny

[dataset]
kind = gaussian_mixture_2d
component = -1 0 0.2   # trailing comment
component = 1 0 0.2
n = 40
seed = 7

[descriptor]
s = 0.5
layer = conv out=4 kernel=1 act=relu
layer = fc out=1 act=identity

[generator]
latent = 2
sigma = 0.1
layer = fc out=4
layer = fc out=2 act=identity

[training]
iterations = 3
chains = 4
batch_size = full
seed = 1
)";

}  // namespace

TEST_CASE("parse a complete config") {
  const RunConfig cfg = parse_run_config(kToy, "tiny.cfg");
  CHECK(cfg.name == "tiny");
  CHECK(cfg.dataset.components.size() == 2);
  CHECK(cfg.dataset.components[1].x == 1.0);
  CHECK(cfg.dataset.seed == 7u);
  REQUIRE(cfg.descriptor);
  CHECK(cfg.descriptor->reference_std == 0.5);
  CHECK(cfg.descriptor->layers.size() == 2);
  REQUIRE(cfg.generator);
  CHECK(cfg.generator->latent_shape == Shape{2, 1, 1});
  CHECK(cfg.generator->layers[0].nonlinearity == Nonlinearity::relu);
  CHECK(cfg.training.batch_size == kFullBatch);
  CHECK(signal_shape(cfg) == Shape{2, 1, 1});
  CHECK_NOTHROW(validate_run_config(cfg, TrainMode::coopnets));
  CHECK(build_dataset(cfg).size() == 40);
  CHECK(build_descriptor(cfg) == build_descriptor(cfg));
}

TEST_CASE("overrides") {
  const RunConfig cfg = parse_run_config(kToy, "tiny.cfg", {"training.iterations=9", "descriptor.layer=fc out=1"});
  CHECK(cfg.training.iterations == 9);
  CHECK(cfg.descriptor->layers.size() == 3);
  CHECK_THROWS_AS(parse_run_config(kToy, "tiny.cfg", {"iterations=9"}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(kToy, "tiny.cfg", {"training.bogus=1"}), ConfigError);
}

TEST_CASE("errors name the line and field") {
  auto error_of = [](const std::string& text) -> std::string {
    try {
      parse_run_config(text, "bad.cfg");
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(error_of("[training]\nseed = 1\nlr_d = fast\n") .find("bad.cfg:3: training.lr_d") == 0);
  CHECK(error_of("[nonsense]\n").find("bad.cfg:1") == 0);
  CHECK(error_of("[training]\nseed = 1\nseed = 2\n").find("bad.cfg:3") == 0);
  CHECK(error_of("[dataset]\nkind = images\n").find("training.seed") != std::string::npos);
  CHECK(error_of("[training]\nseed = 1\n").find("dataset.kind") != std::string::npos);
  CHECK(error_of("[dataset]\nkind = images\n[descriptor]\nlayer = conv out=0 kernel=3\n[training]\nseed=1\n") != "");
  CHECK(error_of("key = value\n") != "");
}

TEST_CASE("validation") {
  RunConfig cfg = parse_run_config(kToy, "tiny.cfg");
  cfg.generator->layers.back().out_channels = 3;
  CHECK_THROWS_AS(validate_run_config(cfg, TrainMode::coopnets), ConfigError);
  CHECK_THROWS_AS(validate_run_config(cfg, TrainMode::descriptor), ConfigError);  // every declared net must chain

  cfg = parse_run_config(kToy, "tiny.cfg");
  CHECK_THROWS_AS(validate_run_config(cfg, TrainMode::generator), ConfigError);  // no inference steps

  cfg = parse_run_config(kToy, "tiny.cfg", {"training.chains=0"});
  CHECK_THROWS_AS(validate_run_config(cfg, TrainMode::coopnets), ConfigError);

  cfg = parse_run_config(kToy, "tiny.cfg");
  cfg.descriptor.reset();
  CHECK_THROWS_AS(validate_run_config(cfg, TrainMode::coopnets), ConfigError);
}

TEST_CASE("layer specs") {
  const LayerSpec c = parse_layer_spec("conv out=100 kernel=15 stride=3 pad=7 act=relu");
  CHECK(c.kind == LayerKind::conv);
  CHECK(c.out_channels == 100);
  CHECK(c.kernel_height == 15);
  CHECK(c.stride == 3);
  CHECK(c.padding == 7);
  const LayerSpec d = parse_layer_spec("deconv out=3 kernel=5 factor=2 pad=2 act=tanh");
  CHECK(d.upsample_factor == 2);
  CHECK(d.nonlinearity == Nonlinearity::tanh);
  CHECK(parse_layer_spec("conv out=2 kernel=3x5").kernel_width == 5);
  for (const LayerSpec& s : {c, d, parse_layer_spec("fc out=512 size=4 act=identity")}) {
    CHECK(parse_layer_spec(format_layer_spec(s)) == s);
  }
  CHECK_THROWS(parse_layer_spec("pool out=2"));
  CHECK_THROWS(parse_layer_spec("conv out=2 kernel=3 wat=1"));
  CHECK_THROWS(parse_layer_spec("conv out=x kernel=3"));
}

TEST_CASE("bundled presets resolve") {
  CHECK(bundled_presets().size() == 6);
  for (const auto& p : bundled_presets()) {
    CAPTURE(p.name);
    const RunConfig cfg = load_run_config(std::string(p.name));
    validate_run_config(cfg, cfg.mode);
    CHECK(load_run_config("preset:" + std::string(p.name)).name == cfg.name);
  }
  const RunConfig tex = load_run_config("texture.cfg");
  CHECK(signal_shape(tex) == Shape{3, 224, 224});
  CHECK(tex.descriptor->layers[0].kernel_height == 15);
  CHECK(tex.training.learning_rate_d == 0.01);
  CHECK(GeneratorNet(tex.generator->latent_shape, tex.generator->layers, 0.3).output_shape() == Shape{3, 224, 224});
  const RunConfig obj = load_run_config("object");
  CHECK(GeneratorNet(obj.generator->latent_shape, obj.generator->layers, 0.3).output_shape() == Shape{3, 64, 64});
  CHECK_THROWS_AS(load_run_config("no_such_preset"), ConfigError);
}
