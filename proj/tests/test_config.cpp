#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "physvid/config.hpp"
#include "support.hpp"

namespace physvid {
namespace {

TEST(Presets, PaperDimensions) {
  const Config c = preset("paper");
  EXPECT_EQ(c.model.latent_channels, 4);
  EXPECT_EQ(c.model.latent_frames, 16);
  EXPECT_EQ(c.model.latent_height, 32);
  EXPECT_EQ(c.model.latent_width, 32);
  EXPECT_EQ(c.model.text_len, 226);
  EXPECT_EQ(c.model.text_dim, 4096);
  EXPECT_EQ(c.model.phys_tokens, 2048);
  EXPECT_EQ(c.model.phys_dim, 1408);
  EXPECT_EQ(c.model.hidden_dim, 512);
  EXPECT_EQ(c.model.predictor_layers, 4);
  EXPECT_EQ(c.model.vae_downsample, 8);
  EXPECT_EQ(c.diffusion.num_timesteps, 1000);
  EXPECT_DOUBLE_EQ(c.train.lambda_phys, 0.1);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-5);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 0.01);
  EXPECT_NO_THROW(validate(c));
  EXPECT_TRUE(validate_shapes(c.model).empty());
}

TEST(Presets, ToyDimensions) {
  const Config c = preset("toy");
  EXPECT_EQ(c.model.latent_channels, 12);
  EXPECT_EQ(c.model.latent_frames, 8);
  EXPECT_EQ(c.model.latent_height, 8);
  EXPECT_EQ(c.model.latent_width, 8);
  EXPECT_EQ(c.model.text_len, 16);
  EXPECT_EQ(c.model.text_dim, 64);
  EXPECT_EQ(c.model.phys_tokens, 64);
  EXPECT_EQ(c.model.phys_dim, 32);
  EXPECT_EQ(c.model.hidden_dim, 64);
  EXPECT_EQ(c.diffusion.num_timesteps, 50);
  EXPECT_DOUBLE_EQ(c.diffusion.beta_start, 1e-4);
  EXPECT_DOUBLE_EQ(c.diffusion.beta_end, 2e-2);
  EXPECT_TRUE(validate_shapes(c.model).empty());
}

TEST(Presets, UnknownNameIsAnError) { EXPECT_THROW(preset("huge"), ConfigError); }

TEST(Validate, ZeroBetaStartNamesTheField) {
  try {
    parse_config(R"({"preset": "toy", "diffusion": {"beta_start": 0}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "diffusion.beta_start");
    EXPECT_NE(std::string(e.what()).find("beta_start"), std::string::npos);
  }
}

TEST(Validate, HardInvariants) {
  auto expect_field = [](Config c, const std::string& field) {
    try {
      validate(c);
      ADD_FAILURE() << "no error for " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  Config c = preset("toy");
  c.diffusion.beta_end = 1.0;
  expect_field(c, "diffusion.beta_end");
  c = preset("toy");
  c.diffusion.beta_start = 0.03;  // above beta_end
  expect_field(c, "diffusion.beta_end");
  c = preset("toy");
  c.train.lambda_phys = -0.1;
  expect_field(c, "train.lambda_phys");
  c = preset("toy");
  c.train.learning_rate = 0;
  expect_field(c, "train.learning_rate");
  c = preset("toy");
  c.model.phys_tokens = 0;
  expect_field(c, "model.phys_tokens");
}

TEST(ValidateShapes, OddFramesWarn) {
  ModelConfig m = preset("toy").model;
  m.latent_frames = 7;
  const auto warnings = validate_shapes(m);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings.front().find("latent_frames"), std::string::npos);
}

TEST(ValidateShapes, HeadDivisibilityWarns) {
  ModelConfig m = preset("toy").model;
  m.hidden_dim = 65;
  m.predictor_heads = 8;
  bool found = false;
  for (const auto& w : validate_shapes(m)) found = found || w.find("divis") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(ParseConfig, UnknownKeysAreRejectedByName) {
  try {
    parse_config(R"({"model": {"hidden_dims": 64}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.hidden_dims");
  }
  EXPECT_THROW(parse_config(R"({"trainer": {}})"), ConfigError);
}

TEST(ParseConfig, MalformedAndMissing) {
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/physvid.json"), ConfigError);
}

TEST(ParseConfig, AbsentKeysFallBackToPreset) {
  const Config c = parse_config(R"({"preset": "paper", "train": {"max_steps": 7}})");
  Config expected = preset("paper");
  expected.train.max_steps = 7;
  EXPECT_EQ(c, expected);
  EXPECT_EQ(parse_config("{}"), preset("toy"));
}

// Round trip over randomly perturbed but valid configs.
TEST(ConfigProperty, SaveLoadRoundTrip) {
  testing::TempDir dir("config");
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> small(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Config c = preset(trial % 2 ? "toy" : "paper");
    c.model.latent_frames = 2 * small(gen);
    c.model.hidden_dim = 8 * small(gen);
    c.model.predictor_heads = 1 << (small(gen) % 3);  // 1, 2 or 4 all divide 8k
    c.model.gen_heads = 1 << (small(gen) % 3);
    c.diffusion.num_timesteps = small(gen) * 10;
    c.diffusion.beta_start = 1e-4 + 1e-3 * unit(gen);
    c.diffusion.beta_end = c.diffusion.beta_start + 0.05 * unit(gen);
    c.train.lambda_phys = unit(gen);
    c.train.learning_rate = 1e-6 + unit(gen) * 1e-2;
    c.train.seed = static_cast<std::int64_t>(gen() >> 2);
    ASSERT_NO_THROW(validate(c));
    const auto path = dir.path() / ("c" + std::to_string(trial) + ".json");
    save_config(c, path);
    EXPECT_EQ(load_config(path), c) << "trial " << trial;
  }
}

TEST(Fingerprint, TracksModelShapesOnly) {
  Config a = preset("toy");
  Config b = a;
  b.train.learning_rate = 0.5;
  b.diffusion.num_timesteps = 10;
  EXPECT_EQ(fingerprint(a.model), fingerprint(b.model));
  b.model.phys_dim = 16;
  EXPECT_NE(fingerprint(a.model), fingerprint(b.model));
  EXPECT_NE(fingerprint(preset("toy").model), fingerprint(preset("paper").model));
  EXPECT_EQ(fingerprint_hex(a.model).size(), 16u);
}

}  // namespace
}  // namespace physvid
