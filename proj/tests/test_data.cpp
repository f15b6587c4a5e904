#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "physvid/binary_io.hpp"
#include "physvid/data.hpp"
#include "physvid/rng.hpp"
#include "support.hpp"

namespace physvid {
namespace {

namespace fs = std::filesystem;

const ModelConfig& toy() {
  static const ModelConfig m = preset("toy").model;
  return m;
}

// ---------------------------------------------------------------------------
// Clips

TEST(SynthClip, Deterministic) {
  const VideoClip a = synth_clip(7, ClipKind::kBounce);
  const VideoClip b = synth_clip(7, ClipKind::kBounce);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.prompt, b.prompt);
  EXPECT_NE(synth_clip(8, ClipKind::kBounce).frames, a.frames);
}

TEST(SynthClip, StaticFramesIdentical) {
  for (std::int64_t seed = 0; seed < 10; ++seed) {
    const VideoClip clip = synth_clip(seed, ClipKind::kStatic);
    const std::size_t frame = static_cast<std::size_t>(clip.frames.height) * clip.frames.width;
    for (int c = 0; c < 3; ++c)
      for (int f = 1; f < clip.frames.frames; ++f)
        for (std::size_t i = 0; i < frame; ++i) {
          const std::size_t base = static_cast<std::size_t>(c) * clip.frames.frames * frame;
          ASSERT_EQ(clip.frames.data[base + f * frame + i], clip.frames.data[base + i]);
        }
  }
}

TEST(SynthClip, ValuesInRangeAndPromptNamesKind) {
  for (ClipKind kind : {ClipKind::kBounce, ClipKind::kSlide, ClipKind::kCollide, ClipKind::kStatic})
    for (std::int64_t seed = 0; seed < 20; ++seed) {
      const VideoClip clip = synth_clip(seed, kind);
      for (double v : clip.frames.data) {
        ASSERT_GE(v, -1.0);
        ASSERT_LE(v, 1.0);
      }
      EXPECT_EQ(clip.frames.frames, 8);
      EXPECT_GE(clip.scene.discs.size(), 1u);
      EXPECT_LE(clip.scene.discs.size(), 2u);
      const char* verb = kind == ClipKind::kBounce    ? "bounces"
                         : kind == ClipKind::kSlide   ? "slides"
                         : kind == ClipKind::kCollide ? "collide"
                                                      : "motionless";
      EXPECT_NE(clip.prompt.find(verb), std::string::npos) << clip.prompt;
    }
}

TEST(SynthClip, KindNames) {
  for (ClipKind kind : {ClipKind::kBounce, ClipKind::kSlide, ClipKind::kCollide, ClipKind::kStatic})
    EXPECT_EQ(parse_clip_kind(to_string(kind)), kind);
  EXPECT_THROW(parse_clip_kind("spin"), std::invalid_argument);
  EXPECT_EQ(kind_for_seed(0), ClipKind::kBounce);
  EXPECT_EQ(kind_for_seed(7), ClipKind::kStatic);
  EXPECT_EQ(kind_for_seed(-1), ClipKind::kStatic);
}

// Coverage-weighted centroid of the brightest channel of the disc colour.
std::array<double, 2> centroid(const VideoClip& clip, int f) {
  const Disc& d = clip.scene.discs.front();
  int channel = 0;
  for (int c = 1; c < 3; ++c)
    if (d.color[c] > d.color[channel]) channel = c;
  double mass = 0, mx = 0, my = 0;
  for (int y = 0; y < clip.frames.height; ++y)
    for (int x = 0; x < clip.frames.width; ++x) {
      const double coverage = (clip.frames.at(channel, f, y, x) + 1.0) / (d.color[channel] + 1.0);
      mass += coverage;
      mx += coverage * (x + 0.5);
      my += coverage * (y + 0.5);
    }
  return {mx / mass, my / mass};
}

// Before the first wall contact the tracked centre follows the free-fall parabola.
TEST(SynthClip, BounceFollowsParabolaBetweenBounces) {
  int frames_checked = 0;
  for (std::int64_t seed = 0; seed < 40; ++seed) {
    const VideoClip clip = synth_clip(seed, ClipKind::kBounce);
    const Disc& d = clip.scene.discs.front();
    const double g = clip.scene.gravity;
    const double w = clip.frames.width, h = clip.frames.height;
    for (int f = 0; f < clip.frames.frames; ++f) {
      bool free_flight = true;
      for (int s = 0; s <= f * 64 && free_flight; ++s) {
        const double t = s / 64.0;
        const double x = d.x + d.vx * t, y = d.y + d.vy * t + 0.5 * g * t * t;
        free_flight = x >= d.radius && x <= w - d.radius && y >= d.radius && y <= h - d.radius;
      }
      if (!free_flight) break;
      const double expected_x = d.x + d.vx * f;
      const double expected_y = d.y + d.vy * f + 0.5 * g * f * f;
      const auto c = centroid(clip, f);
      EXPECT_NEAR(c[0], expected_x, 0.5) << "seed " << seed << " frame " << f;
      EXPECT_NEAR(c[1], expected_y, 0.5) << "seed " << seed << " frame " << f;
      ++frames_checked;
    }
  }
  EXPECT_GT(frames_checked, 80);
}

TEST(SynthClip, CentersStayInsideWalls) {
  for (ClipKind kind : {ClipKind::kBounce, ClipKind::kSlide, ClipKind::kCollide})
    for (std::int64_t seed = 0; seed < 30; ++seed) {
      const VideoClip clip = synth_clip(seed, kind);
      ASSERT_EQ(clip.scene.centers.size(), 8u);
      for (const auto& frame : clip.scene.centers) {
        ASSERT_EQ(frame.size(), clip.scene.discs.size());
        for (std::size_t i = 0; i < frame.size(); ++i) {
          const double r = clip.scene.discs[i].radius;
          EXPECT_GE(frame[i][0], r - 1e-9);
          EXPECT_LE(frame[i][0], 16 - r + 1e-9);
          EXPECT_GE(frame[i][1], r - 1e-9);
          EXPECT_LE(frame[i][1], 16 - r + 1e-9);
        }
      }
    }
}

// ---------------------------------------------------------------------------
// Codec

TEST(ToyCodec, RoundTripAndNorm) {
  for (std::int64_t seed = 0; seed < 20; ++seed) {
    PixelVideo video = PixelVideo::filled(3, 8, 16, 16, 0.0);
    video.data = testing::random_values(video.data.size(), 10 + seed, 0.5);
    const LatentVideo z = toy_vae_encode(video, toy());
    EXPECT_TRUE(z.matches(toy()));
    const PixelVideo back = toy_vae_decode(z, toy());
    double err = 0, nv = 0, nz = 0;
    for (std::size_t i = 0; i < video.data.size(); ++i) {
      err = std::max(err, std::abs(back.data[i] - video.data[i]));
      nv += video.data[i] * video.data[i];
    }
    for (double v : z.data) nz += v * v;
    EXPECT_LT(err, 1e-5);
    EXPECT_NEAR(std::sqrt(nz), std::sqrt(nv), 1e-5 * std::sqrt(nv));
  }
}

TEST(ToyCodec, ZeroMapsToZero) {
  const LatentVideo z = toy_vae_encode(PixelVideo::filled(3, 8, 16, 16, 0.0), toy());
  for (double v : z.data) EXPECT_EQ(v, 0.0);
}

TEST(ToyCodec, RejectsIndivisibleFrames) {
  EXPECT_THROW(toy_vae_encode(PixelVideo::filled(3, 8, 15, 16, 0.0), toy()), std::invalid_argument);
  EXPECT_THROW(toy_vae_encode(PixelVideo::filled(1, 8, 16, 16, 0.0), toy()), std::invalid_argument);
}

TEST(ToyCodec, DecodeIsPerFrame) {
  // A latent constant over frames decodes to identical frames.
  LatentVideo z = LatentVideo::zeros(toy());
  const auto values = testing::random_values(12 * 8 * 8, 3);
  for (int c = 0; c < 12; ++c)
    for (int f = 0; f < 8; ++f)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) z.at(c, f, y, x) = values[(c * 8 + y) * 8 + x];
  const PixelVideo video = toy_vae_decode(z, toy());
  for (int f = 1; f < 8; ++f)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ASSERT_EQ(video.at(c, f, y, x), video.at(c, 0, y, x));
}

// ---------------------------------------------------------------------------
// Text

TEST(TextEmbed, DeterministicUnitRowsZeroPadding) {
  const TextEmbedding a = toy_text_embed("a red ball falls", toy());
  EXPECT_EQ(a, toy_text_embed("a red ball falls", toy()));
  EXPECT_EQ(a.length, 16);
  EXPECT_EQ(a.width, 64);
  for (int r = 0; r < 16; ++r) {
    double n = 0;
    for (double v : a.row(r)) n += v * v;
    if (r < 4)
      EXPECT_NEAR(n, 1.0, 1e-12);
    else
      EXPECT_EQ(n, 0.0);
  }
}

TEST(TextEmbed, EmptyPromptIsZero) {
  for (double v : toy_text_embed("", toy()).data) EXPECT_EQ(v, 0.0);
  for (double v : toy_text_embed("   ", toy()).data) EXPECT_EQ(v, 0.0);
}

TEST(TextEmbed, OneWordChangesOneRow) {
  const TextEmbedding a = toy_text_embed("a red ball falls fast", toy());
  const TextEmbedding b = toy_text_embed("a blue ball falls fast", toy());
  for (int r = 0; r < 16; ++r) {
    const bool same = std::equal(a.row(r).begin(), a.row(r).end(), b.row(r).begin());
    EXPECT_EQ(same, r != 1) << "row " << r;
  }
}

TEST(TextEmbed, TruncatesToLength) {
  std::string long_prompt;
  for (int i = 0; i < 40; ++i) long_prompt += "w" + std::to_string(i) + " ";
  const TextEmbedding e = toy_text_embed(long_prompt, toy());
  for (int r = 0; r < 16; ++r) {
    double n = 0;
    for (double v : e.row(r)) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Physics features

TEST(PhysicsExtract, ShapeAndFinite) {
  const PhysicsTokens p = toy_physics_extract(synth_clip(3, ClipKind::kCollide).frames, toy());
  EXPECT_EQ(p.length, 64);
  EXPECT_EQ(p.width, 32);
  for (double v : p.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(PhysicsExtract, StaticClipZeroesTemporalFeatures) {
  for (std::int64_t seed = 0; seed < 8; ++seed) {
    const PhysicsTokens p = toy_physics_extract(synth_clip(seed, ClipKind::kStatic).frames, toy());
    int checked = 0;
    for (int n = 0; n < p.length; ++n)
      for (int i = 0; i < p.width; ++i)
        if (is_temporal_feature(i)) {
          ASSERT_EQ(p.row(n)[i], 0.0) << "cell " << n << " feature " << i;
          ++checked;
        }
    EXPECT_EQ(checked, 64 * 12);
  }
}

TEST(PhysicsExtract, TimeReversalNegatesSignedFeatures) {
  for (ClipKind kind : {ClipKind::kBounce, ClipKind::kSlide, ClipKind::kCollide}) {
    const VideoClip clip = synth_clip(5, kind);
    const PhysicsTokens fwd = toy_physics_extract(clip.frames, toy());
    const PhysicsTokens bwd = toy_physics_extract(clip.frames.reversed(), toy());
    // Cell (t, y, x) of the reversed clip covers the same frame pair as (T - 1 - t, y, x).
    const int per_t = 16, cells_t = 4;
    double largest = 0;
    for (int t = 0; t < cells_t; ++t)
      for (int s = 0; s < per_t; ++s)
        for (int i = 0; i < 32; ++i) {
          if (!is_signed_temporal_feature(i)) continue;
          const double a = fwd.row(t * per_t + s)[i];
          const double b = bwd.row((cells_t - 1 - t) * per_t + s)[i];
          EXPECT_NEAR(b, -a, 1e-12) << to_string(kind) << " cell " << t << "," << s << " feature " << i;
          largest = std::max(largest, std::abs(a));
        }
    EXPECT_GT(largest, 0.1) << "no motion signal in " << to_string(kind);
  }
}

TEST(PhysicsExtract, RejectsBadGeometry) {
  EXPECT_THROW(toy_physics_extract(PixelVideo::filled(3, 1, 16, 16, 0.0), toy()), std::invalid_argument);
  ModelConfig odd = toy();
  odd.phys_tokens = 60;
  EXPECT_THROW(toy_physics_extract(PixelVideo::filled(3, 8, 16, 16, 0.0), odd), std::invalid_argument);
}

TEST(PhysicsExtract, StandardizationConstantsMatchCalibration) {
  const FeatureStandardization fresh = calibrate_physics_standardization(256, toy());
  const FeatureStandardization& baked = physics_standardization();
  for (int i = 0; i < kPhysicsFeatureCount; ++i) {
    EXPECT_EQ(baked.mean[i], fresh.mean[i]) << "feature " << i;
    EXPECT_EQ(baked.stddev[i], fresh.stddev[i]) << "feature " << i;
    if (is_temporal_feature(i)) EXPECT_EQ(baked.mean[i], 0.0);
    EXPECT_GT(baked.stddev[i], 0.0);
  }
}

// ---------------------------------------------------------------------------
// Samples and streams

TEST(Samples, ShapesIdsAndFloatRounding) {
  const TrainingSample s = make_sample(6, toy());
  EXPECT_EQ(s.sample_id, "clip-00000006-collide");
  EXPECT_TRUE(s.z0.matches(toy()));
  EXPECT_EQ(s.c_text.length, 16);
  EXPECT_EQ(s.p_gt.length, 64);
  for (double v : s.z0.data) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  for (double v : s.p_gt.data) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(Samples, ErrorsCarrySampleId) {
  ModelConfig bad = toy();
  bad.phys_tokens = 60;
  try {
    make_sample(12, bad);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("clip-00000012-bounce"), std::string::npos) << e.what();
  }
}

TEST(Samples, StreamIsRepeatableAndLazy) {
  SampleStream a(seed_range(0, 6), toy());
  SampleStream b(seed_list({0, 1, 2, 3, 4, 5}), toy());
  std::set<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    const auto x = a.next(), y = b.next();
    ASSERT_TRUE(x && y);
    EXPECT_EQ(*x, *y);
    EXPECT_TRUE(ids.insert(x->sample_id).second);
  }
  EXPECT_FALSE(a.next());
  EXPECT_FALSE(b.next());
  SampleStream empty(seed_list({}), toy());
  EXPECT_FALSE(empty.next());
}

// ---------------------------------------------------------------------------
// Shards

class Shard : public ::testing::Test {
 protected:
  testing::TempDir dir{"shard"};
  fs::path path = dir.path() / "train.pvgc";
  std::vector<TrainingSample> samples;

  void SetUp() override {
    for (std::int64_t seed = 0; seed < 10; ++seed) samples.push_back(make_sample(seed, toy()));
    ASSERT_EQ(write_shard(samples, path, toy()), 10u);
  }

  void patch(std::streamoff offset, const std::string& bytes) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(offset);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
};

TEST_F(Shard, RoundTripBitwise) {
  const auto back = read_shard(path, toy());
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i], samples[i]) << i;
  ShardReader reader(path, toy());
  EXPECT_EQ(reader.sample_count(), 10u);
}

TEST_F(Shard, StreamWriterMatchesSpanWriter) {
  SampleStream stream(seed_range(0, 10), toy());
  const fs::path other = dir.path() / "stream.pvgc";
  EXPECT_EQ(write_shard(stream, other, toy()), 10u);
  std::ifstream a(path, std::ios::binary), b(other, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(bytes_a, bytes_b);
}

TEST_F(Shard, CorruptMagic) {
  patch(0, "X");
  try {
    read_shard(path, toy());
    FAIL() << "expected FormatError";
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST_F(Shard, VersionMismatch) {
  patch(4, std::string("\x07\x00\x00\x00", 4));
  try {
    read_shard(path, toy());
    FAIL() << "expected FormatError";
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST_F(Shard, FingerprintMismatchUnderPaperConfig) {
  try {
    read_shard(path, preset("paper").model);
    FAIL() << "expected FormatError";
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("fingerprint"), std::string::npos);
  }
}

TEST_F(Shard, TruncatedFile) {
  const auto size = fs::file_size(path);
  for (auto cut : {size - 1, size / 2, std::uintmax_t{10}}) {
    fs::resize_file(path, cut);
    EXPECT_THROW(read_shard(path, toy()), io::TruncatedError) << "cut at " << cut;
  }
}

TEST_F(Shard, WriterRejectsForeignShapes) {
  ShardWriter writer(dir.path() / "bad.pvgc", toy());
  TrainingSample s = samples.front();
  s.p_gt = PhysicsTokens::zeros(8, 32);
  EXPECT_THROW(writer.append(s), std::invalid_argument);
  EXPECT_EQ(writer.close(), 0u);
}

TEST(ShardFormat, EmptyShardAndMissingFile) {
  testing::TempDir dir("shard-empty");
  EXPECT_EQ(write_shard(std::span<const TrainingSample>{}, dir.path() / "e.pvgc", toy()), 0u);
  EXPECT_TRUE(read_shard(dir.path() / "e.pvgc", toy()).empty());
  EXPECT_THROW(read_shard(dir.path() / "missing.pvgc", toy()), std::runtime_error);
}

}  // namespace
}  // namespace physvid
