#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "physvid/metrics.hpp"
#include "physvid/video_io.hpp"
#include "support.hpp"

namespace physvid {
namespace {

namespace fs = std::filesystem;

double texture(double x, double y) {
  return 0.45 * std::sin(0.41 * x + 0.23 * y) * std::cos(0.27 * x - 0.19 * y) + 0.2 * std::sin(0.13 * y - 0.07 * x);
}

// Frame f shows the texture shifted right by offsets[f] pixels.
PixelVideo moving_texture(const std::vector<double>& offsets, int size = 32, double gain = 1.0, double bias = 0.0) {
  PixelVideo v = PixelVideo::filled(3, static_cast<int>(offsets.size()), size, size, 0.0);
  for (int f = 0; f < v.frames; ++f)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < 3; ++c) v.at(c, f, y, x) = gain * texture(x - offsets[f], y) + bias;
  return v;
}

PixelVideo noise_video(int frames, std::uint64_t seed) {
  PixelVideo v = PixelVideo::filled(3, frames, 32, 32, 0.0);
  v.data = testing::random_values(v.data.size(), seed, 0.4);
  return v;
}

PixelVideo concat_frames(const PixelVideo& a, int fa, const PixelVideo& b, int fb) {
  PixelVideo out = PixelVideo::filled(3, 2, a.height, a.width, 0.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        out.at(c, 0, y, x) = a.at(c, fa, y, x);
        out.at(c, 1, y, x) = b.at(c, fb, y, x);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Flow

TEST(Flow, IdenticalFramesGiveNoFlow) {
  const PixelVideo v = moving_texture({0, 0});
  const FlowField f = estimate_flow(frame_gray(v, 0), frame_gray(v, 1));
  EXPECT_LT(f.mean_magnitude(), 1e-9);
}

TEST(Flow, OnePixelShiftRecovered) {
  const PixelVideo v = moving_texture({0, 1});
  const FlowField f = estimate_flow(frame_gray(v, 0), frame_gray(v, 1));
  EXPECT_GE(f.mean_u(), 0.7);
  EXPECT_LE(f.mean_u(), 1.3);
  EXPECT_LT(std::abs(f.mean_v()), 0.2);
  const FlowField back = estimate_flow(frame_gray(v, 1), frame_gray(v, 0));
  EXPECT_LE(back.mean_u(), -0.7);
}

TEST(Flow, BrightnessChangeIsNotMotion) {
  const PixelVideo shifted = moving_texture({0, 1});
  const PixelVideo a = moving_texture({0}), b = moving_texture({0}, 32, 1.3, 0.1);
  const double motion = estimate_flow(frame_gray(shifted, 0), frame_gray(shifted, 1)).mean_magnitude();
  const double brightness = estimate_flow(frame_gray(a, 0), frame_gray(b, 0)).mean_magnitude();
  EXPECT_LT(brightness * 5, motion);
}

TEST(FlowConsistency, StaticClip) {
  const FlowStats s = flow_consistency(moving_texture(std::vector<double>(6, 0.0)));
  ASSERT_EQ(s.per_pair.size(), 5u);
  for (double m : s.per_pair) EXPECT_LT(m, 1e-9);
  EXPECT_LT(s.temporal_std, 1e-9);
}

TEST(FlowConsistency, UniformMotionSteadierThanJitter) {
  const FlowStats uniform = flow_consistency(moving_texture({0, 1, 2, 3, 4, 5}));
  const FlowStats jitter = flow_consistency(moving_texture({0, 0, 2, 2, 4, 4}));
  EXPECT_GT(uniform.mean_magnitude, 0.5);
  EXPECT_LT(uniform.temporal_std, 0.1 * uniform.mean_magnitude);
  EXPECT_GT(jitter.temporal_std, 5 * uniform.temporal_std);
}

TEST(FlowConsistency, PopulationStdOfSeries) {
  const FlowStats s = flow_consistency(moving_texture({0, 0, 2, 2, 4, 4}));
  double mean = 0, var = 0;
  for (double m : s.per_pair) mean += m / s.per_pair.size();
  for (double m : s.per_pair) var += (m - mean) * (m - mean) / s.per_pair.size();
  EXPECT_NEAR(s.mean_magnitude, mean, 1e-12);
  EXPECT_NEAR(s.temporal_std, std::sqrt(var), 1e-12);
}

// ---------------------------------------------------------------------------
// Embedding consistency

TEST(EmbedConsistency, IdenticalFramesScoreOne) {
  const EmbedStats s = embed_consistency(moving_texture({0, 0, 0}));
  ASSERT_EQ(s.per_pair.size(), 2u);
  EXPECT_NEAR(s.mean, 1.0, 1e-12);
}

TEST(EmbedConsistency, NegatedFrameWithLinearEmbedder) {
  const FrameEmbedder linear = [](const PixelVideo& v, int f) { return frame_gray(v, f).data; };
  PixelVideo v = moving_texture({0, 0});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) v.at(c, 1, y, x) = -v.at(c, 0, y, x);
  EXPECT_NEAR(embed_consistency(v, linear).mean, -1.0, 1e-12);
}

TEST(EmbedConsistency, TranslationScoresAboveNoise) {
  const PixelVideo moving = moving_texture({0, 1});
  const PixelVideo noisy = concat_frames(moving, 0, noise_video(1, 3), 0);
  EXPECT_GT(embed_consistency(moving).mean, embed_consistency(noisy).mean);
}

TEST(EmbedConsistency, ZeroEmbeddingNamesTheFrame) {
  const FrameEmbedder dead_third = [](const PixelVideo&, int f) {
    return f == 2 ? std::vector<double>(4, 0.0) : std::vector<double>{1, 2, 3, 4};
  };
  try {
    embed_consistency(moving_texture({0, 0, 0, 0}), dead_third);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("frame 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(embed_consistency(moving_texture({0})), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// T-LPIPS

TEST(TLpips, IdenticalFramesScoreZero) {
  const TlpipsStats s = t_lpips(moving_texture({0, 0, 0}));
  EXPECT_EQ(s.mean, 0.0);
}

TEST(TLpips, SymmetricUnderReversal) {
  const PixelVideo v = moving_texture({0, 1, 3, 4});
  EXPECT_NEAR(t_lpips(v).mean, t_lpips(v.reversed()).mean, 1e-12);
  const auto f = builtin_feature_extractor();
  EXPECT_EQ(feature_distance(f(v, 0), f(v, 2)), feature_distance(f(v, 2), f(v, 0)));
}

TEST(TLpips, FlickerScoresAboveSmoothMotion) {
  const TlpipsStats smooth = t_lpips(moving_texture({0, 0.5, 1, 1.5, 2, 2.5}));
  const TlpipsStats flicker = t_lpips(moving_texture({0, 3, 0, 3, 0, 3}));
  EXPECT_GT(flicker.mean, smooth.mean);
}

TEST(TLpips, FeatureDistanceErrors) {
  EXPECT_THROW(feature_distance({{1.0}}, {{1.0}, {2.0}}), std::invalid_argument);
  EXPECT_THROW(feature_distance({{1.0, 2.0}}, {{1.0}}), std::invalid_argument);
}

// Adding a constant to every pixel moves no edges and produces no flow.
TEST(MetricProperty, ConstantOffsetInvariance) {
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<double> offsets{0};
    for (int f = 1; f < 5; ++f) offsets.push_back(offsets.back() + 0.3 * trial + 0.25 * (f % 2));
    const PixelVideo v = moving_texture(offsets);
    const PixelVideo lifted = moving_texture(offsets, 32, 1.0, 0.1);
    EXPECT_NEAR(flow_consistency(lifted).mean_magnitude, flow_consistency(v).mean_magnitude, 1e-9) << trial;
    EXPECT_NEAR(t_lpips(lifted).mean, t_lpips(v).mean, 1e-12) << trial;
  }
}

// ---------------------------------------------------------------------------
// Selection and corpus reports

TEST(MetricSelection, Parse) {
  const MetricSelection s = MetricSelection::parse("flow,tlpips");
  EXPECT_TRUE(s.flow);
  EXPECT_FALSE(s.embed);
  EXPECT_TRUE(s.tlpips);
  EXPECT_THROW(MetricSelection::parse("flow,fvd"), std::invalid_argument);
  EXPECT_THROW(MetricSelection::parse(""), std::invalid_argument);
}

std::vector<nlohmann::json> parse_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

CorpusItem item(std::string id, PixelVideo video, std::optional<std::int64_t> seed = {}, std::string arm = {}) {
  return {std::move(id), [video] { return video; }, seed, std::move(arm)};
}

TEST(EvalCorpus, Empty) {
  const CorpusReport r = eval_corpus({});
  EXPECT_TRUE(r.rows.empty());
  const auto lines = parse_lines(r.to_jsonl());
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0]["summary"], true);
  EXPECT_EQ(lines[0]["count"], 0);
  EXPECT_TRUE(lines[0]["flow_mean_magnitude"].is_null());
}

TEST(EvalCorpus, StaticCorpus) {
  const CorpusReport r = eval_corpus({item("a", moving_texture({0, 0, 0})), item("b", moving_texture({0, 0, 0, 0}))});
  ASSERT_EQ(r.rows.size(), 2u);
  for (const CorpusRow& row : r.rows) {
    ASSERT_TRUE(row.report) << row.error;
    EXPECT_LT(row.report->flow->mean_magnitude, 1e-9);
    EXPECT_NEAR(row.report->embed->mean, 1.0, 1e-12);
    EXPECT_EQ(row.report->tlpips->mean, 0.0);
  }
  const auto lines = parse_lines(r.to_jsonl());
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["video_id"], "a");
  EXPECT_TRUE(lines[0]["videophy"].is_null());
  EXPECT_TRUE(lines[0]["videophy2"].is_null());
  EXPECT_EQ(lines[2]["count"], 2);
  EXPECT_NEAR(lines[2]["embed_consistency"]["mean"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(lines[2]["embed_consistency"]["std"].get<double>(), 0.0, 1e-12);
}

TEST(EvalCorpus, ArmsSummarizedSeparately) {
  const CorpusReport r = eval_corpus({item("s1-on", moving_texture({0, 1, 2}), 1, "physics-on"),
                                      item("s1-off", moving_texture({0, 0, 0}), 1, "physics-off"),
                                      item("s2-on", moving_texture({0, 1, 2}), 2, "physics-on"),
                                      item("s2-off", moving_texture({0, 0, 0}), 2, "physics-off")},
                                     MetricSelection::parse("flow"));
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].seed, r.rows[1].seed);
  EXPECT_FALSE(r.rows[0].report->embed);
  const auto lines = parse_lines(r.to_jsonl());
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[4]["arm"], "physics-on");
  EXPECT_EQ(lines[5]["arm"], "physics-off");
  EXPECT_EQ(lines[4]["count"], 2);
  EXPECT_GT(lines[4]["flow_mean_magnitude"]["mean"].get<double>(), 0.5);
  EXPECT_LT(lines[5]["flow_mean_magnitude"]["mean"].get<double>(), 1e-9);
  EXPECT_TRUE(lines[4]["tlpips_mean"].is_null());
}

TEST(EvalCorpus, FailingItemBecomesErrorRow) {
  MetricPlugins plugins;
  plugins.embed = [](const PixelVideo& v, int f) {
    return f == 1 && v.width == 16 ? std::vector<double>(3, 0.0) : std::vector<double>{1, 0, 0};
  };
  const CorpusReport r =
      eval_corpus({item("bad", moving_texture({0, 0, 0}, 16)), item("good", moving_texture({0, 0, 0}))}, {}, plugins);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_FALSE(r.rows[0].report);
  EXPECT_NE(r.rows[0].error.find("frame 1"), std::string::npos) << r.rows[0].error;
  EXPECT_TRUE(r.rows[1].report);
  const auto lines = parse_lines(r.to_jsonl());
  EXPECT_EQ(lines[0]["error"].get<std::string>(), r.rows[0].error);
  EXPECT_EQ(lines[2]["failed"], 1);
}

TEST(EvalCorpus, DirectoryCorpus) {
  testing::TempDir dir("corpus");
  write_video(to_frames(moving_texture({0, 1, 2})), dir.path() / "b");
  write_video(to_frames(moving_texture({0, 0, 0})), dir.path() / "a" / "inner");
  fs::create_directories(dir.path() / "empty");
  const auto items = corpus_from_directory(dir.path());
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].video_id, "a/inner");
  EXPECT_EQ(items[1].video_id, "b");
  EXPECT_EQ(items[1].load().frames, 3);
  const fs::path out = dir.path() / "report.jsonl";
  eval_corpus(items).write(out);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_THROW(corpus_from_directory(dir.path() / "missing"), std::runtime_error);
}

}  // namespace
}  // namespace physvid
