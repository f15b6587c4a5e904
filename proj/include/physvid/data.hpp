#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physvid/config.hpp"
#include "physvid/types.hpp"

namespace physvid {

/// Pixel video [channels, frames, height, width] with values in [-1, 1].
struct PixelVideo {
  int channels = 3;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static PixelVideo filled(int channels, int frames, int height, int width, double value) {
    return {channels, frames, height, width,
            std::vector<double>(static_cast<std::size_t>(channels) * frames * height * width, value)};
  }
  std::size_t index(int c, int f, int y, int x) const {
    return ((static_cast<std::size_t>(c) * frames + f) * height + y) * width + x;
  }
  double& at(int c, int f, int y, int x) { return data[index(c, f, y, x)]; }
  double at(int c, int f, int y, int x) const { return data[index(c, f, y, x)]; }
  /// Channel-mean luminance of one frame, [height * width].
  std::vector<double> gray(int f) const;
  /// Frames in reverse order.
  PixelVideo reversed() const;

  bool operator==(const PixelVideo&) const = default;
};

// ---------------------------------------------------------------------------
// Procedural clips

enum class ClipKind { kBounce, kSlide, kCollide, kStatic };
std::string to_string(ClipKind kind);
ClipKind parse_clip_kind(const std::string& name);
/// Kind used by the streaming pipeline for a seed (cycles through all four).
ClipKind kind_for_seed(std::int64_t seed);

struct Disc {
  double x = 0;  // center, pixels; x to the right, y downward
  double y = 0;
  double vx = 0;  // pixels / frame
  double vy = 0;
  double radius = 1;
  std::array<double, 3> color{};
};

struct SceneParams {
  std::vector<Disc> discs;  // state at frame 0
  double gravity = 0;       // pixels / frame^2, +y
  /// Simulated disc centers per frame: centers[f][disc] = {x, y}.
  std::vector<std::vector<std::array<double, 2>>> centers;
};

struct ClipGeometry {
  int frames = 8;
  int height = 16;
  int width = 16;

  static ClipGeometry from(const ModelConfig& model) {
    return {model.latent_frames, model.pixel_height(), model.pixel_width()};
  }
};

struct VideoClip {
  PixelVideo frames;
  std::string prompt;
  SceneParams scene;
  std::int64_t seed = 0;
  ClipKind kind = ClipKind::kBounce;
};

/// Deterministic per (seed, kind): one or two anti-aliased discs under constant
/// gravity with elastic wall (and disc-disc) collisions.
VideoClip synth_clip(std::int64_t seed, ClipKind kind, const ClipGeometry& geometry = {});

/// Renders discs at the given centers onto a -1 background with 4x4 supersampling.
void render_discs(PixelVideo& video, int frame, const std::vector<Disc>& discs,
                  const std::vector<std::array<double, 2>>& centers);

// ---------------------------------------------------------------------------
// Stand-in encoders

/// Orthonormal patch codec: each k x k x 3 pixel patch (k = vae_downsample) maps
/// through a DCT-II basis to 3k^2 latent channels. Exactly invertible.
class ToyCodec {
 public:
  explicit ToyCodec(const ModelConfig& model);

  LatentVideo encode(const PixelVideo& video) const;
  PixelVideo decode(const LatentVideo& latent) const;
  /// Latent scaling factor applied before decoding.
  double scaling_factor() const { return 1.0; }
  int factor() const { return factor_; }

 private:
  int factor_;
  int channels_;
  std::vector<double> basis_;  // [channels, channels], rows are basis vectors
};

LatentVideo toy_vae_encode(const PixelVideo& video, const ModelConfig& model);
PixelVideo toy_vae_decode(const LatentVideo& latent, const ModelConfig& model);

/// Whitespace tokens, truncated/padded to text_len; each token is a pseudo-random
/// unit vector keyed by a stable hash of its text, padding rows are zero.
TextEmbedding toy_text_embed(const std::string& prompt, const ModelConfig& model);

/// Hand-crafted motion statistics per spatiotemporal cell, standing in for a learned
/// video representation. See physics_features.cpp for the feature table.
PhysicsTokens toy_physics_extract(const PixelVideo& video, const ModelConfig& model);

/// Number of distinct physics statistics before padding/truncation to phys_dim.
inline constexpr int kPhysicsFeatureCount = 32;
/// Feature indices whose value is a signed temporal difference (negate under time reversal).
bool is_signed_temporal_feature(int index);
/// Feature indices that vanish on a static clip.
bool is_temporal_feature(int index);

struct FeatureStandardization {
  std::array<double, kPhysicsFeatureCount> mean{};
  std::array<double, kPhysicsFeatureCount> stddev{};
};
/// Constants baked into the repository from a 256-clip calibration run.
const FeatureStandardization& physics_standardization();
/// Recomputes the constants from `clips` streaming-pipeline clips (seeds 0..clips-1).
FeatureStandardization calibrate_physics_standardization(int clips, const ModelConfig& model);
/// Unstandardized features, [cells, kPhysicsFeatureCount].
std::vector<double> raw_physics_features(const PixelVideo& video, const ModelConfig& model);

// ---------------------------------------------------------------------------
// Samples, streams, shards

struct TrainingSample {
  LatentVideo z0;
  TextEmbedding c_text;
  PhysicsTokens p_gt;
  std::string prompt;
  std::string sample_id;

  bool operator==(const TrainingSample&) const = default;
};

/// synth -> encode -> embed -> extract for one seed. Tensor values are rounded to
/// float32 so the sample survives the on-disk format bitwise.
TrainingSample make_sample(std::int64_t seed, const ModelConfig& model);

using SeedSource = std::function<std::optional<std::int64_t>()>;
SeedSource seed_range(std::int64_t begin, std::int64_t end);
SeedSource seed_list(std::vector<std::int64_t> seeds);

/// Lazily produces one sample per seed; holds no more than the sample in flight.
class SampleStream {
 public:
  SampleStream(SeedSource seeds, const ModelConfig& model) : seeds_(std::move(seeds)), model_(model) {}
  std::optional<TrainingSample> next();

 private:
  SeedSource seeds_;
  ModelConfig model_;
};

inline constexpr char kShardMagic[4] = {'P', 'V', 'G', 'C'};
inline constexpr std::uint32_t kShardVersion = 1;

/// Appends samples to a shard file; the header's sample count is patched on close().
class ShardWriter {
 public:
  ShardWriter(const std::filesystem::path& path, const ModelConfig& model);
  ~ShardWriter();
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

  void append(const TrainingSample& sample);
  std::uint64_t close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  ModelConfig model_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

class ShardReader {
 public:
  ShardReader(const std::filesystem::path& path, const ModelConfig& model);
  std::optional<TrainingSample> next();
  std::uint64_t sample_count() const { return count_; }

 private:
  std::ifstream in_;
  ModelConfig model_;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
};

std::uint64_t write_shard(std::span<const TrainingSample> samples, const std::filesystem::path& path,
                          const ModelConfig& model);
std::uint64_t write_shard(SampleStream& stream, const std::filesystem::path& path, const ModelConfig& model);
std::vector<TrainingSample> read_shard(const std::filesystem::path& path, const ModelConfig& model);

}  // namespace physvid
