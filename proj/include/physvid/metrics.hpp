#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "physvid/data.hpp"

namespace physvid {

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Channel-mean luminance of frame `f`.
GrayImage frame_gray(const PixelVideo& video, int f);

/// Dense displacement from frame a to frame b, px / frame.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> u;
  std::vector<double> v;

  double mean_u() const;
  double mean_v() const;
  double mean_magnitude() const;
};

using FlowEstimator = std::function<FlowField(const GrayImage& a, const GrayImage& b)>;

struct FlowOptions {
  int levels = 2;
  int iterations = 10;
  double smoothness = 0.5;  // alpha of the Horn-Schunck energy, on standardized frames
};

/// Coarse-to-fine Horn-Schunck with warping. Each frame is standardized to zero mean
/// and unit variance first, so global brightness gain and offset produce no flow.
FlowField estimate_flow(const GrayImage& a, const GrayImage& b, const FlowOptions& options = {});
FlowEstimator builtin_flow_estimator(FlowOptions options = {});

struct FlowStats {
  double mean_magnitude = 0;
  double temporal_std = 0;       // population std of the per-pair series
  std::vector<double> per_pair;  // spatial mean flow magnitude of each consecutive pair
};
FlowStats flow_consistency(const PixelVideo& video, const FlowEstimator& estimator = builtin_flow_estimator());

/// Maps one frame to a fixed-width vector.
using FrameEmbedder = std::function<std::vector<double>(const PixelVideo& video, int frame)>;
/// Multi-scale block means of luminance plus normalized gradient-magnitude and
/// intensity histograms, scaled to unit length.
FrameEmbedder builtin_frame_embedder();

struct EmbedStats {
  double mean = 0;
  std::vector<double> per_pair;
};
/// Mean cosine similarity of consecutive frame embeddings. Throws naming the frame
/// index when an embedding has zero length.
EmbedStats embed_consistency(const PixelVideo& video, const FrameEmbedder& embedder = builtin_frame_embedder());

/// Per-frame stack of feature maps ("layers").
using FeatureExtractor = std::function<std::vector<std::vector<double>>(const PixelVideo& video, int frame)>;
/// Three scales of blurred per-channel gradients.
FeatureExtractor builtin_feature_extractor();

struct TlpipsStats {
  double mean = 0;
  std::vector<double> per_pair;
};
/// Sum over layers of the RMS feature difference, averaged over consecutive pairs.
TlpipsStats t_lpips(const PixelVideo& video, const FeatureExtractor& extractor = builtin_feature_extractor());
double feature_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

// ---------------------------------------------------------------------------
// Reports

struct MetricSelection {
  bool flow = true;
  bool embed = true;
  bool tlpips = true;

  /// Comma-separated subset of {flow, embed, tlpips}.
  static MetricSelection parse(const std::string& list);
};

struct MetricPlugins {
  FlowEstimator flow = builtin_flow_estimator();
  FrameEmbedder embed = builtin_frame_embedder();
  FeatureExtractor features = builtin_feature_extractor();
};

struct MetricReport {
  std::optional<FlowStats> flow;
  std::optional<EmbedStats> embed;
  std::optional<TlpipsStats> tlpips;
};

MetricReport evaluate_video(const PixelVideo& video, const MetricSelection& selection = {},
                            const MetricPlugins& plugins = {});

struct CorpusItem {
  std::string video_id;
  std::function<PixelVideo()> load;
  std::optional<std::int64_t> seed;
  std::string arm;  // "physics-on" / "physics-off" in A/B mode, empty otherwise
};

struct CorpusRow {
  std::string video_id;
  std::optional<std::int64_t> seed;
  std::string arm;
  std::optional<MetricReport> report;
  std::string error;
};

struct CorpusReport {
  std::vector<CorpusRow> rows;

  /// One JSON object per video, then one summary object per arm (mean and std of each
  /// metric over the successful rows). VideoPhy columns are present and null.
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;
};

/// Evaluates every item; a failing item becomes a row with `error` set.
CorpusReport eval_corpus(const std::vector<CorpusItem>& items, const MetricSelection& selection = {},
                         const MetricPlugins& plugins = {});

/// Every directory under `root` (or `root` itself) holding frame_000.ppm, sorted by path.
std::vector<CorpusItem> corpus_from_directory(const std::filesystem::path& root);

}  // namespace physvid
