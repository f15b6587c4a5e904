#include <cmath>
#include <stdexcept>
#include <string>

#include "physvid/data.hpp"

// Physics stand-in. The clip is cut into a (F/2) x g x g grid of cells (two frames
// per cell, N = (F/2) g^2 cells). For every cell we compute 16 statistics over the
// cell itself and the same 16 over its clamped 3x3 cell neighbourhood:
//
//   0-2   mean intensity per colour channel
//   3-5   mean temporal difference per channel (second frame minus first)
//   6     mean |temporal difference| of luminance
//   7-8   mean horizontal / vertical luminance gradient
//   9     mean gradient magnitude
//   10    luminance standard deviation
//   11-12 foreground centroid shift between the two frames (x, y), pixels
//   13    mean foreground weight, (luma + 1) / 2
//   14-15 mean foreground centroid offset from the region centre, in region sizes
//
// Temporal features (3-6, 11-12 and their neighbourhood copies) are only rescaled,
// never shifted, so they are exactly zero on a static clip and the signed ones
// negate under time reversal.

namespace physvid {
namespace {

constexpr int kBase = 16;

struct Grid {
  int cells_t;
  int side;
  int cell_h;
  int cell_w;
};

Grid grid_for(const PixelVideo& video, const ModelConfig& model) {
  if (video.frames < 2) throw std::invalid_argument("physics extract needs at least 2 frames");
  if (video.frames != model.latent_frames)
    throw std::invalid_argument("physics extract: clip has " + std::to_string(video.frames) + " frames, config expects " +
                                std::to_string(model.latent_frames));
  Grid g{};
  g.cells_t = video.frames / 2;
  if (video.frames % 2 != 0 || model.phys_tokens % g.cells_t != 0)
    throw std::invalid_argument("physics extract: phys_tokens does not tile the frame pairs");
  const int per_frame = model.phys_tokens / g.cells_t;
  g.side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(per_frame))));
  if (g.side * g.side != per_frame || video.height % g.side != 0 || video.width % g.side != 0)
    throw std::invalid_argument("physics extract: phys_tokens does not form a square grid dividing the frame");
  g.cell_h = video.height / g.side;
  g.cell_w = video.width / g.side;
  return g;
}

struct FrameMaps {
  std::vector<double> gray, gx, gy;
};

FrameMaps frame_maps(const PixelVideo& video, int f) {
  FrameMaps m;
  m.gray = video.gray(f);
  const int h = video.height, w = video.width;
  m.gx.resize(m.gray.size());
  m.gy.resize(m.gray.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
      const int yu = std::max(0, y - 1), yd = std::min(h - 1, y + 1);
      m.gx[y * w + x] = 0.5 * (m.gray[y * w + xr] - m.gray[y * w + xl]);
      m.gy[y * w + x] = 0.5 * (m.gray[yd * w + x] - m.gray[yu * w + x]);
    }
  return m;
}

struct Region {
  int y0, y1, x0, x1;  // half-open
};

void region_stats(const PixelVideo& video, const FrameMaps& a, const FrameMaps& b, int f0, const Region& r,
                  double* out) {
  const int w = video.width;
  const double area = static_cast<double>((r.y1 - r.y0) * (r.x1 - r.x0));
  const double center_x = 0.5 * (r.x0 + r.x1);
  const double center_y = 0.5 * (r.y0 + r.y1);
  const double size_x = r.x1 - r.x0;
  const double size_y = r.y1 - r.y0;
  for (int i = 0; i < kBase; ++i) out[i] = 0.0;

  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, diff = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        const double v0 = video.at(c, f0, y, x);
        const double v1 = video.at(c, f0 + 1, y, x);
        sum += v0 + v1;
        diff += v1 - v0;
      }
    out[c] = sum / (2 * area);
    out[3 + c] = diff / area;
  }

  double abs_dt = 0, gx = 0, gy = 0, gmag = 0, mean = 0, sq = 0;
  double mass[2] = {0, 0}, mx[2] = {0, 0}, my[2] = {0, 0};
  const FrameMaps* maps[2] = {&a, &b};
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const int i = y * w + x;
      abs_dt += std::abs(b.gray[i] - a.gray[i]);
      for (int k = 0; k < 2; ++k) {
        const FrameMaps& m = *maps[k];
        gx += m.gx[i];
        gy += m.gy[i];
        gmag += std::hypot(m.gx[i], m.gy[i]);
        mean += m.gray[i];
        sq += m.gray[i] * m.gray[i];
        const double weight = std::max(0.0, 0.5 * (m.gray[i] + 1.0));
        mass[k] += weight;
        mx[k] += weight * (x + 0.5);
        my[k] += weight * (y + 0.5);
      }
    }
  out[6] = abs_dt / area;
  out[7] = gx / (2 * area);
  out[8] = gy / (2 * area);
  out[9] = gmag / (2 * area);
  mean /= 2 * area;
  out[10] = std::sqrt(std::max(0.0, sq / (2 * area) - mean * mean));

  constexpr double kMinMass = 1e-6;
  const bool present[2] = {mass[0] > kMinMass * area, mass[1] > kMinMass * area};
  if (present[0] && present[1]) {
    out[11] = mx[1] / mass[1] - mx[0] / mass[0];
    out[12] = my[1] / mass[1] - my[0] / mass[0];
  }
  out[13] = (mass[0] + mass[1]) / (2 * area);
  int seen = 0;
  for (int k = 0; k < 2; ++k) {
    if (!present[k]) continue;
    out[14] += (mx[k] / mass[k] - center_x) / size_x;
    out[15] += (my[k] / mass[k] - center_y) / size_y;
    ++seen;
  }
  if (seen > 0) {
    out[14] /= seen;
    out[15] /= seen;
  }
}

}  // namespace

bool is_signed_temporal_feature(int index) {
  const int base = index % kBase;
  return (base >= 3 && base <= 5) || base == 11 || base == 12;
}

bool is_temporal_feature(int index) { return is_signed_temporal_feature(index) || index % kBase == 6; }

std::vector<double> raw_physics_features(const PixelVideo& video, const ModelConfig& model) {
  const Grid g = grid_for(video, model);
  const int cells = g.cells_t * g.side * g.side;
  std::vector<double> features(static_cast<std::size_t>(cells) * kPhysicsFeatureCount);
  for (int ct = 0; ct < g.cells_t; ++ct) {
    const int f0 = 2 * ct;
    const FrameMaps a = frame_maps(video, f0);
    const FrameMaps b = frame_maps(video, f0 + 1);
    for (int cy = 0; cy < g.side; ++cy)
      for (int cx = 0; cx < g.side; ++cx) {
        double* out = features.data() + static_cast<std::size_t>((ct * g.side + cy) * g.side + cx) * kPhysicsFeatureCount;
        const Region cell{cy * g.cell_h, (cy + 1) * g.cell_h, cx * g.cell_w, (cx + 1) * g.cell_w};
        const Region hood{std::max(0, cy - 1) * g.cell_h, std::min(g.side, cy + 2) * g.cell_h,
                          std::max(0, cx - 1) * g.cell_w, std::min(g.side, cx + 2) * g.cell_w};
        region_stats(video, a, b, f0, cell, out);
        region_stats(video, a, b, f0, hood, out + kBase);
      }
  }
  return features;
}

PhysicsTokens toy_physics_extract(const PixelVideo& video, const ModelConfig& model) {
  const std::vector<double> raw = raw_physics_features(video, model);
  const FeatureStandardization& norm = physics_standardization();
  const int cells = static_cast<int>(raw.size() / kPhysicsFeatureCount);
  PhysicsTokens tokens = PhysicsTokens::zeros(cells, model.phys_dim);
  const int kept = std::min(model.phys_dim, kPhysicsFeatureCount);
  for (int n = 0; n < cells; ++n) {
    auto row = tokens.row(n);
    for (int i = 0; i < kept; ++i) {
      const double v = raw[static_cast<std::size_t>(n) * kPhysicsFeatureCount + i];
      row[i] = (v - norm.mean[i]) / norm.stddev[i];
    }
  }
  return tokens;
}

FeatureStandardization calibrate_physics_standardization(int clips, const ModelConfig& model) {
  std::array<double, kPhysicsFeatureCount> sum{}, sq{};
  std::size_t count = 0;
  for (int seed = 0; seed < clips; ++seed) {
    const VideoClip clip = synth_clip(seed, kind_for_seed(seed), ClipGeometry::from(model));
    const std::vector<double> raw = raw_physics_features(clip.frames, model);
    for (std::size_t n = 0; n < raw.size() / kPhysicsFeatureCount; ++n) {
      for (int i = 0; i < kPhysicsFeatureCount; ++i) {
        const double v = raw[n * kPhysicsFeatureCount + i];
        sum[i] += v;
        sq[i] += v * v;
      }
      ++count;
    }
  }
  FeatureStandardization out;
  for (int i = 0; i < kPhysicsFeatureCount; ++i) {
    const double mean = sum[i] / count;
    const double second = is_temporal_feature(i) ? sq[i] / count : sq[i] / count - mean * mean;
    out.mean[i] = is_temporal_feature(i) ? 0.0 : mean;
    const double sd = std::sqrt(std::max(0.0, second));
    out.stddev[i] = sd > 1e-8 ? sd : 1.0;
  }
  return out;
}

const FeatureStandardization& physics_standardization() {
  static const FeatureStandardization table = [] {
    FeatureStandardization s;
#include "physics_standardization.inc"
    return s;
  }();
  return table;
}

}  // namespace physvid
