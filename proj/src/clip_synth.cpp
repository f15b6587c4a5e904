#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "physvid/data.hpp"
#include "physvid/rng.hpp"

namespace physvid {
namespace {

constexpr int kSubsteps = 64;
constexpr int kSupersample = 4;
constexpr double kBackground = -1.0;

struct NamedColor {
  const char* name;
  std::array<double, 3> rgb;
};

constexpr std::array<NamedColor, 8> kPalette{{
    {"red", {0.9, -0.8, -0.8}},
    {"green", {-0.8, 0.9, -0.8}},
    {"blue", {-0.8, -0.8, 0.9}},
    {"yellow", {0.9, 0.9, -0.8}},
    {"white", {0.9, 0.9, 0.9}},
    {"cyan", {-0.8, 0.9, 0.9}},
    {"magenta", {0.9, -0.8, 0.9}},
    {"orange", {0.9, 0.2, -0.8}},
}};

void reflect_walls(Disc& d, double width, double height) {
  if (d.x < d.radius) {
    d.x = 2 * d.radius - d.x;
    d.vx = std::abs(d.vx);
  } else if (d.x > width - d.radius) {
    d.x = 2 * (width - d.radius) - d.x;
    d.vx = -std::abs(d.vx);
  }
  if (d.y < d.radius) {
    d.y = 2 * d.radius - d.y;
    d.vy = std::abs(d.vy);
  } else if (d.y > height - d.radius) {
    d.y = 2 * (height - d.radius) - d.y;
    d.vy = -std::abs(d.vy);
  }
}

// Equal masses: swap the velocity components along the line of centers.
void collide_pair(Disc& a, Disc& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double dist = std::hypot(dx, dy);
  const double reach = a.radius + b.radius;
  if (dist >= reach || dist == 0.0) return;
  const double nx = dx / dist;
  const double ny = dy / dist;
  const double approach = (a.vx - b.vx) * nx + (a.vy - b.vy) * ny;
  if (approach <= 0.0) return;
  a.vx -= approach * nx;
  a.vy -= approach * ny;
  b.vx += approach * nx;
  b.vy += approach * ny;
}

void simulate(SceneParams& scene, int frames, double width, double height) {
  std::vector<Disc> state = scene.discs;
  const double dt = 1.0 / kSubsteps;
  const double g = scene.gravity;
  scene.centers.clear();
  for (int f = 0; f < frames; ++f) {
    std::vector<std::array<double, 2>> centers;
    for (const Disc& d : state) centers.push_back({d.x, d.y});
    scene.centers.push_back(std::move(centers));
    for (int s = 0; s < kSubsteps; ++s) {
      for (Disc& d : state) {
        d.x += d.vx * dt;
        d.y += d.vy * dt + 0.5 * g * dt * dt;
        d.vy += g * dt;
        reflect_walls(d, width, height);
      }
      for (std::size_t i = 0; i < state.size(); ++i)
        for (std::size_t j = i + 1; j < state.size(); ++j) collide_pair(state[i], state[j]);
    }
  }
}

const NamedColor& pick_color(Rng& rng) { return kPalette[rng.uniform_int(0, static_cast<int>(kPalette.size()))]; }

}  // namespace

std::vector<double> PixelVideo::gray(int f) const {
  std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out[static_cast<std::size_t>(y) * width + x] += at(c, f, y, x) / channels;
  return out;
}

PixelVideo PixelVideo::reversed() const {
  PixelVideo out = *this;
  for (int c = 0; c < channels; ++c)
    for (int f = 0; f < frames; ++f)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(c, f, y, x) = at(c, frames - 1 - f, y, x);
  return out;
}

std::string to_string(ClipKind kind) {
  switch (kind) {
    case ClipKind::kBounce:
      return "bounce";
    case ClipKind::kSlide:
      return "slide";
    case ClipKind::kCollide:
      return "collide";
    case ClipKind::kStatic:
      return "static";
  }
  return "bounce";
}

ClipKind parse_clip_kind(const std::string& name) {
  for (ClipKind k : {ClipKind::kBounce, ClipKind::kSlide, ClipKind::kCollide, ClipKind::kStatic})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown clip kind '" + name + "'");
}

ClipKind kind_for_seed(std::int64_t seed) {
  const auto m = static_cast<int>(((seed % 4) + 4) % 4);
  return static_cast<ClipKind>(m);
}

void render_discs(PixelVideo& video, int frame, const std::vector<Disc>& discs,
                  const std::vector<std::array<double, 2>>& centers) {
  for (int c = 0; c < video.channels; ++c)
    for (int y = 0; y < video.height; ++y)
      for (int x = 0; x < video.width; ++x) video.at(c, frame, y, x) = kBackground;
  for (std::size_t i = 0; i < discs.size(); ++i) {
    const double cx = centers[i][0];
    const double cy = centers[i][1];
    const double r = discs[i].radius;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(video.height - 1, static_cast<int>(std::ceil(cy + r + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(video.width - 1, static_cast<int>(std::ceil(cx + r + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        int inside = 0;
        for (int sy = 0; sy < kSupersample; ++sy)
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double px = x + (sx + 0.5) / kSupersample;
            const double py = y + (sy + 0.5) / kSupersample;
            if ((px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r) ++inside;
          }
        if (inside == 0) continue;
        const double coverage = static_cast<double>(inside) / (kSupersample * kSupersample);
        for (int c = 0; c < video.channels; ++c) {
          double& v = video.at(c, frame, y, x);
          v = v * (1.0 - coverage) + discs[i].color[c % 3] * coverage;
        }
      }
  }
}

VideoClip synth_clip(std::int64_t seed, ClipKind kind, const ClipGeometry& geometry) {
  if (geometry.frames < 1 || geometry.height < 4 || geometry.width < 4)
    throw std::invalid_argument("synth_clip: canvas too small");
  Rng rng(derive_seed(static_cast<std::uint64_t>(seed), 0x636c6970ULL + static_cast<std::uint64_t>(kind)));
  const double w = geometry.width;
  const double h = geometry.height;
  const double s = std::min(w, h) / 16.0;  // parameters are tuned for a 16 px canvas

  VideoClip clip;
  clip.seed = seed;
  clip.kind = kind;
  SceneParams& scene = clip.scene;
  const NamedColor& color = pick_color(rng);

  auto make_disc = [&](double r, const NamedColor& c) {
    Disc d;
    d.radius = r;
    d.color = c.rgb;
    d.x = rng.uniform(r + 0.5, w - r - 0.5);
    d.y = rng.uniform(r + 0.5, h - r - 0.5);
    return d;
  };

  switch (kind) {
    case ClipKind::kBounce: {
      Disc d = make_disc(rng.uniform(2.0, 3.0) * s, color);
      d.y = rng.uniform(d.radius + 0.5, 0.45 * h);
      d.vx = rng.uniform(-0.6, 0.6) * s;
      d.vy = rng.uniform(-0.3, 0.3) * s;
      scene.gravity = rng.uniform(0.3, 0.6) * s;
      scene.discs = {d};
      const bool strong = scene.gravity > 0.45 * s;
      clip.prompt = std::string("a ") + color.name + " ball falls and bounces on the floor drifting " +
                    (d.vx < 0 ? "left" : "right") + " under " + (strong ? "strong" : "weak") + " gravity";
      break;
    }
    case ClipKind::kSlide: {
      Disc d = make_disc(rng.uniform(2.0, 3.0) * s, color);
      const double speed = rng.uniform(0.8, 1.6) * s;
      d.vx = rng.uniform() < 0.5 ? -speed : speed;
      d.vy = rng.uniform(-0.3, 0.3) * s;
      scene.discs = {d};
      clip.prompt = std::string("a ") + color.name + " ball slides " + (d.vx < 0 ? "left" : "right") +
                    (speed > 1.2 * s ? " quickly" : " slowly") + " across the empty frame";
      break;
    }
    case ClipKind::kCollide: {
      const NamedColor& other = pick_color(rng);
      Disc a = make_disc(rng.uniform(1.5, 2.5) * s, color);
      Disc b = make_disc(rng.uniform(1.5, 2.5) * s, other);
      a.x = rng.uniform(a.radius + 0.5, 0.3 * w);
      b.x = rng.uniform(0.7 * w, w - b.radius - 0.5);
      a.y = rng.uniform(0.35 * h, 0.65 * h);
      b.y = a.y + rng.uniform(-1.0, 1.0) * s;
      b.y = std::clamp(b.y, b.radius, h - b.radius);
      a.vx = rng.uniform(0.8, 1.5) * s;
      b.vx = -rng.uniform(0.8, 1.5) * s;
      scene.gravity = rng.uniform(0.0, 0.2) * s;
      scene.discs = {a, b};
      clip.prompt = std::string("a ") + color.name + " ball and a " + other.name +
                    " ball roll toward each other and collide";
      break;
    }
    case ClipKind::kStatic: {
      Disc d = make_disc(rng.uniform(2.0, 3.0) * s, color);
      scene.discs = {d};
      clip.prompt = std::string("a ") + color.name + " ball rests motionless in the frame";
      if (rng.uniform() < 0.5) {
        const NamedColor& other = pick_color(rng);
        scene.discs.push_back(make_disc(rng.uniform(1.5, 2.5) * s, other));
        clip.prompt += std::string(" next to a ") + other.name + " ball";
      }
      break;
    }
  }

  simulate(scene, geometry.frames, w, h);
  clip.frames = PixelVideo::filled(3, geometry.frames, geometry.height, geometry.width, kBackground);
  for (int f = 0; f < geometry.frames; ++f) render_discs(clip.frames, f, scene.discs, scene.centers[f]);
  return clip;
}

}  // namespace physvid
