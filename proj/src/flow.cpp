#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "physvid/metrics.hpp"

namespace physvid {
namespace {

GrayImage standardize(const GrayImage& img) {
  GrayImage out = img;
  const double n = static_cast<double>(img.data.size());
  double mean = 0;
  for (double v : img.data) mean += v;
  mean /= n;
  double var = 0;
  for (double v : img.data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : out.data) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
  return out;
}

double clamped(const GrayImage& img, int y, int x) {
  return img.at(std::clamp(y, 0, img.height - 1), std::clamp(x, 0, img.width - 1));
}

GrayImage blur(const GrayImage& img) {
  GrayImage tmp = img, out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      tmp.data[y * img.width + x] = 0.25 * clamped(img, y, x - 1) + 0.5 * img.at(y, x) + 0.25 * clamped(img, y, x + 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.data[y * img.width + x] = 0.25 * clamped(tmp, y - 1, x) + 0.5 * tmp.at(y, x) + 0.25 * clamped(tmp, y + 1, x);
  return out;
}

GrayImage downsample(const GrayImage& img) {
  GrayImage out{img.height / 2, img.width / 2, {}};
  out.data.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.data[y * out.width + x] = 0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) + img.at(2 * y + 1, 2 * x) +
                                            img.at(2 * y + 1, 2 * x + 1));
  return out;
}

double bilinear(const GrayImage& img, double y, double x) {
  y = std::clamp(y, 0.0, img.height - 1.0);
  x = std::clamp(x, 0.0, img.width - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) + fy * ((1 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
}

// Jacobi iterations on the increment around (u, v), b warped by the current flow.
void refine(const GrayImage& a, const GrayImage& b, FlowField& flow, const FlowOptions& opt) {
  const int h = a.height, w = a.width;
  GrayImage warped = b;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      warped.data[i] = bilinear(b, y + flow.v[i], x + flow.u[i]);
    }
  std::vector<double> ix(a.data.size()), iy(a.data.size()), it(a.data.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ix[i] = 0.25 * (clamped(a, y, x + 1) - clamped(a, y, x - 1) + clamped(warped, y, x + 1) - clamped(warped, y, x - 1));
      iy[i] = 0.25 * (clamped(a, y + 1, x) - clamped(a, y - 1, x) + clamped(warped, y + 1, x) - clamped(warped, y - 1, x));
      it[i] = warped.data[i] - a.data[i];
    }
  const std::vector<double> u0 = flow.u, v0 = flow.v;
  std::vector<double> du(a.data.size(), 0.0), dv(a.data.size(), 0.0);
  const double alpha2 = opt.smoothness * opt.smoothness;
  auto neighbour_mean = [&](const std::vector<double>& total_base, const std::vector<double>& inc, int y, int x) {
    double sum = 0;
    int count = 0;
    for (auto [dy, dx] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
      const int yy = y + dy, xx = x + dx;
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
      const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
      sum += total_base[j] + inc[j];
      ++count;
    }
    return sum / count;
  };
  for (int iter = 0; iter < opt.iterations; ++iter) {
    std::vector<double> ndu(du.size()), ndv(dv.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        // Smoothness acts on the total flow; the data term only on the increment.
        const double du_bar = neighbour_mean(u0, du, y, x) - u0[i];
        const double dv_bar = neighbour_mean(v0, dv, y, x) - v0[i];
        const double num = ix[i] * du_bar + iy[i] * dv_bar + it[i];
        const double den = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
        ndu[i] = du_bar - ix[i] * num / den;
        ndv[i] = dv_bar - iy[i] * num / den;
      }
    du.swap(ndu);
    dv.swap(ndv);
  }
  for (std::size_t i = 0; i < du.size(); ++i) {
    flow.u[i] = u0[i] + du[i];
    flow.v[i] = v0[i] + dv[i];
  }
}

}  // namespace

GrayImage frame_gray(const PixelVideo& video, int f) {
  if (f < 0 || f >= video.frames) throw std::out_of_range("frame index " + std::to_string(f));
  return {video.height, video.width, video.gray(f)};
}

double FlowField::mean_u() const {
  double s = 0;
  for (double x : u) s += x;
  return u.empty() ? 0.0 : s / u.size();
}

double FlowField::mean_v() const {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double FlowField::mean_magnitude() const {
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += std::hypot(u[i], v[i]);
  return u.empty() ? 0.0 : s / u.size();
}

FlowField estimate_flow(const GrayImage& a, const GrayImage& b, const FlowOptions& options) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("estimate_flow: frame shapes differ");
  if (a.height < 1 || a.width < 1) throw std::invalid_argument("estimate_flow: empty frame");
  if (options.levels < 1 || options.iterations < 0) throw std::invalid_argument("estimate_flow: bad options");

  std::vector<GrayImage> pa{blur(standardize(a))}, pb{blur(standardize(b))};
  for (int l = 1; l < options.levels; ++l) {
    if (pa.back().height < 4 || pa.back().width < 4) break;
    pa.push_back(blur(downsample(pa.back())));
    pb.push_back(blur(downsample(pb.back())));
  }

  FlowField flow;
  for (int l = static_cast<int>(pa.size()) - 1; l >= 0; --l) {
    const GrayImage& la = pa[l];
    FlowField next{la.height, la.width, std::vector<double>(la.data.size(), 0.0),
                   std::vector<double>(la.data.size(), 0.0)};
    if (!flow.u.empty()) {
      for (int y = 0; y < la.height; ++y)
        for (int x = 0; x < la.width; ++x) {
          const int cy = std::min(y / 2, flow.height - 1), cx = std::min(x / 2, flow.width - 1);
          const std::size_t i = static_cast<std::size_t>(y) * la.width + x;
          next.u[i] = 2.0 * flow.u[static_cast<std::size_t>(cy) * flow.width + cx];
          next.v[i] = 2.0 * flow.v[static_cast<std::size_t>(cy) * flow.width + cx];
        }
    }
    refine(la, pb[l], next, options);
    flow = std::move(next);
  }
  return flow;
}

FlowEstimator builtin_flow_estimator(FlowOptions options) {
  return [options](const GrayImage& a, const GrayImage& b) { return estimate_flow(a, b, options); };
}

FlowStats flow_consistency(const PixelVideo& video, const FlowEstimator& estimator) {
  if (video.frames < 3) throw std::invalid_argument("flow_consistency needs at least 3 frames");
  FlowStats stats;
  for (int f = 0; f + 1 < video.frames; ++f) {
    const FlowField flow = estimator(frame_gray(video, f), frame_gray(video, f + 1));
    if (flow.height != video.height || flow.width != video.width || flow.u.size() != flow.v.size() ||
        flow.u.size() != static_cast<std::size_t>(video.height) * video.width)
      throw std::runtime_error("flow estimator returned a field of the wrong shape");
    stats.per_pair.push_back(flow.mean_magnitude());
  }
  const double n = static_cast<double>(stats.per_pair.size());
  for (double m : stats.per_pair) stats.mean_magnitude += m / n;
  double var = 0;
  for (double m : stats.per_pair) var += (m - stats.mean_magnitude) * (m - stats.mean_magnitude);
  stats.temporal_std = std::sqrt(var / n);
  return stats;
}

}  // namespace physvid
