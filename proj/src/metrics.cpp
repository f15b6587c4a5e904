#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "physvid/metrics.hpp"
#include "physvid/video_io.hpp"

namespace physvid {
namespace {

constexpr int kHistogramBins = 8;
constexpr double kMaxGradient = 1.0;

std::vector<double> channel_plane(const PixelVideo& video, int c, int f) {
  std::vector<double> out(static_cast<std::size_t>(video.height) * video.width);
  for (int y = 0; y < video.height; ++y)
    for (int x = 0; x < video.width; ++x) out[static_cast<std::size_t>(y) * video.width + x] = video.at(c, f, y, x);
  return out;
}

void gradients(const GrayImage& img, std::vector<double>& gx, std::vector<double>& gy) {
  gx.resize(img.data.size());
  gy.resize(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int xl = std::max(0, x - 1), xr = std::min(img.width - 1, x + 1);
      const int yu = std::max(0, y - 1), yd = std::min(img.height - 1, y + 1);
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      gx[i] = 0.5 * (img.at(y, xr) - img.at(y, xl));
      gy[i] = 0.5 * (img.at(yd, x) - img.at(yu, x));
    }
}

GrayImage blur_clamped(const GrayImage& img) {
  auto px = [&](int y, int x) { return img.at(std::clamp(y, 0, img.height - 1), std::clamp(x, 0, img.width - 1)); };
  GrayImage tmp = img, out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      tmp.data[static_cast<std::size_t>(y) * img.width + x] = 0.25 * px(y, x - 1) + 0.5 * px(y, x) + 0.25 * px(y, x + 1);
  auto pt = [&](int y, int x) { return tmp.at(std::clamp(y, 0, img.height - 1), x); };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.data[static_cast<std::size_t>(y) * img.width + x] = 0.25 * pt(y - 1, x) + 0.5 * pt(y, x) + 0.25 * pt(y + 1, x);
  return out;
}

GrayImage half(const GrayImage& img) {
  GrayImage out{std::max(1, img.height / 2), std::max(1, img.width / 2), {}};
  out.data.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const int y1 = std::min(2 * y + 1, img.height - 1), x1 = std::min(2 * x + 1, img.width - 1);
      out.data[static_cast<std::size_t>(y) * out.width + x] =
          0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, x1) + img.at(y1, 2 * x) + img.at(y1, x1));
    }
  return out;
}

void soft_bin(std::vector<double>& hist, double value, double lo, double hi) {
  const double pos = std::clamp((value - lo) / (hi - lo) * kHistogramBins - 0.5, 0.0, kHistogramBins - 1.0);
  const int b0 = static_cast<int>(std::floor(pos));
  const int b1 = std::min(b0 + 1, kHistogramBins - 1);
  const double frac = pos - b0;
  hist[b0] += 1.0 - frac;
  hist[b1] += frac;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

}  // namespace

FrameEmbedder builtin_frame_embedder() {
  return [](const PixelVideo& video, int f) {
    const GrayImage g = frame_gray(video, f);
    std::vector<double> out;
    for (int grid : {1, 2, 4, 8}) {
      if (grid > g.height || grid > g.width) break;
      for (int by = 0; by < grid; ++by)
        for (int bx = 0; bx < grid; ++bx) {
          const int y0 = by * g.height / grid, y1 = (by + 1) * g.height / grid;
          const int x0 = bx * g.width / grid, x1 = (bx + 1) * g.width / grid;
          double s = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) s += g.at(y, x);
          out.push_back(s / ((y1 - y0) * (x1 - x0)));
        }
    }
    std::vector<double> gx, gy, grad_hist(kHistogramBins, 0.0), int_hist(kHistogramBins, 0.0);
    gradients(g, gx, gy);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      soft_bin(grad_hist, std::hypot(gx[i], gy[i]), 0.0, kMaxGradient);
      soft_bin(int_hist, g.data[i], -1.0, 1.0);
    }
    const double n = static_cast<double>(g.data.size());
    for (double v : grad_hist) out.push_back(v / n);
    for (double v : int_hist) out.push_back(v / n);
    double norm = 0;
    for (double v : out) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& v : out) v /= norm;
    return out;
  };
}

EmbedStats embed_consistency(const PixelVideo& video, const FrameEmbedder& embedder) {
  if (video.frames < 2) throw std::invalid_argument("embed_consistency needs at least 2 frames");
  std::vector<std::vector<double>> emb;
  for (int f = 0; f < video.frames; ++f) {
    emb.push_back(embedder(video, f));
    if (emb.back().size() != emb.front().size())
      throw std::runtime_error("embedder width changed at frame " + std::to_string(f));
    double sq = 0;
    for (double v : emb.back()) sq += v * v;
    if (!(sq > 0)) throw std::runtime_error("zero-vector embedding at frame " + std::to_string(f));
  }
  EmbedStats stats;
  for (int f = 0; f + 1 < video.frames; ++f) stats.per_pair.push_back(cosine(emb[f], emb[f + 1]));
  stats.mean = mean_of(stats.per_pair);
  return stats;
}

FeatureExtractor builtin_feature_extractor() {
  return [](const PixelVideo& video, int f) {
    std::vector<std::vector<double>> layers(3);
    for (int c = 0; c < video.channels; ++c) {
      GrayImage img{video.height, video.width, channel_plane(video, c, f)};
      for (int s = 0; s < 3; ++s) {
        if (s > 0) img = half(img);
        const GrayImage smooth = blur_clamped(img);
        std::vector<double> gx, gy;
        gradients(smooth, gx, gy);
        layers[s].insert(layers[s].end(), gx.begin(), gx.end());
        layers[s].insert(layers[s].end(), gy.begin(), gy.end());
      }
    }
    return layers;
  };
}

double feature_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("feature stacks differ in depth");
  double total = 0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].size() != b[l].size()) throw std::invalid_argument("feature layers differ in size");
    if (a[l].empty()) continue;
    double sq = 0;
    for (std::size_t i = 0; i < a[l].size(); ++i) sq += (a[l][i] - b[l][i]) * (a[l][i] - b[l][i]);
    total += std::sqrt(sq / a[l].size());
  }
  return total;
}

TlpipsStats t_lpips(const PixelVideo& video, const FeatureExtractor& extractor) {
  if (video.frames < 2) throw std::invalid_argument("t_lpips needs at least 2 frames");
  TlpipsStats stats;
  auto prev = extractor(video, 0);
  for (int f = 1; f < video.frames; ++f) {
    auto cur = extractor(video, f);
    stats.per_pair.push_back(feature_distance(prev, cur));
    prev = std::move(cur);
  }
  stats.mean = mean_of(stats.per_pair);
  return stats;
}

MetricSelection MetricSelection::parse(const std::string& list) {
  MetricSelection sel{false, false, false};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "flow")
      sel.flow = true;
    else if (item == "embed")
      sel.embed = true;
    else if (item == "tlpips")
      sel.tlpips = true;
    else if (!item.empty())
      throw std::invalid_argument("unknown metric '" + item + "' (expected flow, embed, tlpips)");
  }
  if (!sel.flow && !sel.embed && !sel.tlpips) throw std::invalid_argument("no metrics selected");
  return sel;
}

MetricReport evaluate_video(const PixelVideo& video, const MetricSelection& selection, const MetricPlugins& plugins) {
  MetricReport r;
  if (selection.flow) r.flow = flow_consistency(video, plugins.flow);
  if (selection.embed) r.embed = embed_consistency(video, plugins.embed);
  if (selection.tlpips) r.tlpips = t_lpips(video, plugins.features);
  return r;
}

CorpusReport eval_corpus(const std::vector<CorpusItem>& items, const MetricSelection& selection,
                         const MetricPlugins& plugins) {
  CorpusReport report;
  for (const CorpusItem& item : items) {
    CorpusRow row{item.video_id, item.seed, item.arm, std::nullopt, {}};
    try {
      row.report = evaluate_video(item.load(), selection, plugins);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string CorpusReport::to_jsonl() const {
  using nlohmann::ordered_json;
  std::ostringstream out;
  std::map<std::string, std::map<std::string, std::vector<double>>> columns;
  std::map<std::string, std::pair<int, int>> counts;  // arm -> (rows, failed)
  std::vector<std::string> arm_order;

  for (const CorpusRow& row : rows) {
    ordered_json j;
    j["video_id"] = row.video_id;
    j["seed"] = row.seed ? ordered_json(*row.seed) : ordered_json(nullptr);
    j["arm"] = row.arm.empty() ? ordered_json(nullptr) : ordered_json(row.arm);
    j["flow_mean_magnitude"] = nullptr;
    j["flow_temporal_std"] = nullptr;
    j["embed_consistency"] = nullptr;
    j["tlpips_mean"] = nullptr;
    j["videophy"] = nullptr;
    j["videophy2"] = nullptr;
    if (!counts.count(row.arm)) arm_order.push_back(row.arm);
    auto& count = counts[row.arm];
    ++count.first;
    auto& cols = columns[row.arm];
    if (row.report) {
      const MetricReport& r = *row.report;
      if (r.flow) {
        j["flow_mean_magnitude"] = r.flow->mean_magnitude;
        j["flow_temporal_std"] = r.flow->temporal_std;
        j["flow_per_pair"] = r.flow->per_pair;
        cols["flow_mean_magnitude"].push_back(r.flow->mean_magnitude);
        cols["flow_temporal_std"].push_back(r.flow->temporal_std);
      }
      if (r.embed) {
        j["embed_consistency"] = r.embed->mean;
        j["embed_per_pair"] = r.embed->per_pair;
        cols["embed_consistency"].push_back(r.embed->mean);
      }
      if (r.tlpips) {
        j["tlpips_mean"] = r.tlpips->mean;
        j["tlpips_per_pair"] = r.tlpips->per_pair;
        cols["tlpips_mean"].push_back(r.tlpips->mean);
      }
      j["error"] = nullptr;
    } else {
      ++count.second;
      j["error"] = row.error;
    }
    out << j.dump() << '\n';
  }

  if (arm_order.empty()) arm_order.push_back("");
  for (const std::string& arm : arm_order) {
    ordered_json s;
    s["summary"] = true;
    s["arm"] = arm.empty() ? ordered_json(nullptr) : ordered_json(arm);
    s["count"] = counts[arm].first;
    s["failed"] = counts[arm].second;
    for (const char* name : {"flow_mean_magnitude", "flow_temporal_std", "embed_consistency", "tlpips_mean"}) {
      const auto& v = columns[arm][name];
      if (v.empty()) {
        s[name] = nullptr;
        continue;
      }
      const double mean = mean_of(v);
      double var = 0;
      for (double x : v) var += (x - mean) * (x - mean);
      s[name] = {{"mean", mean}, {"std", std::sqrt(var / v.size())}};
    }
    s["videophy"] = nullptr;
    s["videophy2"] = nullptr;
    out << s.dump() << '\n';
  }
  return out.str();
}

void CorpusReport::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << to_jsonl();
}

std::vector<CorpusItem> corpus_from_directory(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(frame_path(root, 0))) dirs.push_back(root);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(frame_path(entry.path(), 0))) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<CorpusItem> items;
  for (const auto& dir : dirs) {
    CorpusItem item;
    item.video_id = std::filesystem::relative(dir, root).generic_string();
    item.load = [dir] { return to_pixels(read_video(dir)); };
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace physvid
