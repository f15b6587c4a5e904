#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "physvid/autograd.hpp"
#include "physvid/config.hpp"
#include "physvid/layers.hpp"

namespace physvid::testing {

/// Every width, count and length at most 4.
inline ModelConfig mini_model() {
  ModelConfig m;
  m.latent_channels = 2;
  m.latent_frames = 2;
  m.latent_height = 4;
  m.latent_width = 4;
  m.text_len = 3;
  m.text_dim = 4;
  m.phys_tokens = 4;
  m.phys_dim = 4;
  m.hidden_dim = 4;
  m.predictor_layers = 1;
  m.predictor_heads = 2;
  m.gen_spatial_blocks = 1;
  m.gen_temporal_blocks = 1;
  m.gen_heads = 2;
  m.timestep_embed_dim = 4;
  m.vae_downsample = 1;
  return m;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> out(n);
  for (double& v : out) v = dist(gen);
  return out;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
  double max_relative_error = 0;
  std::string worst;
  std::size_t checked = 0;
};

/// Central differences of a scalar loss against the accumulated gradients of `inputs`.
/// `loss` must rebuild the graph from current values on every call.
inline GradCheck check_gradients(const std::function<ag::Tensor()>& loss, const nn::ParameterList& inputs,
                                 double h = 1e-5) {
  for (const auto& p : inputs) {
    ag::Tensor t = p.tensor;
    t.zero_grad();
  }
  ag::backward(loss());
  GradCheck out;
  for (const auto& p : inputs) {
    ag::Tensor t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        ag::NoGradGuard guard;
        values[i] = saved + h;
        plus = loss().item();
        values[i] = saved - h;
        minus = loss().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = relative_error(a, numeric);
      ++out.checked;
      if (err > out.max_relative_error) {
        out.max_relative_error = err;
        out.worst = p.name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Scalar touching every element of x: mean((x - w)^2) against fixed random w.
inline ag::Tensor probe(const ag::Tensor& x, std::uint64_t seed) {
  return ag::mse(x, ag::Tensor::constant(x.rows(), x.cols(), random_values(x.size(), seed)));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("physvid-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Resident set size in kB from /proc/self/status, 0 if unavailable.
inline long resident_kb() {
  std::ifstream in("/proc/self/status");
  std::string key;
  while (in >> key) {
    if (key == "VmRSS:") {
      long kb = 0;
      in >> kb;
      return kb;
    }
    std::string rest;
    std::getline(in, rest);
  }
  return 0;
}

/// Mean of series[end - window, end), 1-based step `end`.
inline double trailing_mean(const std::vector<double>& series, int end, int window) {
  double s = 0;
  for (int i = end - window; i < end; ++i) s += series[static_cast<std::size_t>(i)];
  return s / window;
}

}  // namespace physvid::testing
