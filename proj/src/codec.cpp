#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "physvid/data.hpp"
#include "physvid/rng.hpp"

namespace physvid {

ToyCodec::ToyCodec(const ModelConfig& model) : factor_(model.vae_downsample), channels_(model.latent_channels) {
  if (channels_ != 3 * factor_ * factor_) {
    throw std::invalid_argument("toy codec needs latent_channels = 3 * vae_downsample^2 (got " +
                                std::to_string(channels_) + " channels for factor " + std::to_string(factor_) + ")");
  }
  // Orthonormal DCT-II basis over the flattened (channel, dy, dx) patch.
  const int n = channels_;
  basis_.resize(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    const double norm = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i)
      basis_[static_cast<std::size_t>(k) * n + i] = norm * std::cos(std::numbers::pi * (i + 0.5) * k / n);
  }
}

LatentVideo ToyCodec::encode(const PixelVideo& video) const {
  if (video.channels != 3) throw std::invalid_argument("toy codec expects 3-channel video");
  if (video.height % factor_ != 0 || video.width % factor_ != 0) {
    std::ostringstream msg;
    msg << "toy codec: frame size " << video.height << "x" << video.width << " not divisible by " << factor_;
    throw std::invalid_argument(msg.str());
  }
  const int n = channels_;
  LatentVideo z = LatentVideo::zeros(n, video.frames, video.height / factor_, video.width / factor_);
  std::vector<double> patch(n);
  for (int f = 0; f < video.frames; ++f)
    for (int y = 0; y < z.height; ++y)
      for (int x = 0; x < z.width; ++x) {
        int i = 0;
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < factor_; ++dy)
            for (int dx = 0; dx < factor_; ++dx) patch[i++] = video.at(c, f, y * factor_ + dy, x * factor_ + dx);
        for (int k = 0; k < n; ++k) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += basis_[static_cast<std::size_t>(k) * n + j] * patch[j];
          z.at(k, f, y, x) = acc;
        }
      }
  return z;
}

PixelVideo ToyCodec::decode(const LatentVideo& z) const {
  if (z.channels != channels_) throw std::invalid_argument("toy codec: latent channel count mismatch");
  const int n = channels_;
  PixelVideo video = PixelVideo::filled(3, z.frames, z.height * factor_, z.width * factor_, 0.0);
  std::vector<double> patch(n);
  for (int f = 0; f < z.frames; ++f)
    for (int y = 0; y < z.height; ++y)
      for (int x = 0; x < z.width; ++x) {
        std::fill(patch.begin(), patch.end(), 0.0);
        for (int k = 0; k < n; ++k) {
          const double coef = z.at(k, f, y, x) / scaling_factor();
          for (int j = 0; j < n; ++j) patch[j] += basis_[static_cast<std::size_t>(k) * n + j] * coef;
        }
        int i = 0;
        for (int c = 0; c < 3; ++c)
          for (int dy = 0; dy < factor_; ++dy)
            for (int dx = 0; dx < factor_; ++dx) video.at(c, f, y * factor_ + dy, x * factor_ + dx) = patch[i++];
      }
  return video;
}

LatentVideo toy_vae_encode(const PixelVideo& video, const ModelConfig& model) { return ToyCodec(model).encode(video); }

PixelVideo toy_vae_decode(const LatentVideo& latent, const ModelConfig& model) {
  return ToyCodec(model).decode(latent);
}

TextEmbedding toy_text_embed(const std::string& prompt, const ModelConfig& model) {
  TextEmbedding out = TextEmbedding::zeros(model.text_len, model.text_dim);
  std::istringstream words(prompt);
  std::string token;
  int row = 0;
  while (row < model.text_len && words >> token) {
    Rng rng(stable_hash(token));
    auto dst = out.row(row++);
    double norm = 0.0;
    for (double& v : dst) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dst) v /= norm;
  }
  return out;
}

}  // namespace physvid
