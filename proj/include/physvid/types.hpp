#pragma once

#include <span>
#include <string>
#include <vector>

#include "physvid/config.hpp"

namespace physvid {

/// Latent video [channels, frames, height, width], row-major.
struct LatentVideo {
  int channels = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  static LatentVideo zeros(int channels, int frames, int height, int width) {
    return {channels, frames, height, width,
            std::vector<double>(static_cast<std::size_t>(channels) * frames * height * width, 0.0)};
  }
  static LatentVideo zeros(const ModelConfig& model) {
    return zeros(model.latent_channels, model.latent_frames, model.latent_height, model.latent_width);
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int c, int f, int h, int w) const {
    return ((static_cast<std::size_t>(c) * frames + f) * height + h) * width + w;
  }
  double& at(int c, int f, int h, int w) { return data[index(c, f, h, w)]; }
  double at(int c, int f, int h, int w) const { return data[index(c, f, h, w)]; }
  bool same_shape(const LatentVideo& o) const {
    return channels == o.channels && frames == o.frames && height == o.height && width == o.width;
  }
  bool matches(const ModelConfig& m) const {
    return channels == m.latent_channels && frames == m.latent_frames && height == m.latent_height &&
           width == m.latent_width;
  }
  std::string shape_string() const {
    return "[" + std::to_string(channels) + ", " + std::to_string(frames) + ", " + std::to_string(height) + ", " +
           std::to_string(width) + "]";
  }

  bool operator==(const LatentVideo&) const = default;
};

/// A sequence of `length` vectors of dimension `width`.
template <typename Tag>
struct TokenSequence {
  int length = 0;
  int width = 0;
  std::vector<double> data;

  static TokenSequence zeros(int length, int width) {
    return {length, width, std::vector<double>(static_cast<std::size_t>(length) * width, 0.0)};
  }
  std::span<const double> row(int i) const {
    return std::span<const double>(data).subspan(static_cast<std::size_t>(i) * width, width);
  }
  std::span<double> row(int i) { return std::span<double>(data).subspan(static_cast<std::size_t>(i) * width, width); }
  std::string shape_string() const { return "[" + std::to_string(length) + ", " + std::to_string(width) + "]"; }

  bool operator==(const TokenSequence&) const = default;
};

struct TextTag {};
struct PhysicsTag {};
using TextEmbedding = TokenSequence<TextTag>;
using PhysicsTokens = TokenSequence<PhysicsTag>;

}  // namespace physvid
