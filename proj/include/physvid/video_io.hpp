#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "physvid/data.hpp"

namespace physvid {

/// 8-bit video [3, frames, height, width].
struct VideoFrames {
  int channels = 3;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::size_t index(int c, int f, int y, int x) const {
    return ((static_cast<std::size_t>(c) * frames + f) * height + y) * width + x;
  }
  std::uint8_t at(int c, int f, int y, int x) const { return data[index(c, f, y, x)]; }

  bool operator==(const VideoFrames&) const = default;
};

/// [-1, 1] -> [0, 255]: clamp, then round half away from zero.
std::uint8_t to_byte(double value);
VideoFrames to_frames(const PixelVideo& video);
/// [0, 255] -> [-1, 1] via v / 127.5 - 1.
PixelVideo to_pixels(const VideoFrames& frames);

/// Writes frame_000.ppm, frame_001.ppm, ... (binary P6) into `dir`, creating it.
void write_video(const VideoFrames& video, const std::filesystem::path& dir);
/// Reads the consecutive frame_NNN.ppm files of `dir`.
VideoFrames read_video(const std::filesystem::path& dir);
std::filesystem::path frame_path(const std::filesystem::path& dir, int frame);

}  // namespace physvid
