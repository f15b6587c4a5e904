#include "physvid/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace physvid {
namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("malformed PPM header: " + path.string());
  return value;
}

}  // namespace

std::uint8_t to_byte(double value) {
  const double scaled = std::clamp((value + 1.0) / 2.0 * 255.0, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::round(scaled));
}

VideoFrames to_frames(const PixelVideo& video) {
  if (video.channels != 3) throw std::invalid_argument("to_frames: expected 3 channels");
  VideoFrames out{3, video.frames, video.height, video.width, std::vector<std::uint8_t>(video.data.size())};
  for (std::size_t i = 0; i < video.data.size(); ++i) out.data[i] = to_byte(video.data[i]);
  return out;
}

PixelVideo to_pixels(const VideoFrames& frames) {
  PixelVideo out = PixelVideo::filled(frames.channels, frames.frames, frames.height, frames.width, 0.0);
  for (std::size_t i = 0; i < frames.data.size(); ++i) out.data[i] = frames.data[i] / 127.5 - 1.0;
  return out;
}

std::filesystem::path frame_path(const std::filesystem::path& dir, int frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%03d.ppm", frame);
  return dir / name;
}

void write_video(const VideoFrames& video, const std::filesystem::path& dir) {
  if (video.channels != 3) throw std::invalid_argument("write_video: PPM needs 3 channels");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create video directory " + dir.string() + ": " + ec.message());
  std::vector<char> row(static_cast<std::size_t>(video.width) * 3);
  for (int f = 0; f < video.frames; ++f) {
    const auto path = frame_path(dir, f);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << video.width << ' ' << video.height << "\n255\n";
    for (int y = 0; y < video.height; ++y) {
      for (int x = 0; x < video.width; ++x)
        for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = static_cast<char>(video.at(c, f, y, x));
      out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
}

VideoFrames read_video(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a video directory: " + dir.string());
  VideoFrames video;
  std::vector<std::vector<std::uint8_t>> frames;
  for (int f = 0;; ++f) {
    const auto path = frame_path(dir, f);
    if (!std::filesystem::exists(path)) break;
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("not a binary PPM: " + path.string());
    const int w = read_header_int(in, path);
    const int h = read_header_int(in, path);
    const int maxval = read_header_int(in, path);
    if (maxval != 255 || w <= 0 || h <= 0) throw std::runtime_error("unsupported PPM: " + path.string());
    in.get();
    if (f == 0) {
      video.width = w;
      video.height = h;
    } else if (w != video.width || h != video.height) {
      throw std::runtime_error("frame size changes at " + path.string());
    }
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(pixels.size()))
      throw std::runtime_error("truncated PPM: " + path.string());
    frames.push_back(std::move(pixels));
  }
  if (frames.empty()) throw std::runtime_error("no frame_000.ppm in " + dir.string());
  video.frames = static_cast<int>(frames.size());
  video.data.resize(static_cast<std::size_t>(3) * video.frames * video.height * video.width);
  for (int f = 0; f < video.frames; ++f)
    for (int y = 0; y < video.height; ++y)
      for (int x = 0; x < video.width; ++x)
        for (int c = 0; c < 3; ++c)
          video.data[video.index(c, f, y, x)] = frames[f][(static_cast<std::size_t>(y) * video.width + x) * 3 + c];
  return video;
}

}  // namespace physvid
