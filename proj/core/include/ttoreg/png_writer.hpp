#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ttoreg {

/// 8-bit image, row-major, `channels` interleaved samples per pixel (1 or 3).
struct Image2D {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int x, int y, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

void write_png(const Image2D& img, const std::filesystem::path& path);
Image2D read_png(const std::filesystem::path& path);

}  // namespace ttoreg
