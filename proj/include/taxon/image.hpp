#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace taxon {

/// 8-bit interleaved (height x width x channels) pixel buffer.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Binary PPM (P6, maxval 255) reader/writer; the synthetic data is stored this way.
RawImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RawImage& image);

}  // namespace taxon
