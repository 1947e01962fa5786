#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace biounet::io {

/// Planar image with values in [0, 1]: `channels` planes of h*w.
struct Image {
  std::size_t channels = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> data;
};

/// 8-bit binary netpbm (P5 grayscale / P6 RGB). Values are rounded to the
/// nearest of 256 levels and clamped to [0, 1]. Throws IoError.
void write_pgm(const std::string& path, std::span<const float> plane, std::size_t h, std::size_t w);
void write_ppm(const std::string& path, std::span<const float> planar_rgb, std::size_t h, std::size_t w);

/// Reads P5 or P6 (maxval <= 255) into planar floats k/maxval.
Image read_netpbm(const std::string& path);

/// Exact conversion used by the writers.
unsigned char to_byte(float v);

}  // namespace biounet::io
