#include "biounet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "biounet/errors.hpp"

namespace biounet::io {

unsigned char to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

namespace {

void write_netpbm(const std::string& path, const char* magic, std::span<const float> planar, std::size_t channels,
                  std::size_t h, std::size_t w) {
  if (planar.size() != channels * h * w) throw DimensionError("netpbm: buffer does not match " + path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << magic << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(channels * h * w);
  const std::size_t P = h * w;
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < channels; ++c) bytes[i * channels + c] = to_byte(planar[c * P + i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in, const std::string& path) {
  std::string t;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!t.empty()) return t;
      continue;
    }
    t.push_back(static_cast<char>(ch));
  }
  if (t.empty()) throw IoError("truncated netpbm header in " + path);
  return t;
}

std::size_t number(std::istream& in, const std::string& path) {
  const std::string t = token(in, path);
  std::size_t v = 0;
  for (char c : t) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw IoError("bad netpbm header field '" + t + "' in " + path);
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

}  // namespace

void write_pgm(const std::string& path, std::span<const float> plane, std::size_t h, std::size_t w) {
  write_netpbm(path, "P5", plane, 1, h, w);
}

void write_ppm(const std::string& path, std::span<const float> planar_rgb, std::size_t h, std::size_t w) {
  write_netpbm(path, "P6", planar_rgb, 3, h, w);
}

Image read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::string magic = token(in, path);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError(path + " is not a binary PGM/PPM file");
  }
  Image img;
  img.channels = channels;
  img.w = number(in, path);
  img.h = number(in, path);
  const std::size_t maxval = number(in, path);
  if (maxval == 0 || maxval > 255) throw IoError(path + ": only 8-bit netpbm is supported");
  if (img.w == 0 || img.h == 0) throw IoError(path + ": empty image");
  const std::size_t P = img.h * img.w;
  std::vector<unsigned char> bytes(channels * P);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError(path + ": truncated pixel data");
  img.data.resize(channels * P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      img.data[c * P + i] = static_cast<float>(bytes[i * channels + c]) / static_cast<float>(maxval);
  return img;
}

}  // namespace biounet::io
