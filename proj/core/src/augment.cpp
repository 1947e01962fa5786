#include "biounet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "biounet/errors.hpp"
#include "biounet/random.hpp"

namespace biounet::data {
namespace {

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Inverse map of the warp: output pixel (x, y) -> source coordinates.
struct Warp {
  double c, f, cos_t, sin_t, inv_scale, dx, dy;

  Warp(std::size_t size, const AugmentDraw& d) {
    c = static_cast<double>(size) / 2.0;
    f = d.crop;
    const double t = -d.rotation_deg * std::numbers::pi / 180.0;
    cos_t = std::cos(t);
    sin_t = std::sin(t);
    inv_scale = 1.0 / d.scale;
    dx = d.crop_dx;
    dy = d.crop_dy;
  }
  std::pair<double, double> source(std::size_t x, std::size_t y) const {
    const double qx = x + 0.5 - c, qy = y + 0.5 - c;
    const double rx = cos_t * qx - sin_t * qy, ry = sin_t * qx + cos_t * qy;
    return {c + dx + f * inv_scale * rx - 0.5, c + dy + f * inv_scale * ry - 0.5};
  }
};

void warp_planes(std::span<const float> in, std::vector<float>& out, std::size_t channels, std::size_t size,
                 const Warp& warp) {
  const auto n = static_cast<std::ptrdiff_t>(size);
  const std::size_t P = size * size;
  out.assign(channels * P, 0.0f);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const auto [sx, sy] = warp.source(x, y);
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      const std::ptrdiff_t xs[2] = {reflect(x0, n), reflect(x0 + 1, n)};
      const std::ptrdiff_t ys[2] = {reflect(y0, n), reflect(y0 + 1, n)};
      for (std::size_t c = 0; c < channels; ++c) {
        const float* p = in.data() + c * P;
        const double v = (1 - ay) * ((1 - ax) * p[ys[0] * n + xs[0]] + ax * p[ys[0] * n + xs[1]]) +
                         ay * ((1 - ax) * p[ys[1] * n + xs[0]] + ax * p[ys[1] * n + xs[1]]);
        out[c * P + y * size + x] = static_cast<float>(v);
      }
    }
}

void flip_planes(std::vector<float>& data, std::size_t channels, std::size_t size, bool h, bool v) {
  if (!h && !v) return;
  const std::size_t P = size * size;
  std::vector<float> src = data;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const std::size_t sy = v ? size - 1 - y : y;
        const std::size_t sx = h ? size - 1 - x : x;
        data[c * P + y * size + x] = src[c * P + sy * size + sx];
      }
}

std::vector<float> geometry(std::span<const float> in, std::size_t channels, std::size_t size,
                            const AugmentSpec& spec, const AugmentDraw& d) {
  std::vector<float> out;
  if (spec.geometric()) {
    warp_planes(in, out, channels, size, Warp(size, d));
  } else {
    out.assign(in.begin(), in.end());
  }
  flip_planes(out, channels, size, d.hflip, d.vflip);
  return out;
}

void colour(std::vector<float>& img, std::size_t size, const AugmentSpec& spec, const AugmentDraw& d) {
  const std::size_t P = size * size;
  const auto& r = spec.ranges;
  auto gray = [&](std::size_t i) { return 0.299 * img[i] + 0.587 * img[P + i] + 0.114 * img[2 * P + i]; };
  if (r.brightness) {
    for (auto& v : img) v = static_cast<float>(v * d.brightness);
  }
  if (r.contrast) {
    double mean = 0;
    for (std::size_t i = 0; i < P; ++i) mean += gray(i);
    mean /= static_cast<double>(P);
    for (auto& v : img) v = static_cast<float>((v - mean) * d.contrast + mean);
  }
  if (r.saturation) {
    for (std::size_t i = 0; i < P; ++i) {
      const double g = gray(i);
      for (std::size_t c = 0; c < 3; ++c) img[c * P + i] = static_cast<float>((img[c * P + i] - g) * d.saturation + g);
    }
  }
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

AugmentSpec AugmentSpec::identity(std::uint64_t seed) {
  AugmentSpec s;
  s.seed = seed;
  auto& r = s.ranges;
  r.rotation = r.scaling = r.cropping = false;
  r.brightness = r.contrast = r.saturation = false;
  r.hflip = r.vflip = false;
  return s;
}

AugmentDraw draw_augment(const AugmentSpec& spec, std::size_t size, Rng& rng) {
  // Every field is drawn unconditionally so enabling one transform does not
  // shift the random stream of the others.
  const auto& r = spec.ranges;
  AugmentDraw d;
  const double rot = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  const double scale = rng.uniform(r.min_scale, r.max_scale);
  const double crop = rng.uniform(r.min_crop, 1.0);
  const double ox = rng.uniform(-0.5, 0.5), oy = rng.uniform(-0.5, 0.5);
  const double b = rng.uniform(1.0 - r.brightness_delta, 1.0 + r.brightness_delta);
  const double c = rng.uniform(1.0 - r.contrast_delta, 1.0 + r.contrast_delta);
  const double s = rng.uniform(1.0 - r.saturation_delta, 1.0 + r.saturation_delta);
  const bool hf = rng.bernoulli(0.5), vf = rng.bernoulli(0.5);
  if (r.rotation) d.rotation_deg = rot;
  if (r.scaling) d.scale = scale;
  if (r.cropping) {
    d.crop = crop;
    const double slack = (1.0 - crop) * static_cast<double>(size);
    d.crop_dx = ox * slack;
    d.crop_dy = oy * slack;
  }
  if (r.brightness) d.brightness = b;
  if (r.contrast) d.contrast = c;
  if (r.saturation) d.saturation = s;
  if (r.hflip) d.hflip = hf;
  if (r.vflip) d.vflip = vf;
  return d;
}

std::vector<float> apply_augment(std::span<const float> image, std::size_t size, const AugmentSpec& spec,
                                 const AugmentDraw& draw) {
  if (image.size() != 3 * size * size) throw DimensionError("augment: image is not 3 x size x size");
  std::vector<float> out = geometry(image, 3, size, spec, draw);
  colour(out, size, spec, draw);
  return out;
}

std::pair<std::vector<float>, std::vector<float>> apply_joint(std::span<const float> image,
                                                              std::span<const float> mask, std::size_t size,
                                                              const AugmentSpec& spec, const AugmentDraw& draw) {
  if (mask.size() != size * size) throw DimensionError("augment: mask is not size x size");
  std::vector<float> img = apply_augment(image, size, spec, draw);
  std::vector<float> m = geometry(mask, 1, size, spec, draw);
  for (auto& v : m) v = v >= 0.5f ? 1.0f : 0.0f;
  return {std::move(img), std::move(m)};
}

std::pair<AugmentedView, AugmentedView> augment_pair(std::span<const float> image, std::size_t size,
                                                     const AugmentSpec& spec1, const AugmentSpec& spec2,
                                                     std::uint64_t call_key) {
  Rng r1 = Rng::derive(spec1.seed, {0x5431ULL, call_key});
  Rng r2 = Rng::derive(spec2.seed, {0x5432ULL, call_key});
  AugmentedView v1, v2;
  v1.draw = draw_augment(spec1, size, r1);
  v2.draw = draw_augment(spec2, size, r2);
  v1.image = apply_augment(image, size, spec1, v1.draw);
  v2.image = apply_augment(image, size, spec2, v2.draw);
  return {std::move(v1), std::move(v2)};
}

}  // namespace biounet::data
