#include "biounet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "biounet/errors.hpp"
#include "biounet/random.hpp"

namespace biounet::data {
namespace {

constexpr std::uint64_t kLabeledStream = 0x4c4142454cULL;
constexpr std::uint64_t kUnlabeledStream = 0x554e4c4142ULL;

using Rgb = std::array<double, 3>;

struct Canvas {
  std::size_t size;
  std::vector<double> px;  // planar RGB

  double& at(std::size_t c, std::size_t y, std::size_t x) { return px[(c * size + y) * size + x]; }
  void blend(std::size_t y, std::size_t x, const Rgb& color, double alpha) {
    for (std::size_t c = 0; c < 3; ++c) at(c, y, x) = (1 - alpha) * at(c, y, x) + alpha * color[c];
  }
  void scale(std::size_t y, std::size_t x, double f) {
    for (std::size_t c = 0; c < 3; ++c) at(c, y, x) *= f;
  }
};

// Lesion-frame coordinates of a pixel centre: unit circle = lesion boundary.
struct Frame {
  const LesionGeometry& g;
  std::pair<double, double> local(double x, double y) const {
    const double dx = x - g.cx, dy = y - g.cy;
    const double c = std::cos(g.angle), s = std::sin(g.angle);
    return {(c * dx + s * dy) / g.rx, (-s * dx + c * dy) / g.ry};
  }
  std::pair<double, double> pixel(double u, double v) const {
    const double c = std::cos(g.angle), s = std::sin(g.angle);
    const double lx = u * g.rx, ly = v * g.ry;
    return {g.cx + c * lx - s * ly, g.cy + s * lx + c * ly};
  }
};

Rgb jitter(const Rgb& base, double amount, Rng& rng) {
  Rgb out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = base[c] + rng.uniform(-amount, amount);
  return out;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Random point of the lesion frame with radius <= r_max.
std::pair<double, double> point_in_disc(double r_max, Rng& rng) {
  const double r = r_max * std::sqrt(rng.uniform());
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(a), r * std::sin(a)};
}

void paint_network(Canvas& cv, std::vector<float>& mask, const Frame& f, bool negative, Rng& rng) {
  const auto [cu, cv_] = point_in_disc(0.35, rng);
  const double radius = rng.uniform(0.45, 0.7);
  const double period = negative ? rng.uniform(4.5, 5.5) : rng.uniform(3.5, 4.5);
  const double theta = rng.uniform(0.0, std::numbers::pi / 2);
  const double phase_a = rng.uniform(0.0, period), phase_b = rng.uniform(0.0, period);
  const double line = negative ? 1.6 : 1.3;
  const double ct = std::cos(theta), st = std::sin(theta);
  const std::size_t S = cv.size;
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const auto [u, v] = f.local(px, py);
      if (u * u + v * v > 0.95 * 0.95) continue;
      const double du = u - cu, dv = v - cv_;
      if (du * du + dv * dv > radius * radius) continue;
      const double ra = ct * px + st * py + phase_a, rb = -st * px + ct * py + phase_b;
      const double a = ra - period * std::floor(ra / period);
      const double b = rb - period * std::floor(rb / period);
      const bool on_line = a < line || b < line;
      if (negative) {
        if (on_line) {
          cv.blend(y, x, {0.78, 0.62, 0.52}, 0.75);
        } else {
          cv.scale(y, x, 0.7);
        }
      } else if (on_line) {
        cv.blend(y, x, {0.18, 0.1, 0.07}, 0.7);
      }
      mask[y * S + x] = 1.0f;
    }
}

void paint_dots(Canvas& cv, std::vector<float>& mask, const Frame& f, const std::vector<std::pair<double, double>>& centres,
                const std::vector<double>& radii, const Rgb& color) {
  const std::size_t S = cv.size;
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const auto [u, v] = f.local(px, py);
      if (u * u + v * v > 1.0) continue;
      for (std::size_t k = 0; k < centres.size(); ++k) {
        const double dx = px - centres[k].first, dy = py - centres[k].second;
        if (dx * dx + dy * dy <= radii[k] * radii[k]) {
          cv.blend(y, x, color, 0.9);
          mask[y * S + x] = 1.0f;
          break;
        }
      }
    }
}

void paint_globules(Canvas& cv, std::vector<float>& mask, const Frame& f, Rng& rng) {
  const auto [cu, cv_] = point_in_disc(0.55, rng);
  const auto n = 4 + rng.below(6);
  std::vector<std::pair<double, double>> centres;
  std::vector<double> radii;
  for (std::uint64_t k = 0; k < n; ++k) {
    double u = cu + 0.16 * rng.normal(), v = cv_ + 0.16 * rng.normal();
    const double r = std::sqrt(u * u + v * v);
    if (r > 0.8) {
      u *= 0.8 / r;
      v *= 0.8 / r;
    }
    centres.push_back(f.pixel(u, v));
    radii.push_back(rng.uniform(1.3, 2.0));
  }
  paint_dots(cv, mask, f, centres, radii, jitter({0.2, 0.11, 0.07}, 0.03, rng));
}

void paint_milia(Canvas& cv, std::vector<float>& mask, const Frame& f, Rng& rng) {
  const auto n = 2 + rng.below(4);
  std::vector<std::pair<double, double>> centres;
  std::vector<double> radii;
  for (std::uint64_t k = 0; k < n; ++k) {
    const auto [u, v] = point_in_disc(0.75, rng);
    centres.push_back(f.pixel(u, v));
    radii.push_back(rng.uniform(1.0, 1.6));
  }
  paint_dots(cv, mask, f, centres, radii, jitter({0.96, 0.93, 0.82}, 0.02, rng));
}

void paint_streaks(Canvas& cv, std::vector<float>& mask, const Frame& f, Rng& rng) {
  const auto n = 5 + rng.below(5);
  const double start = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<std::array<double, 4>> segs;
  for (std::uint64_t k = 0; k < n; ++k) {
    const double a = start + 2.0 * std::numbers::pi * (static_cast<double>(k) + rng.uniform(-0.25, 0.25)) /
                                 static_cast<double>(n);
    const double r0 = rng.uniform(0.6, 0.72), r1 = rng.uniform(0.92, 1.0);
    const auto p0 = f.pixel(r0 * std::cos(a), r0 * std::sin(a));
    const auto p1 = f.pixel(r1 * std::cos(a), r1 * std::sin(a));
    segs.push_back({p0.first, p0.second, p1.first, p1.second});
  }
  const Rgb color = jitter({0.22, 0.13, 0.09}, 0.03, rng);
  const std::size_t S = cv.size;
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const auto [u, v] = f.local(px, py);
      if (u * u + v * v > 1.0) continue;
      for (const auto& s : segs) {
        if (segment_distance(px, py, s[0], s[1], s[2], s[3]) <= 0.8) {
          cv.blend(y, x, color, 0.85);
          mask[y * S + x] = 1.0f;
          break;
        }
      }
    }
}

float quantize(double v) {
  const long k = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(k) / 255.0f;
}

SyntheticSample render(std::size_t index, std::size_t size, std::uint64_t seed, std::uint64_t stream,
                       const IndicatorRates& rates) {
  Rng rng = Rng::derive(seed, {stream, static_cast<std::uint64_t>(index)});
  const std::size_t S = size;
  const double sd = static_cast<double>(S);
  SyntheticSample out;
  Canvas cv{S, std::vector<double>(3 * S * S)};

  // Skin: base tone, low-frequency shading, fine noise.
  const Rgb skin = jitter({0.87, 0.68, 0.58}, 0.04, rng);
  std::array<std::array<double, 4>, 3> waves;
  for (auto& wv : waves) wv = {rng.uniform(0.5, 2.0), rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(-1, 1),
                               rng.uniform(0.01, 0.03)};
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      double shade = 0;
      for (const auto& wv : waves)
        shade += wv[3] * std::sin(2 * std::numbers::pi * wv[0] * (x + wv[2] * y) / sd + wv[1]);
      for (std::size_t c = 0; c < 3; ++c) cv.at(c, y, x) = skin[c] + shade;
    }

  LesionGeometry& g = out.lesion;
  g.cx = sd / 2 + rng.uniform(-0.08, 0.08) * sd;
  g.cy = sd / 2 + rng.uniform(-0.08, 0.08) * sd;
  g.rx = rng.uniform(0.25, 0.36) * sd;
  g.ry = rng.uniform(0.25, 0.36) * sd;
  g.angle = rng.uniform(0.0, std::numbers::pi);
  const Frame f{g};
  const Rgb lesion = jitter({0.55, 0.36, 0.25}, 0.05, rng);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const auto [u, v] = f.local(x + 0.5, y + 0.5);
      const double r = std::sqrt(u * u + v * v);
      const double alpha = std::clamp((1.0 - r) / 0.1, 0.0, 1.0);
      if (alpha <= 0) continue;
      Rgb c = lesion;
      for (auto& ch : c) ch *= 1.0 - 0.15 * (1.0 - r * r);
      cv.blend(y, x, c, alpha);
    }

  Sample& s = out.sample;
  for (auto& m : s.masks) m.assign(S * S, 0.0f);
  // Draw order keeps the small textures visible on top of the networks.
  std::array<bool, kAttributeCount> drawn{};
  for (std::size_t j = 0; j < kAttributeCount; ++j) drawn[j] = rng.bernoulli(rates[j]);
  Rng paint = Rng::derive(seed, {stream, static_cast<std::uint64_t>(index), 0x7061696e74ULL});
  if (drawn[3]) paint_network(cv, s.masks[3], f, false, paint);
  if (drawn[2]) paint_network(cv, s.masks[2], f, true, paint);
  if (drawn[0]) paint_globules(cv, s.masks[0], f, paint);
  if (drawn[1]) paint_milia(cv, s.masks[1], f, paint);
  if (drawn[4]) paint_streaks(cv, s.masks[4], f, paint);

  s.image.resize(3 * S * S);
  for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] = quantize(cv.px[i] + 0.012 * rng.normal());
  s.diagnosis = diagnosis_rule(s.presence());
  return out;
}

void check_params(std::size_t size, const IndicatorRates& rates) {
  if (size < 32) throw ContractError("synthetic: image size must be at least 32");
  for (double r : rates)
    if (!(r >= 0.0 && r <= 1.0)) throw ContractError("synthetic: indicator rates must lie in [0, 1]");
}

std::string sample_id(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%06zu", prefix, index);
  return buf;
}

}  // namespace

bool LesionGeometry::contains(double x, double y) const {
  const auto [u, v] = Frame{*this}.local(x, y);
  return u * u + v * v <= 1.0;
}

int diagnosis_rule(const std::array<bool, kAttributeCount>& p) {
  const int count = static_cast<int>(std::count(p.begin(), p.end(), true));
  return (p[4] || p[2] || count >= 3) ? 1 : 0;
}

SyntheticSample generate_sample(std::size_t index, std::size_t size, std::uint64_t seed, const IndicatorRates& rates) {
  check_params(size, rates);
  auto s = render(index, size, seed, kLabeledStream, rates);
  s.sample.id = sample_id("syn", index);
  return s;
}

Dataset gen_synthetic(std::size_t n, std::size_t size, std::uint64_t seed, const IndicatorRates& rates) {
  check_params(size, rates);
  Dataset d;
  d.size = size;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = render(i, size, seed, kLabeledStream, rates);
    s.sample.id = sample_id("syn", i);
    labels.push_back(s.sample.diagnosis);
    d.samples.push_back(std::move(s.sample));
  }
  d.splits = stratified_split(labels, seed);
  d.provenance = {{"source", "synthetic"}, {"seed", seed}, {"n", n}, {"size", size}, {"rates", rates}};
  if (!d.indices(Split::train).empty()) d.stats = compute_stats(d);
  return d;
}

UnlabeledDataset gen_synthetic_unlabeled(std::size_t n, std::size_t size, std::uint64_t seed,
                                         const IndicatorRates& rates) {
  check_params(size, rates);
  UnlabeledDataset d;
  d.size = size;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = render(i, size, seed, kUnlabeledStream, rates);
    d.samples.push_back({sample_id("unl", i), std::move(s.sample.image)});
  }
  d.provenance = {{"source", "synthetic"}, {"seed", seed}, {"n", n}, {"size", size}, {"rates", rates}};
  return d;
}

}  // namespace biounet::data
