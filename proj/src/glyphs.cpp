// Procedural digit glyphs: stroke skeletons on the unit square, jittered per
// draw and rasterized with a soft-core distance profile. Stands in for MNIST
// when no IDX files are on hand; the scene pipeline does not care which pool
// it gets.

#include <array>
#include <cmath>
#include <vector>

#include "kpx/data.hpp"

namespace kpx::data {

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1,
           int segments = 24) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double a = a0 + (a1 - a0) * i / segments;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

Stroke line(Pt a, Pt b) { return Stroke{a, b}; }

// Stroke skeletons per class, on [0,1]^2 with y pointing down.
std::vector<Stroke> skeleton(int digit) {
  switch (digit) {
    case 0:
      return {arc(0.5, 0.5, 0.26, 0.36, 0.0, kTwoPi)};
    case 1:
      return {line({0.38, 0.28}, {0.54, 0.12}), line({0.54, 0.12}, {0.54, 0.88})};
    case 2:
      return {arc(0.48, 0.32, 0.24, 0.2, -kPi, 0.12),
              line({0.7, 0.38}, {0.27, 0.84}), line({0.27, 0.84}, {0.75, 0.84})};
    case 3:
      return {arc(0.46, 0.3, 0.22, 0.17, -kPi * 0.85, kPi * 0.5),
              arc(0.46, 0.66, 0.26, 0.21, -kPi * 0.5, kPi * 0.85)};
    case 4:
      return {line({0.58, 0.1}, {0.24, 0.58}), line({0.24, 0.58}, {0.8, 0.58}),
              line({0.62, 0.34}, {0.62, 0.9})};
    case 5:
      return {line({0.72, 0.12}, {0.32, 0.12}), line({0.32, 0.12}, {0.3, 0.45}),
              arc(0.48, 0.64, 0.24, 0.22, -kPi * 0.55, kPi * 0.8)};
    case 6:
      return {arc(0.62, 0.3, 0.36, 0.42, kPi * 0.75, kPi * 1.15, 12),
              arc(0.48, 0.66, 0.2, 0.2, 0.0, kTwoPi)};
    case 7:
      return {line({0.25, 0.14}, {0.76, 0.14}), line({0.76, 0.14}, {0.42, 0.9})};
    case 8:
      return {arc(0.5, 0.3, 0.19, 0.17, 0.0, kTwoPi),
              arc(0.5, 0.67, 0.24, 0.21, 0.0, kTwoPi)};
    case 9:
      return {arc(0.5, 0.33, 0.21, 0.2, 0.0, kTwoPi),
              line({0.71, 0.36}, {0.62, 0.9})};
    default:
      throw ContractError("render_glyph: digit class out of range");
  }
}

double dist_to_segment(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::hypot(dx, dy);
}

}  // namespace

Tensor render_glyph(int digit_class, Rng& rng) {
  std::vector<Stroke> strokes = skeleton(digit_class);

  // Per-draw jitter: rotation, anisotropic scale, shear, offset, thickness.
  const double rot = rng.uniform(-0.2, 0.2);
  const double sx = rng.uniform(0.82, 1.12), sy = rng.uniform(0.82, 1.12);
  const double shear = rng.uniform(-0.18, 0.18);
  const double ox = rng.uniform(-0.04, 0.04), oy = rng.uniform(-0.04, 0.04);
  const double sigma = rng.uniform(0.05, 0.075);
  const double cr = std::cos(rot), sr = std::sin(rot);
  for (auto& s : strokes)
    for (auto& p : s) {
      double x = (p.x - 0.5) * sx, y = (p.y - 0.5) * sy;
      x += shear * y;
      const double xr = cr * x - sr * y, yr = sr * x + cr * y;
      p.x = 0.5 + xr + ox;
      p.y = 0.5 + yr + oy;
    }
  // mild endpoint wobble
  for (auto& s : strokes)
    for (auto& p : s) {
      p.x += rng.uniform(-0.012, 0.012);
      p.y += rng.uniform(-0.012, 0.012);
    }

  Tensor img({28, 28});
  for (int i = 0; i < 28; ++i)
    for (int j = 0; j < 28; ++j) {
      const Pt p{(j + 0.5) / 28.0, (i + 0.5) / 28.0};
      double d = 1e9;
      for (const auto& s : strokes)
        for (std::size_t k = 0; k + 1 < s.size(); ++k)
          d = std::min(d, dist_to_segment(p, s[k], s[k + 1]));
      // solid core with a ~1 sigma falloff, like a thick pen stroke
      double t = (1.5 * sigma - d) / sigma;
      t = std::min(1.0, std::max(0.0, t));
      const double v = t * t * (3.0 - 2.0 * t);
      // quantize like MNIST so values are exactly f32-representable
      img.at(i, j) = std::round(v * 255.0) / 255.0;
    }
  return img;
}

DigitPool make_glyph_pool(int n_per_class, const std::string& split,
                          std::uint64_t seed) {
  std::uint64_t split_key = 0;
  for (char c : split) split_key = split_key * 131 + static_cast<unsigned char>(c);
  DigitPool pool;
  pool.reserve(static_cast<std::size_t>(n_per_class) * 10);
  for (int cls = 0; cls < 10; ++cls)
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng = Rng::stream(seed, rng_tag::kGlyph,
                            split_key * 10 + static_cast<std::uint64_t>(cls),
                            static_cast<std::uint64_t>(i));
      pool.emplace_back(render_glyph(cls, rng), cls);
    }
  return pool;
}

}  // namespace kpx::data
