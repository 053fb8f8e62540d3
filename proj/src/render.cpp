#include "kpx/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace kpx::render {

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw FormatError(path + ": write failed");
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError(path + ": not a P6 PPM");
  int w, h, maxval;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError(path + ": bad PPM header");
  in.get();  // single whitespace after maxval
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw FormatError(path + ": truncated pixel data");
  return img;
}

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const double m = v - c;
  auto q = [](double u) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::min(1.0, std::max(0.0, u))));
  };
  return {q(r + m), q(g + m), q(b + m)};
}

double phase_to_hue(double phase) {
  double p = wrap_angle(phase);
  if (p < 0) p += kTwoPi;
  return p / kTwoPi * 360.0;
}

Image phase_map_image(const Tensor& phase, const Tensor& amp, double amp_max) {
  if (!phase.same_shape(amp) || phase.rank() != 2)
    throw ShapeError("phase_map_image: expected matching [H,W] fields");
  const int h = phase.extent(0), w = phase.extent(1);
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<std::size_t>(w) * h * 3, 0);
  if (amp_max <= 0.0) return img;  // all black
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double v = std::min(1.0, std::max(0.0, amp.at(i, j) / amp_max));
      if (v == 0.0) continue;
      auto rgb = hsv_to_rgb(phase_to_hue(phase.at(i, j)), 1.0, v);
      std::copy(rgb.begin(), rgb.end(), img.px(i, j));
    }
  return img;
}

std::vector<std::string> render_phase_map(const Tensor& phases,
                                          const Tensor& amps,
                                          const std::string& out_prefix) {
  if (phases.rank() != 3 || !phases.same_shape(amps))
    throw ShapeError("render_phase_map: expected matching [C,H,W] fields");
  const int cn = phases.extent(0), h = phases.extent(1), w = phases.extent(2);
  const double amp_max = amps.max_abs();
  std::vector<std::string> paths;
  for (int c = 0; c < cn; ++c) {
    Tensor ph({h, w}), am({h, w});
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        ph.at(i, j) = phases.at(c, i, j);
        am.at(i, j) = amps.at(c, i, j);
      }
    const std::string path =
        out_prefix + "channel_" + std::to_string(c) + ".ppm";
    write_ppm(phase_map_image(ph, am, amp_max), path);
    paths.push_back(path);
  }
  // composite: amplitude-weighted resultant over channels
  Tensor ph({h, w}), am({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double x = 0.0, y = 0.0;
      for (int c = 0; c < cn; ++c) {
        x += amps.at(c, i, j) * std::cos(phases.at(c, i, j));
        y += amps.at(c, i, j) * std::sin(phases.at(c, i, j));
      }
      const double r = std::hypot(x, y);
      am.at(i, j) = r;
      ph.at(i, j) = r > 0.0 ? std::atan2(y, x) : 0.0;
    }
  const std::string comp = out_prefix + "composite.ppm";
  write_ppm(phase_map_image(ph, am, am.max_abs()), comp);
  paths.push_back(comp);
  return paths;
}

std::vector<std::array<int, 36>> polar_histogram_counts(const Tensor& phases,
                                                        const Tensor& amps,
                                                        const GroupMasks* masks) {
  if (phases.rank() != 3 || !phases.same_shape(amps))
    throw ShapeError("polar_histogram_counts: expected matching [C,H,W]");
  const int cn = phases.extent(0), h = phases.extent(1), w = phases.extent(2);
  const double thresh = 0.1 * amps.max_abs();

  auto bin_of = [](double phase) {
    double p = wrap_angle(phase);
    if (p < 0) p += kTwoPi;
    int b = static_cast<int>(p / kTwoPi * 36.0);
    return std::min(b, 35);
  };

  std::vector<std::array<int, 36>> counts;
  auto count_group = [&](const std::uint8_t* mask) {
    std::array<int, 36> bins{};
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        if (mask && !mask[static_cast<std::size_t>(i) * w + j]) continue;
        for (int c = 0; c < cn; ++c)
          if (amps.at(c, i, j) > thresh) ++bins[static_cast<std::size_t>(
              bin_of(phases.at(c, i, j)))];
      }
    return bins;
  };

  if (masks == nullptr || masks->groups.empty()) {
    counts.push_back(count_group(nullptr));
  } else {
    for (const auto& g : masks->groups) counts.push_back(count_group(g.mask.data()));
  }
  return counts;
}

void render_polar_histogram(const Tensor& phases, const Tensor& amps,
                            const GroupMasks* masks, const std::string& path) {
  const std::vector<std::array<int, 36>> counts =
      polar_histogram_counts(phases, amps, masks);
  int max_count = 0;
  for (const auto& bins : counts)
    for (int v : bins) max_count = std::max(max_count, v);

  const int size = 256;
  Image img;
  img.width = img.height = size;
  img.rgb.assign(static_cast<std::size_t>(size) * size * 3, 0);
  const double cx = size / 2.0, cy = size / 2.0;
  const double radius = size / 2.0 - 8.0;

  // group colors evenly spaced on the wheel
  std::vector<std::array<std::uint8_t, 3>> palette;
  for (std::size_t g = 0; g < counts.size(); ++g)
    palette.push_back(
        hsv_to_rgb(360.0 * static_cast<double>(g) / counts.size(), 0.9, 1.0));

  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double dx = j + 0.5 - cx, dy = i + 0.5 - cy;
      const double r = std::hypot(dx, dy);
      if (r > radius + 1.5) continue;
      if (r > radius - 0.5) {  // circle outline
        std::uint8_t* p = img.px(i, j);
        p[0] = p[1] = p[2] = 90;
        continue;
      }
      if (max_count == 0) continue;  // blank plot inside the axes
      // screen y grows downward; flip so positive phases go counterclockwise
      double ang = std::atan2(-dy, dx);
      if (ang < 0) ang += kTwoPi;
      const int b = std::min(35, static_cast<int>(ang / kTwoPi * 36.0));
      // draw the shortest covering bar on top
      int best = -1;
      double best_len = 2.0;
      for (std::size_t g = 0; g < counts.size(); ++g) {
        const double len =
            static_cast<double>(counts[g][static_cast<std::size_t>(b)]) / max_count;
        if (r <= len * radius && len < best_len) {
          best = static_cast<int>(g);
          best_len = len;
        }
      }
      if (best >= 0) {
        const auto& col = palette[static_cast<std::size_t>(best)];
        std::copy(col.begin(), col.end(), img.px(i, j));
      }
    }
  write_ppm(img, path);
}

}  // namespace kpx::render
