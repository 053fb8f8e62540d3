#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kpx/objectives.hpp"
#include "kpx/tensor.hpp"

namespace kpx::render {

using objectives::GroupMasks;

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

  std::uint8_t* px(int i, int j) {
    return rgb.data() + 3 * (static_cast<std::size_t>(i) * width + j);
  }
  const std::uint8_t* px(int i, int j) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(i) * width + j);
  }
  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && rgb == o.rgb;
  }
};

/// Binary PPM (P6), 8-bit, maxval 255.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

/// h in [0, 360), s and v in [0, 1].
std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v);

/// Phase-to-hue convention: phase 0 -> hue 0, increasing phase walks the
/// color wheel once per turn.
double phase_to_hue(double phase);

/// One channel: hue = phase, value = amplitude / amp_max (black at zero).
Image phase_map_image(const Tensor& phase, const Tensor& amp, double amp_max);

/// Writes <prefix>channel_<c>.ppm per channel plus <prefix>composite.ppm
/// (amplitude-weighted resultant across channels). Returns written paths.
std::vector<std::string> render_phase_map(const Tensor& phases,
                                          const Tensor& amps,
                                          const std::string& out_prefix);

/// 36-bin angular histogram of phases at active units (a > 0.1 * max a),
/// one row per mask group; without masks, a single all-active group.
std::vector<std::array<int, 36>> polar_histogram_counts(const Tensor& phases,
                                                        const Tensor& amps,
                                                        const GroupMasks* masks);

/// Polar bar plot of the histogram, one color per group.
void render_polar_histogram(const Tensor& phases, const Tensor& amps,
                            const GroupMasks* masks, const std::string& path);

}  // namespace kpx::render
