#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kpx {

// Error taxonomy used across the library.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};
struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& m) : std::runtime_error(m) {}
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Wrap an angle to the principal interval (-pi, pi].
inline double wrap_angle(double x) {
  double y = std::remainder(x, kTwoPi);
  if (y <= -kPi) y += kTwoPi;
  return y;
}

}  // namespace kpx
