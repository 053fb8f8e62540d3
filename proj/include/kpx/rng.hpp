#pragma once

#include <cstdint>

#include "kpx/common.hpp"

namespace kpx {

/// Deterministic splitmix64 generator. Distributions are implemented by hand
/// so that streams are bit-reproducible across platforms and standard-library
/// versions. Independent streams are derived by hashing (seed, tag, a, b),
/// which keeps parallel sample generation order-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

  /// Stream constructor: hash-combines a master seed with a stream tag and up
  /// to two indices (e.g. epoch and sample index).
  static Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                    std::uint64_t b = 0);

  std::uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform phase in (-pi, pi].
  double phase();
  /// Standard normal via Box-Muller (second value cached).
  double normal();
  /// Uniform integer in [0, n). Requires n > 0.
  int uniform_int(int n);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stream tags (arbitrary distinct constants).
namespace rng_tag {
inline constexpr std::uint64_t kParamInit = 0x70617261;
inline constexpr std::uint64_t kPhaseInit = 0x70686173;
inline constexpr std::uint64_t kScene = 0x7363656e;
inline constexpr std::uint64_t kNoise = 0x6e6f6973;
inline constexpr std::uint64_t kShuffle = 0x73687566;
inline constexpr std::uint64_t kGlyph = 0x676c7970;
inline constexpr std::uint64_t kEvalPhase = 0x65766c70;
}  // namespace rng_tag

}  // namespace kpx
