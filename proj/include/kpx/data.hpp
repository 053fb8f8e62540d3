#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kpx/objectives.hpp"
#include "kpx/rng.hpp"
#include "kpx/tensor.hpp"

namespace kpx::data {

using objectives::GroupKind;
using objectives::GroupMask;
using objectives::GroupMasks;

/// One 32x32 multi-digit scene with its multi-hot label and grouping masks.
struct SceneSample {
  Tensor image;  // [32,32], values in [0,1], exactly representable as f32
  Tensor label;  // [10] multi-hot
  GroupMasks masks;
  std::vector<int> digit_classes;
  std::vector<std::pair<int, int>> positions;  // top-left corner per digit
  double overlap_fraction = 0.0;               // max pairwise fraction
};

struct DatasetSpec {
  int n_digits = 2;
  double max_overlap = 0.0;
  int n_samples = 0;
  std::string split = "train";
  std::uint64_t seed = 1;
  double noise_sigma = 0.0;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<SceneSample> samples;
};

/// Pool of single-digit images (28x28 in [0,1]) with class labels.
using DigitPool = std::vector<std::pair<Tensor, int>>;

// ---- MNIST IDX files -------------------------------------------------------

/// Reads the standard IDX pair (magic 0x00000803 / 0x00000801, big-endian).
/// Pixels are scaled to [0,1]. Malformed input raises FormatError with the
/// offending byte offset.
DigitPool load_mnist_idx(const std::string& images_path,
                         const std::string& labels_path);

/// Writes a pool back out in the same IDX layout (values quantized to u8).
void save_mnist_idx(const DigitPool& pool, const std::string& images_path,
                    const std::string& labels_path);

// ---- Synthetic glyph corpus ------------------------------------------------

/// Procedural stroke-rendered digit, 28x28, jittered per draw. Used as a
/// self-contained stand-in pool when no MNIST files are available.
Tensor render_glyph(int digit_class, Rng& rng);

/// n_per_class jittered glyphs per class; `split` keys an independent stream.
DigitPool make_glyph_pool(int n_per_class, const std::string& split,
                          std::uint64_t seed);

// ---- Scene synthesis -------------------------------------------------------

/// Bilinear resize of a [h,w] image.
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

/// Digit box size used for a given scene arity (18 for <= 3 digits, else 12).
int digit_box_size(int n_digits);

/// Builds one scene: distinct classes, first digit in the upper-left
/// quadrant, the rest rejection-sampled under the overlap bound with full
/// containment. Throws GenerationError when the rejection budget runs out.
SceneSample generate_scene(const DigitPool& pool, const DatasetSpec& spec,
                           Rng& rng);

/// Deterministic parallel generation; sample i uses streams derived from
/// (spec.seed, i). Applies spec.noise_sigma when positive.
Dataset generate_dataset(const DigitPool& pool, const DatasetSpec& spec);

/// image' = clamp(image + N(0, sigma^2), 0, 1); masks and labels unchanged.
SceneSample add_noise(const SceneSample& s, double sigma, Rng& rng);

// ---- Container format ------------------------------------------------------

/// Single-file container: magic "KPXDATA1", u32 little-endian JSON header
/// length, UTF-8 JSON header, raw little-endian f32 images, bit-packed masks,
/// u8 labels, CRC32 trailer. save/load round-trips bitwise.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// CRC32 (polynomial 0xEDB88320) used by the container and checkpoint files.
std::uint32_t crc32(const std::uint8_t* data, std::size_t n,
                    std::uint32_t seed = 0);

}  // namespace kpx::data
