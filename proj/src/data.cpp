#include "kpx/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "kpx/threading.hpp"

namespace kpx::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CRC32
// ---------------------------------------------------------------------------

std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path,
                          std::size_t offset) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw FormatError(path + ": truncated at byte " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                             std::uint8_t(v >> 8), std::uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

DigitPool load_mnist_idx(const std::string& images_path,
                         const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw FormatError(images_path + ": cannot open");
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw FormatError(labels_path + ": cannot open");

  const std::uint32_t img_magic = read_u32_be(imgs, images_path, 0);
  if (img_magic != 0x00000803u)
    throw FormatError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
  const std::uint32_t n = read_u32_be(imgs, images_path, 4);
  const std::uint32_t rows = read_u32_be(imgs, images_path, 8);
  const std::uint32_t cols = read_u32_be(imgs, images_path, 12);

  const std::uint32_t lab_magic = read_u32_be(labs, labels_path, 0);
  if (lab_magic != 0x00000801u)
    throw FormatError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
  const std::uint32_t n_lab = read_u32_be(labs, labels_path, 4);
  if (n != n_lab)
    throw FormatError(images_path + ": image count " + std::to_string(n) +
                      " does not match label count " + std::to_string(n_lab));

  DigitPool pool;
  pool.reserve(n);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!imgs)
      throw FormatError(images_path + ": truncated at byte " +
                        std::to_string(16 + std::size_t(i) * buf.size()));
    char lab;
    labs.read(&lab, 1);
    if (!labs)
      throw FormatError(labels_path + ": truncated at byte " +
                        std::to_string(8 + i));
    const int cls = static_cast<std::uint8_t>(lab);
    if (cls > 9)
      throw FormatError(labels_path + ": label out of range at byte " +
                        std::to_string(8 + i));
    Tensor img({static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t p = 0; p < buf.size(); ++p)
      img[p] = static_cast<double>(buf[p]) / 255.0;
    pool.emplace_back(std::move(img), cls);
  }
  return pool;
}

void save_mnist_idx(const DigitPool& pool, const std::string& images_path,
                    const std::string& labels_path) {
  if (pool.empty()) throw ContractError("save_mnist_idx: empty pool");
  const int rows = pool.front().first.extent(0);
  const int cols = pool.front().first.extent(1);
  std::ofstream imgs(images_path, std::ios::binary);
  std::ofstream labs(labels_path, std::ios::binary);
  if (!imgs || !labs) throw FormatError("save_mnist_idx: cannot open output");
  write_u32_be(imgs, 0x00000803u);
  write_u32_be(imgs, static_cast<std::uint32_t>(pool.size()));
  write_u32_be(imgs, static_cast<std::uint32_t>(rows));
  write_u32_be(imgs, static_cast<std::uint32_t>(cols));
  write_u32_be(labs, 0x00000801u);
  write_u32_be(labs, static_cast<std::uint32_t>(pool.size()));
  for (const auto& [img, cls] : pool) {
    for (std::size_t p = 0; p < img.size(); ++p) {
      const double v = std::min(1.0, std::max(0.0, img[p]));
      const std::uint8_t b = static_cast<std::uint8_t>(std::lround(v * 255.0));
      imgs.write(reinterpret_cast<const char*>(&b), 1);
    }
    const std::uint8_t c = static_cast<std::uint8_t>(cls);
    labs.write(reinterpret_cast<const char*>(&c), 1);
  }
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

Tensor resize_bilinear(const Tensor& src, int out_h, int out_w) {
  const int h = src.extent(0), w = src.extent(1);
  Tensor out({out_h, out_w});
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      const double sy = (i + 0.5) * h / out_h - 0.5;
      const double sx = (j + 0.5) * w / out_w - 0.5;
      const int y0 = std::max(0, std::min(h - 1, static_cast<int>(std::floor(sy))));
      const int x0 = std::max(0, std::min(w - 1, static_cast<int>(std::floor(sx))));
      const int y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
      const double fy = std::min(1.0, std::max(0.0, sy - y0));
      const double fx = std::min(1.0, std::max(0.0, sx - x0));
      out.at(i, j) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                     fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  return out;
}

int digit_box_size(int n_digits) { return n_digits <= 3 ? 18 : 12; }

namespace {

constexpr int kScene = 32;
constexpr double kActive = 0.1;

using Bitmap = std::vector<std::uint8_t>;  // kScene*kScene

Bitmap active_bitmap(const Tensor& digit, int r0, int c0) {
  Bitmap b(kScene * kScene, 0);
  const int ds = digit.extent(0);
  for (int i = 0; i < ds; ++i)
    for (int j = 0; j < ds; ++j)
      if (digit.at(i, j) > kActive)
        b[static_cast<std::size_t>(r0 + i) * kScene + c0 + j] = 1;
  return b;
}

int bitmap_count(const Bitmap& b) {
  int n = 0;
  for (auto v : b) n += v;
  return n;
}

double pair_overlap(const Bitmap& a, const Bitmap& b) {
  int inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) inter += a[i] & b[i];
  const int denom = std::min(bitmap_count(a), bitmap_count(b));
  return denom > 0 ? static_cast<double>(inter) / denom : 0.0;
}

}  // namespace

SceneSample generate_scene(const DigitPool& pool, const DatasetSpec& spec,
                           Rng& rng) {
  if (pool.empty()) throw ContractError("generate_scene: empty digit pool");
  if (spec.n_digits < 2 || spec.n_digits > 9)
    throw ContractError("generate_scene: n_digits must be in [2,9]");

  std::array<std::vector<int>, 10> by_class;
  for (int i = 0; i < static_cast<int>(pool.size()); ++i)
    by_class[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)].second)]
        .push_back(i);

  // Distinct classes, drawn uniformly among the classes present in the pool.
  std::vector<int> classes_avail;
  for (int c = 0; c < 10; ++c)
    if (!by_class[static_cast<std::size_t>(c)].empty()) classes_avail.push_back(c);
  if (static_cast<int>(classes_avail.size()) < spec.n_digits)
    throw ContractError("generate_scene: pool has fewer classes than n_digits");

  const int ds = digit_box_size(spec.n_digits);
  std::vector<int> classes;
  std::vector<Tensor> digits;
  for (int k = 0; k < spec.n_digits; ++k) {
    int cls;
    do {
      cls = classes_avail[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(classes_avail.size())))];
    } while (std::find(classes.begin(), classes.end(), cls) != classes.end());
    classes.push_back(cls);
    const auto& ids = by_class[static_cast<std::size_t>(cls)];
    const Tensor& src =
        pool[static_cast<std::size_t>(
                 ids[static_cast<std::size_t>(rng.uniform_int(
                     static_cast<int>(ids.size())))])]
            .first;
    digits.push_back(resize_bilinear(src, ds, ds));
  }

  const int span = kScene - ds;          // valid corner range [0, span]
  const int quad = span / 2;             // upper-left quadrant corner range
  std::vector<std::pair<int, int>> pos;
  std::vector<Bitmap> active;

  for (int k = 0; k < spec.n_digits; ++k) {
    bool placed = false;
    const int budget = k == 0 ? 1 : 1000;
    for (int attempt = 0; attempt < budget && !placed; ++attempt) {
      int r0, c0;
      if (k == 0) {
        r0 = rng.uniform_int(quad + 1);
        c0 = rng.uniform_int(quad + 1);
      } else {
        r0 = rng.uniform_int(span + 1);
        c0 = rng.uniform_int(span + 1);
      }
      Bitmap cand = active_bitmap(digits[static_cast<std::size_t>(k)], r0, c0);
      if (bitmap_count(cand) == 0) break;  // blank digit, resample the scene
      bool ok = true;
      for (const auto& prev : active)
        if (pair_overlap(cand, prev) > spec.max_overlap) {
          ok = false;
          break;
        }
      if (ok) {
        pos.emplace_back(r0, c0);
        active.push_back(std::move(cand));
        placed = true;
      }
    }
    if (!placed)
      throw GenerationError("generate_scene: placement budget exhausted for digit " +
                            std::to_string(k));
  }

  SceneSample s;
  s.image = Tensor({kScene, kScene});
  for (int k = 0; k < spec.n_digits; ++k) {
    const auto [r0, c0] = pos[static_cast<std::size_t>(k)];
    const Tensor& d = digits[static_cast<std::size_t>(k)];
    for (int i = 0; i < ds; ++i)
      for (int j = 0; j < ds; ++j)
        s.image.at(r0 + i, c0 + j) =
            std::max(s.image.at(r0 + i, c0 + j), d.at(i, j));
  }
  // keep pixel values exactly f32-representable for the container round trip
  for (std::size_t i = 0; i < s.image.size(); ++i)
    s.image[i] = static_cast<double>(static_cast<float>(s.image[i]));

  // Masks partition the active set by exact digit-coverage: singleton
  // coverage forms the digit groups, coverage sets of size >= 2 form one
  // overlap group each.
  const int n = spec.n_digits;
  std::vector<Bitmap> digit_masks(static_cast<std::size_t>(n),
                                  Bitmap(kScene * kScene, 0));
  std::map<std::vector<int>, Bitmap> overlap_masks;
  for (int p = 0; p < kScene * kScene; ++p) {
    std::vector<int> cover;
    for (int k = 0; k < n; ++k)
      if (active[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)])
        cover.push_back(k);
    if (cover.empty()) continue;
    if (cover.size() == 1) {
      digit_masks[static_cast<std::size_t>(cover[0])][static_cast<std::size_t>(p)] = 1;
    } else {
      auto it = overlap_masks.find(cover);
      if (it == overlap_masks.end())
        it = overlap_masks.emplace(cover, Bitmap(kScene * kScene, 0)).first;
      it->second[static_cast<std::size_t>(p)] = 1;
    }
  }
  for (int k = 0; k < n; ++k) {
    GroupMask g;
    g.kind = GroupKind::kDigit;
    g.height = kScene;
    g.width = kScene;
    g.mask = digit_masks[static_cast<std::size_t>(k)];
    if (g.pixel_count() == 0)
      throw GenerationError("generate_scene: digit fully occluded");
    s.masks.groups.push_back(std::move(g));
  }
  for (auto& [cover, bm] : overlap_masks) {
    GroupMask g;
    g.kind = GroupKind::kOverlap;
    g.height = kScene;
    g.width = kScene;
    g.mask = std::move(bm);
    g.parents = cover;
    s.masks.groups.push_back(std::move(g));
  }

  s.label = Tensor({10});
  for (int cls : classes) s.label.at(cls) = 1.0;
  s.digit_classes = std::move(classes);
  s.positions = std::move(pos);
  double worst = 0.0;
  for (std::size_t a = 0; a < active.size(); ++a)
    for (std::size_t b = a + 1; b < active.size(); ++b)
      worst = std::max(worst, pair_overlap(active[a], active[b]));
  s.overlap_fraction = worst;
  return s;
}

SceneSample add_noise(const SceneSample& s, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ContractError("add_noise: sigma must be >= 0");
  SceneSample out = s;
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    const double v = out.image[i] + sigma * rng.normal();
    out.image[i] = static_cast<double>(
        static_cast<float>(std::min(1.0, std::max(0.0, v))));
  }
  return out;
}

Dataset generate_dataset(const DigitPool& pool, const DatasetSpec& spec) {
  Dataset ds;
  ds.spec = spec;
  ds.samples.resize(static_cast<std::size_t>(spec.n_samples));
  parallel_for_index(static_cast<std::size_t>(spec.n_samples), [&](std::size_t i) {
    SceneSample sample;
    bool done = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !done; ++attempt) {
      Rng rng = Rng::stream(spec.seed, rng_tag::kScene, i, attempt);
      try {
        sample = generate_scene(pool, spec, rng);
        done = true;
      } catch (const GenerationError&) {
      }
    }
    if (!done)
      throw GenerationError("generate_dataset: sample " + std::to_string(i) +
                            " failed after 100 scene attempts");
    if (spec.noise_sigma > 0.0) {
      Rng nrng = Rng::stream(spec.seed, rng_tag::kNoise, i);
      sample = add_noise(sample, spec.noise_sigma, nrng);
    }
    ds.samples[i] = std::move(sample);
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'P', 'X', 'D', 'A', 'T', 'A', '1'};

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 24));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  json spec_j{{"n_digits", ds.spec.n_digits},
              {"max_overlap", ds.spec.max_overlap},
              {"n_samples", ds.spec.n_samples},
              {"split", ds.spec.split},
              {"seed", ds.spec.seed},
              {"noise_sigma", ds.spec.noise_sigma}};
  json samples_j = json::array();
  for (const auto& s : ds.samples) {
    json groups = json::array();
    for (const auto& g : s.masks.groups) {
      json entry = json::array({static_cast<int>(g.kind)});
      for (int p : g.parents) entry.push_back(p);
      groups.push_back(entry);
    }
    json positions = json::array();
    for (auto [r, c] : s.positions) positions.push_back(json::array({r, c}));
    samples_j.push_back(json{{"classes", s.digit_classes},
                             {"positions", positions},
                             {"overlap", s.overlap_fraction},
                             {"groups", groups}});
  }
  json header{{"format", "KPXDATA1"},
              {"version", 1},
              {"spec", spec_j},
              {"count", ds.samples.size()},
              {"dtype", "f32"},
              {"image_shape", json::array({32, 32})},
              {"samples", samples_j}};
  const std::string htext = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 8);
  put_u32_le(bytes, static_cast<std::uint32_t>(htext.size()));
  bytes.insert(bytes.end(), htext.begin(), htext.end());
  for (const auto& s : ds.samples)
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      const float f = static_cast<float>(s.image[i]);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32_le(bytes, u);
    }
  for (const auto& s : ds.samples)
    for (const auto& g : s.masks.groups) {
      std::uint8_t acc = 0;
      int nb = 0;
      for (std::size_t p = 0; p < g.mask.size(); ++p) {
        acc |= static_cast<std::uint8_t>((g.mask[p] & 1) << (p % 8));
        if (p % 8 == 7) {
          bytes.push_back(acc);
          acc = 0;
        }
        ++nb;
      }
      (void)nb;
    }
  for (const auto& s : ds.samples)
    for (int c = 0; c < 10; ++c)
      bytes.push_back(static_cast<std::uint8_t>(s.label.at(c)));
  put_u32_le(bytes, crc32(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw FormatError(path + ": file too short");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError(path + ": bad magic at byte 0");
  const std::uint32_t want_crc = get_u32_le(bytes.data() + bytes.size() - 4);
  if (crc32(bytes.data(), bytes.size() - 4) != want_crc)
    throw FormatError(path + ": checksum mismatch");

  const std::uint32_t hlen = get_u32_le(bytes.data() + 8);
  if (12 + hlen + 4 > bytes.size())
    throw FormatError(path + ": header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header JSON: " + e.what());
  }
  if (header.value("format", "") != "KPXDATA1")
    throw FormatError(path + ": unknown format tag");

  Dataset ds;
  const json& spec_j = header.at("spec");
  ds.spec.n_digits = spec_j.at("n_digits").get<int>();
  ds.spec.max_overlap = spec_j.at("max_overlap").get<double>();
  ds.spec.n_samples = spec_j.at("n_samples").get<int>();
  ds.spec.split = spec_j.at("split").get<std::string>();
  ds.spec.seed = spec_j.at("seed").get<std::uint64_t>();
  ds.spec.noise_sigma = spec_j.at("noise_sigma").get<double>();

  const std::size_t count = header.at("count").get<std::size_t>();
  const json& samples_j = header.at("samples");
  if (samples_j.size() != count)
    throw FormatError(path + ": sample directory does not match count");

  std::size_t total_groups = 0;
  for (const auto& s : samples_j) total_groups += s.at("groups").size();
  const std::size_t images_bytes = count * 1024 * 4;
  const std::size_t masks_bytes = total_groups * 128;
  const std::size_t labels_bytes = count * 10;
  const std::size_t want_size =
      12 + hlen + images_bytes + masks_bytes + labels_bytes + 4;
  if (bytes.size() != want_size)
    throw FormatError(path + ": payload size mismatch (declared count " +
                      std::to_string(count) + ")");

  std::size_t off = 12 + hlen;
  ds.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img({32, 32});
    for (std::size_t p = 0; p < 1024; ++p) {
      const std::uint32_t u = get_u32_le(bytes.data() + off);
      off += 4;
      float f;
      std::memcpy(&f, &u, 4);
      img[p] = static_cast<double>(f);
    }
    ds.samples[i].image = std::move(img);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const json& sj = samples_j[i];
    for (const auto& entry : sj.at("groups")) {
      GroupMask g;
      g.kind = static_cast<GroupKind>(entry.at(0).get<int>());
      for (std::size_t k = 1; k < entry.size(); ++k)
        g.parents.push_back(entry[k].get<int>());
      g.height = 32;
      g.width = 32;
      g.mask.assign(1024, 0);
      for (std::size_t p = 0; p < 1024; ++p)
        g.mask[p] = (bytes[off + p / 8] >> (p % 8)) & 1;
      off += 128;
      ds.samples[i].masks.groups.push_back(std::move(g));
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    Tensor label({10});
    for (int c = 0; c < 10; ++c)
      label.at(c) = static_cast<double>(bytes[off++]);
    ds.samples[i].label = std::move(label);
  }
  for (std::size_t i = 0; i < count; ++i) {
    const json& sj = samples_j[i];
    ds.samples[i].digit_classes = sj.at("classes").get<std::vector<int>>();
    for (const auto& p : sj.at("positions"))
      ds.samples[i].positions.emplace_back(p[0].get<int>(), p[1].get<int>());
    ds.samples[i].overlap_fraction = sj.at("overlap").get<double>();
  }
  return ds;
}

}  // namespace kpx::data
