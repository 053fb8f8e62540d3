// Hot loops for convolution and its adjoints. This translation unit is built
// with value-safe reassociation flags (see CMakeLists) so the compiler can
// vectorize the reductions; results stay deterministic for a fixed binary.
//
// The stride-1 paths keep one output row in vector registers and read from a
// zero-padded scratch copy of the input, so the inner loops carry no boundary
// branches. Everything else falls back to straightforward loops.

#include "kpx/conv_kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace kpx::detail {

namespace {

#if defined(__AVX512F__)
constexpr int kLanes = 8;
#elif defined(__AVX__)
constexpr int kLanes = 4;
#else
constexpr int kLanes = 2;
#endif
typedef double vd __attribute__((vector_size(kLanes * 8)));

inline vd load_u(const double* p) {
  vd v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store_u(double* p, vd v) { std::memcpy(p, &v, sizeof(v)); }

void check_conv_args(const Tensor& x, const Tensor& k, int stride, int pad_h,
                     int pad_w) {
  if (x.rank() != 3)
    throw ShapeError("conv2d: input must be rank 3, got " + x.shape_str());
  if (k.rank() != 4)
    throw ShapeError("conv2d: kernel must be rank 4, got " + k.shape_str());
  if (k.extent(2) % 2 == 0 || k.extent(3) % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd, got " + k.shape_str());
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw ShapeError("conv2d: padding must be >= 0");
}

// Copies x into a zero-framed buffer of row width wp, offset by (pad_h, pad_w),
// with extra column slack so vector loads never run off a row.
std::vector<double> pad_field(const Tensor& x, int pad_h, int pad_w, int wp,
                              int hp) {
  const int cn = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::vector<double> out(static_cast<std::size_t>(cn) * hp * wp, 0.0);
  for (int c = 0; c < cn; ++c)
    for (int i = 0; i < h; ++i) {
      const double* src = &x.at(c, i, 0);
      double* dst =
          out.data() + (static_cast<std::size_t>(c) * hp + i + pad_h) * wp + pad_w;
      std::memcpy(dst, src, sizeof(double) * static_cast<std::size_t>(w));
    }
  return out;
}

constexpr int kMaxTiles = 8;  // fast path covers output rows up to 8*kLanes

// Stride-1 forward with the output row in registers.
void conv2d_forward_s1(const Tensor& x, const Tensor& k, int pad_h, int pad_w,
                       Tensor& out) {
  const int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int co_n = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  const int ho = h + 2 * pad_h - kh + 1;
  const int wo = w + 2 * pad_w - kw + 1;
  out = Tensor({co_n, ho, wo});

  const int tiles = (wo + kLanes - 1) / kLanes;
  const int hp = h + 2 * pad_h;
  const int wp = w + 2 * pad_w + kw + kMaxTiles * kLanes;
  const std::vector<double> xp = pad_field(x, pad_h, pad_w, wp, hp);

  const double* kd = k.data();
  for (int co = 0; co < co_n; ++co) {
    for (int oi = 0; oi < ho; ++oi) {
      vd acc[kMaxTiles];
      for (int t = 0; t < tiles; ++t) acc[t] = vd{};
      for (int ci = 0; ci < ci_n; ++ci) {
        const double* chan = xp.data() + static_cast<std::size_t>(ci) * hp * wp;
        const double* krowbase =
            kd + (static_cast<std::size_t>(co) * ci_n + ci) * kh * kw;
        for (int ki = 0; ki < kh; ++ki) {
          const double* xrow = chan + static_cast<std::size_t>(oi + ki) * wp;
          const double* krow = krowbase + static_cast<std::size_t>(ki) * kw;
          for (int kj = 0; kj < kw; ++kj) {
            const double* xs = xrow + kj;
            const vd wv = vd{} + krow[kj];
            switch (tiles) {
              case 4:  // common case: 32-wide rows on AVX-512
                acc[0] += wv * load_u(xs);
                acc[1] += wv * load_u(xs + kLanes);
                acc[2] += wv * load_u(xs + 2 * kLanes);
                acc[3] += wv * load_u(xs + 3 * kLanes);
                break;
              default:
                for (int t = 0; t < tiles; ++t)
                  acc[t] += wv * load_u(xs + t * kLanes);
            }
          }
        }
      }
      double tmp[kMaxTiles * kLanes];
      for (int t = 0; t < tiles; ++t) store_u(tmp + t * kLanes, acc[t]);
      std::memcpy(&out.at(co, oi, 0), tmp,
                  sizeof(double) * static_cast<std::size_t>(wo));
    }
  }
}

// Stride-1 kernel gradient: for every output element, a broadcast FMA into a
// register-resident kw-wide accumulator.
void conv2d_kernel_grad_s1(const Tensor& x, const Tensor& gout, int pad_h,
                           int pad_w, Tensor& gk) {
  const int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int co_n = gout.extent(0), ho = gout.extent(1), wo = gout.extent(2);
  const int kh = gk.extent(2), kw = gk.extent(3);

  const int ktiles = (kw + kLanes - 1) / kLanes;
  const int hp = h + 2 * pad_h;
  const int wp = w + 2 * pad_w + kw + kMaxTiles * kLanes;
  const std::vector<double> xp = pad_field(x, pad_h, pad_w, wp, hp);

  for (int co = 0; co < co_n; ++co) {
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* chan = xp.data() + static_cast<std::size_t>(ci) * hp * wp;
      for (int ki = 0; ki < kh; ++ki) {
        vd acc[kMaxTiles];
        for (int t = 0; t < ktiles; ++t) acc[t] = vd{};
        for (int oi = 0; oi < ho; ++oi) {
          const double* xrow = chan + static_cast<std::size_t>(oi + ki) * wp;
          const double* grow = &gout.at(co, oi, 0);
          for (int oj = 0; oj < wo; ++oj) {
            const vd gv = vd{} + grow[oj];
            const double* xs = xrow + oj;
            if (ktiles == 1) {
              acc[0] += gv * load_u(xs);
            } else if (ktiles == 2) {
              acc[0] += gv * load_u(xs);
              acc[1] += gv * load_u(xs + kLanes);
            } else {
              for (int t = 0; t < ktiles; ++t)
                acc[t] += gv * load_u(xs + t * kLanes);
            }
          }
        }
        double tmp[kMaxTiles * kLanes];
        for (int t = 0; t < ktiles; ++t) store_u(tmp + t * kLanes, acc[t]);
        std::memcpy(&gk.at(co, ci, ki, 0), tmp,
                    sizeof(double) * static_cast<std::size_t>(kw));
      }
    }
  }
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& k, int stride, int pad_h,
                    int pad_w, Tensor& out) {
  check_conv_args(x, k, stride, pad_h, pad_w);
  const int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int co_n = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  if (k.extent(1) != ci_n)
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.extent(1)) +
                     " input channels, got " + std::to_string(ci_n));
  if (h + 2 * pad_h < kh || w + 2 * pad_w < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int ho = (h + 2 * pad_h - kh) / stride + 1;
  const int wo = (w + 2 * pad_w - kw) / stride + 1;

  if (stride == 1 && wo <= kMaxTiles * kLanes) {
    conv2d_forward_s1(x, k, pad_h, pad_w, out);
    return;
  }

  out = Tensor({co_n, ho, wo});
  std::vector<double> acc(static_cast<std::size_t>(wo));
  const double* xd = x.data();
  const double* kd = k.data();
  for (int co = 0; co < co_n; ++co) {
    for (int oi = 0; oi < ho; ++oi) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ci = 0; ci < ci_n; ++ci) {
        for (int ki = 0; ki < kh; ++ki) {
          const int ii = oi * stride + ki - pad_h;
          if (ii < 0 || ii >= h) continue;
          const double* xrow = xd + (static_cast<std::size_t>(ci) * h + ii) * w;
          const double* krow =
              kd + ((static_cast<std::size_t>(co) * ci_n + ci) * kh + ki) * kw;
          for (int kj = 0; kj < kw; ++kj) {
            const double kv = krow[kj];
            if (stride == 1) {
              const int shift = kj - pad_w;
              const int lo = std::max(0, -shift);
              const int hi = std::min(wo, w - shift);
              const double* xs = xrow + shift;
              for (int oj = lo; oj < hi; ++oj)
                acc[static_cast<std::size_t>(oj)] += kv * xs[oj];
            } else {
              for (int oj = 0; oj < wo; ++oj) {
                const int jj = oj * stride + kj - pad_w;
                if (jj >= 0 && jj < w)
                  acc[static_cast<std::size_t>(oj)] += kv * xrow[jj];
              }
            }
          }
        }
      }
      double* orow = out.data() + (static_cast<std::size_t>(co) * ho + oi) * wo;
      std::memcpy(orow, acc.data(), sizeof(double) * static_cast<std::size_t>(wo));
    }
  }
}

void conv2d_input_grad(const Tensor& gout, const Tensor& k, int stride,
                       int pad_h, int pad_w, Tensor& gx) {
  const int co_n = k.extent(0), ci_n = k.extent(1), kh = k.extent(2),
            kw = k.extent(3);
  const int ho = gout.extent(1), wo = gout.extent(2);
  const int h = gx.extent(1), w = gx.extent(2);
  if (gout.extent(0) != co_n || gx.extent(0) != ci_n)
    throw ShapeError("conv2d_input_grad: channel mismatch");

  if (stride == 1) {
    // Equivalent to a forward correlation with the channel-transposed,
    // spatially flipped kernel and complementary padding.
    Tensor kt({ci_n, co_n, kh, kw});
    for (int co = 0; co < co_n; ++co)
      for (int ci = 0; ci < ci_n; ++ci)
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj)
            kt.at(ci, co, kh - 1 - ki, kw - 1 - kj) = k.at(co, ci, ki, kj);
    conv2d_forward(gout, kt, 1, kh - 1 - pad_h, kw - 1 - pad_w, gx);
    return;
  }

  gx = Tensor({ci_n, h, w});
  for (int co = 0; co < co_n; ++co) {
    for (int oi = 0; oi < ho; ++oi) {
      for (int ki = 0; ki < kh; ++ki) {
        const int ii = oi * stride + ki - pad_h;
        if (ii < 0 || ii >= h) continue;
        for (int ci = 0; ci < ci_n; ++ci) {
          const double* krow = &k.at(co, ci, ki, 0);
          double* gxrow = &gx.at(ci, ii, 0);
          const double* grow = &gout.at(co, oi, 0);
          for (int oj = 0; oj < wo; ++oj) {
            const double g = grow[oj];
            if (g == 0.0) continue;
            const int base = oj * stride - pad_w;
            const int lo = std::max(0, -base);
            const int hi = std::min(kw, w - base);
            for (int kj = lo; kj < hi; ++kj) gxrow[base + kj] += g * krow[kj];
          }
        }
      }
    }
  }
}

void conv2d_kernel_grad(const Tensor& x, const Tensor& gout, int stride,
                        int pad_h, int pad_w, Tensor& gk) {
  const int ci_n = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int co_n = gout.extent(0), ho = gout.extent(1), wo = gout.extent(2);
  const int kh = gk.extent(2), kw = gk.extent(3);
  if (gk.extent(0) != co_n || gk.extent(1) != ci_n)
    throw ShapeError("conv2d_kernel_grad: channel mismatch");

  if (stride == 1 && kw <= kMaxTiles * kLanes && ho == h + 2 * pad_h - kh + 1 &&
      wo == w + 2 * pad_w - kw + 1) {
    conv2d_kernel_grad_s1(x, gout, pad_h, pad_w, gk);
    return;
  }

  gk.fill(0.0);
  for (int co = 0; co < co_n; ++co) {
    for (int ci = 0; ci < ci_n; ++ci) {
      for (int ki = 0; ki < kh; ++ki) {
        double* gkrow = &gk.at(co, ci, ki, 0);
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride + ki - pad_h;
          if (ii < 0 || ii >= h) continue;
          const double* grow = &gout.at(co, oi, 0);
          const double* xrow = &x.at(ci, ii, 0);
          for (int kj = 0; kj < kw; ++kj) {
            double s = 0.0;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride + kj - pad_w;
              if (jj >= 0 && jj < w) s += grow[oj] * xrow[jj];
            }
            gkrow[kj] += s;
          }
        }
      }
    }
  }
}

void matvec(const Tensor& w, const Tensor& x, Tensor& out) {
  if (w.rank() != 2 || x.rank() != 1)
    throw ShapeError("matvec: expected [M,N] and [N]");
  const int m = w.extent(0), n = w.extent(1);
  if (x.extent(0) != n)
    throw ShapeError("matvec: dimension mismatch " + w.shape_str() + " vs " +
                     x.shape_str());
  out = Tensor({m});
  const double* wd = w.data();
  const double* xd = x.data();
  for (int i = 0; i < m; ++i) {
    const double* row = wd + static_cast<std::size_t>(i) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j] * xd[j];
    out[static_cast<std::size_t>(i)] = s;
  }
}

void matvec_input_grad(const Tensor& w, const Tensor& g, Tensor& gx) {
  const int m = w.extent(0), n = w.extent(1);
  gx = Tensor({n});
  double* gxd = gx.data();
  const double* wd = w.data();
  for (int i = 0; i < m; ++i) {
    const double gi = g[static_cast<std::size_t>(i)];
    if (gi == 0.0) continue;
    const double* row = wd + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) gxd[j] += gi * row[j];
  }
}

void matvec_weight_grad(const Tensor& g, const Tensor& x, Tensor& gw) {
  const int m = g.extent(0), n = x.extent(0);
  gw = Tensor({m, n});
  double* gwd = gw.data();
  const double* xd = x.data();
  for (int i = 0; i < m; ++i) {
    const double gi = g[static_cast<std::size_t>(i)];
    double* row = gwd + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) row[j] = gi * xd[j];
  }
}

}  // namespace kpx::detail
