#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>

#include "kpx/complex_ops.hpp"
#include "kpx/rng.hpp"
#include "test_util.hpp"

using namespace kpx;
using namespace kpxtest;

static ComplexField random_field(std::vector<int> shape, Rng& rng) {
  ComplexField z;
  z.amplitude = random_tensor(shape, rng, 0.0, 2.0);
  z.phase = Tensor(shape);
  for (std::size_t i = 0; i < z.phase.size(); ++i) z.phase[i] = rng.phase();
  return z;
}

static LayerBlock random_dense_block(int m, int n, Rng& rng) {
  LayerBlock b;
  b.kind = LayerBlock::Kind::kDense;
  b.weight = random_tensor({m, n}, rng);
  return b;
}

TEST_CASE("polar/cartesian conversions") {
  SUBCASE("unit angle zero") {
    ComplexField z{Tensor({1}, 1.0), Tensor({1}, 0.0)};
    Tensor re, im;
    to_cartesian(z, re, im);
    CHECK(re.at(0) == 1.0);
    CHECK(im.at(0) == 0.0);
  }
  SUBCASE("amplitude 2 at pi/2") {
    ComplexField z{Tensor({1}, 2.0), Tensor({1}, kPi / 2)};
    Tensor re, im;
    to_cartesian(z, re, im);
    CHECK(std::fabs(re.at(0)) <= 1e-15);
    CHECK(std::fabs(im.at(0) - 2.0) <= 1e-15);
  }
  SUBCASE("origin convention") {
    ComplexField z = to_polar(Tensor({1}), Tensor({1}));
    CHECK(z.amplitude.at(0) == 0.0);
    CHECK(z.phase.at(0) == 0.0);
  }
  SUBCASE("1000 random round trips") {
    Rng rng(21);
    ComplexField z = random_field({1000}, rng);
    Tensor re, im;
    to_cartesian(z, re, im);
    ComplexField back = to_polar(re, im);
    for (int i = 0; i < 1000; ++i) {
      CHECK(std::fabs(back.amplitude.at(i) - z.amplitude.at(i)) <= 1e-12);
      if (z.amplitude.at(i) > 1e-9)
        CHECK(std::fabs(wrap_angle(back.phase.at(i) - z.phase.at(i))) <= 1e-12);
    }
  }
}

TEST_CASE("complex_linear") {
  Rng rng(22);
  SUBCASE("real input reduces to the real op") {
    Tensor x = random_tensor({6}, rng, 0.1, 1.0);
    ComplexField z{x, Tensor({6})};
    LayerBlock b = random_dense_block(4, 6, rng);
    ComplexField out = complex_linear(z, b);
    Tape t;
    const Tensor& ref = t.value(t.matvec(t.leaf(b.weight), t.leaf(x)));
    for (int i = 0; i < 4; ++i) {
      CHECK(out.amplitude.at(i) == doctest::Approx(std::fabs(ref.at(i))).epsilon(1e-12));
      if (ref.at(i) >= 0)
        CHECK(std::fabs(out.phase.at(i)) <= 1e-12);
      else
        CHECK(std::fabs(out.phase.at(i) - kPi) <= 1e-12);
    }
  }
  SUBCASE("zero weights give zero amplitude") {
    ComplexField z = random_field({5}, rng);
    LayerBlock b;
    b.kind = LayerBlock::Kind::kDense;
    b.weight = Tensor({3, 5});
    ComplexField out = complex_linear(z, b);
    CHECK(out.amplitude.max_abs() == 0.0);
  }
  SUBCASE("random case matches std::complex oracle") {
    ComplexField z = random_field({8}, rng);
    LayerBlock b = random_dense_block(5, 8, rng);
    ComplexField out = complex_linear(z, b);
    for (int i = 0; i < 5; ++i) {
      std::complex<double> acc(0.0, 0.0);
      for (int j = 0; j < 8; ++j)
        acc += b.weight.at(i, j) *
               std::polar(z.amplitude.at(j), z.phase.at(j));
      CHECK(std::fabs(out.amplitude.at(i) - std::abs(acc)) <= 1e-12);
      if (std::abs(acc) > 1e-9)
        CHECK(std::fabs(wrap_angle(out.phase.at(i) - std::arg(acc))) <= 1e-12);
    }
  }
}

TEST_CASE("amplitude_gate") {
  Rng rng(23);
  SUBCASE("synchronized input with non-negative drive gives exactly f_w(m)") {
    Tensor m = random_tensor({6}, rng, 0.2, 1.0);
    const double phi = 0.83;
    ComplexField z{m, Tensor({6}, phi)};
    LayerBlock b = random_dense_block(4, 6, rng);
    for (std::size_t i = 0; i < b.weight.size(); ++i)
      b.weight[i] = std::fabs(b.weight[i]);  // ensures f_w(m) >= 0
    ComplexField z1 = complex_linear(z, b);
    Tensor m2 = amplitude_gate(z, z1, b);
    Tape t;
    const Tensor& chi = t.value(t.matvec(t.leaf(b.weight), t.leaf(m)));
    for (int i = 0; i < 4; ++i)
      CHECK(m2.at(i) == doctest::Approx(chi.at(i)).epsilon(1e-12));
  }
  SUBCASE("anti-phase cancellation halves the gate") {
    // Two equal-amplitude units in anti-phase, one output unit with equal
    // positive weights: |z1| = 0, so m2 = chi / 2.
    ComplexField z{Tensor({2}, 1.0),
                   Tensor({2}, std::vector<double>{0.3, 0.3 + kPi})};
    LayerBlock b;
    b.kind = LayerBlock::Kind::kDense;
    b.weight = Tensor({1, 2}, 0.7);
    ComplexField z1 = complex_linear(z, b);
    CHECK(z1.amplitude.at(0) <= 1e-12);
    Tensor m2 = amplitude_gate(z, z1, b);
    const double chi = 0.7 * 2.0;
    CHECK(m2.at(0) == doctest::Approx(0.5 * chi).epsilon(1e-12));
  }
  SUBCASE("random case matches direct recomputation") {
    ComplexField z = random_field({7}, rng);
    LayerBlock b = random_dense_block(4, 7, rng);
    ComplexField z1 = complex_linear(z, b);
    Tensor m2 = amplitude_gate(z, z1, b);
    for (int i = 0; i < 4; ++i) {
      double chi = 0.0;
      std::complex<double> fz(0.0, 0.0);
      for (int j = 0; j < 7; ++j) {
        chi += b.weight.at(i, j) * z.amplitude.at(j);
        fz += b.weight.at(i, j) * std::polar(z.amplitude.at(j), z.phase.at(j));
      }
      CHECK(std::fabs(m2.at(i) - 0.5 * (std::abs(fz) + chi)) <= 1e-12);
    }
  }
  SUBCASE("gate bound and monotonicity") {
    ComplexField z = random_field({7}, rng);
    LayerBlock b = random_dense_block(4, 7, rng);
    for (std::size_t i = 0; i < b.weight.size(); ++i)
      b.weight[i] = std::fabs(b.weight[i]);
    ComplexField z1 = complex_linear(z, b);
    Tensor m2 = amplitude_gate(z, z1, b);
    Tape t;
    const Tensor& chi = t.value(t.matvec(t.leaf(b.weight), t.leaf(z.amplitude)));
    for (int i = 0; i < 4; ++i)
      CHECK(m2.at(i) <= 0.5 * (z1.amplitude.at(i) + chi.at(i)) + 1e-12);
    // chi with non-negative weights is monotone in the input amplitudes
    ComplexField zbig = z;
    for (std::size_t i = 0; i < zbig.amplitude.size(); ++i)
      zbig.amplitude[i] += 0.5;
    const Tensor& chi2 =
        t.value(t.matvec(t.leaf(b.weight), t.leaf(zbig.amplitude)));
    for (int i = 0; i < 4; ++i) CHECK(chi2.at(i) >= chi.at(i) - 1e-12);
  }
}

TEST_CASE("block_forward") {
  Rng rng(24);
  SUBCASE("zero input gives zero amplitude") {
    ComplexField z{Tensor({2, 4, 4}), Tensor({2, 4, 4})};
    LayerBlock b;
    b.kind = LayerBlock::Kind::kConv;
    b.weight = random_tensor({2, 2, 3, 3}, rng);
    b.stride = 1;
    b.padding = 1;
    ComplexField out = block_forward(z, b, true);
    CHECK(out.amplitude.max_abs() == 0.0);
  }
  SUBCASE("global phase equivariance") {
    ComplexField z = random_field({2, 6, 6}, rng);
    LayerBlock b;
    b.kind = LayerBlock::Kind::kConv;
    b.weight = random_tensor({3, 2, 3, 3}, rng);
    b.stride = 1;
    b.padding = 1;
    ComplexField base = block_forward(z, b, true);
    for (double phi : {0.7, -2.1, 3.0}) {
      ComplexField zr = z;
      for (std::size_t i = 0; i < zr.phase.size(); ++i)
        zr.phase[i] = wrap_angle(zr.phase[i] + phi);
      ComplexField rot = block_forward(zr, b, true);
      CHECK(max_abs_diff(rot.amplitude, base.amplitude) <= 1e-10);
      for (std::size_t i = 0; i < rot.phase.size(); ++i)
        if (base.amplitude[i] > 1e-9)
          CHECK(std::fabs(wrap_angle(rot.phase[i] - base.phase[i] - phi)) <=
                1e-10);
    }
  }
  SUBCASE("amplitudes non-negative after relu block") {
    ComplexField z = random_field({3, 5, 5}, rng);
    LayerBlock b;
    b.kind = LayerBlock::Kind::kConv;
    b.weight = random_tensor({3, 3, 3, 3}, rng);
    b.padding = 1;
    ComplexField out = block_forward(z, b, true);
    for (std::size_t i = 0; i < out.amplitude.size(); ++i)
      CHECK(out.amplitude[i] >= 0.0);
  }
  SUBCASE("stride-2 block matches staged oracle") {
    ComplexField z = random_field({8, 32, 32}, rng);
    LayerBlock b;
    b.kind = LayerBlock::Kind::kConv;
    b.weight = random_tensor({8, 8, 3, 3}, rng);
    b.stride = 2;
    b.padding = 1;
    ComplexField out = block_forward(z, b, true);
    CHECK(out.amplitude.shape() == std::vector<int>{8, 16, 16});

    // Staged oracle: Eq. 3 via complex arithmetic, Eq. 4 gate, Eq. 5 norm.
    Tensor re({8, 32, 32}), im({8, 32, 32});
    to_cartesian(z, re, im);
    Tensor re1 = conv2d_oracle(re, b.weight, 2, 1);
    Tensor im1 = conv2d_oracle(im, b.weight, 2, 1);
    Tensor chi = conv2d_oracle(z.amplitude, b.weight, 2, 1);
    Tensor m2({8, 16, 16});
    for (std::size_t i = 0; i < m2.size(); ++i)
      m2[i] = 0.5 * (std::hypot(re1[i], im1[i]) + chi[i]);
    Tape t;
    const Tensor& m3 = t.value(t.relu(t.instance_norm(t.leaf(m2), 1e-5)));
    for (std::size_t i = 0; i < m3.size(); ++i) {
      CHECK(std::fabs(out.amplitude[i] - m3[i]) <= 1e-10);
      if (m3[i] > 1e-9) {
        const double want = std::atan2(im1[i], re1[i]);
        CHECK(std::fabs(wrap_angle(out.phase[i] - want)) <= 1e-10);
      }
    }
  }
  SUBCASE("constant-phase amplitude path matches the real block") {
    // With non-negative weights and amplitudes, f_w(m) >= 0 everywhere, so
    // the gate path coincides and the amplitude path must equal the real
    // block ReLU(IN(f_w(m))) exactly.
    Rng rng2(77);
    Tensor m = random_tensor({2, 5, 5}, rng2, 0.0, 1.0);
    ComplexField z{m, Tensor({2, 5, 5}, 1.1)};
    LayerBlock b;
    b.kind = LayerBlock::Kind::kConv;
    b.weight = random_tensor({2, 2, 3, 3}, rng2, 0.0, 1.0);
    b.padding = 1;
    ComplexField out = block_forward(z, b, true);
    Tape t;
    const Tensor& realout = t.value(t.relu(t.instance_norm(
        t.conv2d(t.leaf(m), t.leaf(b.weight), 1, 1), 1e-5)));
    CHECK(max_abs_diff(out.amplitude, realout) <= 1e-10);
  }
}

TEST_CASE("block gradients pass finite differences") {
  Rng rng(25);
  Tensor re = random_tensor({2, 4, 4}, rng);
  Tensor im = random_tensor({2, 4, 4}, rng);
  Tensor mag(re.shape());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(re[i], im[i]);
  Tensor w = random_tensor({2, 2, 3, 3}, rng);
  FdReport rep = fd_check(
      {re, im, mag, w},
      [](Tape& t, const std::vector<Var>& v) {
        LayerBlockVars b{LayerBlock::Kind::kConv, v[3], 1, 1};
        BlockOutVars out =
            block_forward_t(t, b, ComplexVars{v[0], v[1]}, v[2], true);
        return t.sum(t.add(t.mul(out.re, out.re), t.sin(out.im)));
      },
      1e-5, 1e-5, 16);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_err <= 1e-4);
}
