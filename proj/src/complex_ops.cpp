#include "kpx/complex_ops.hpp"

#include <cmath>

namespace kpx {

ComplexField to_polar(const Tensor& re, const Tensor& im) {
  if (!re.same_shape(im))
    throw ShapeError("to_polar: shape mismatch " + re.shape_str() + " vs " +
                     im.shape_str());
  ComplexField z{Tensor(re.shape()), Tensor(re.shape())};
  for (std::size_t i = 0; i < re.size(); ++i) {
    const double m = std::hypot(re[i], im[i]);
    z.amplitude[i] = m;
    z.phase[i] = m > 0.0 ? std::atan2(im[i], re[i]) : 0.0;
  }
  return z;
}

void to_cartesian(const ComplexField& z, Tensor& re, Tensor& im) {
  if (!z.amplitude.same_shape(z.phase))
    throw ShapeError("to_cartesian: amplitude/phase shape mismatch");
  re = Tensor(z.amplitude.shape());
  im = Tensor(z.amplitude.shape());
  for (std::size_t i = 0; i < re.size(); ++i) {
    re[i] = z.amplitude[i] * std::cos(z.phase[i]);
    im[i] = z.amplitude[i] * std::sin(z.phase[i]);
  }
}

LayerBlockVars register_block(Tape& t, const LayerBlock& block, bool trainable) {
  return LayerBlockVars{block.kind, t.leaf(block.weight, trainable),
                        block.stride, block.padding};
}

Var apply_linear(Tape& t, const LayerBlockVars& block, Var x) {
  if (block.kind == LayerBlock::Kind::kConv)
    return t.conv2d(x, block.weight, block.stride, block.padding);
  return t.matvec(block.weight, x);
}

ComplexVars complex_linear_t(Tape& t, const LayerBlockVars& block, ComplexVars z) {
  return ComplexVars{apply_linear(t, block, z.re), apply_linear(t, block, z.im)};
}

Var amplitude_gate_t(Tape& t, const LayerBlockVars& block, Var z_mag, Var m1) {
  Var chi = apply_linear(t, block, z_mag);
  return t.scale(t.add(m1, chi), 0.5);
}

BlockOutVars block_forward_t(Tape& t, const LayerBlockVars& block, ComplexVars z,
                             Var z_mag, bool apply_relu, double eps_n, Var chi) {
  ComplexVars z1 = complex_linear_t(t, block, z);
  Var m1 = t.hypot(z1.re, z1.im);
  if (!chi.valid()) chi = apply_linear(t, block, z_mag);
  Var m2 = t.scale(t.add(m1, chi), 0.5);
  Var normed = t.instance_norm(m2, eps_n);
  Var amp = apply_relu ? t.relu(normed) : normed;
  Var u_re = t.unit_cos(z1.re, z1.im);
  Var u_im = t.unit_sin(z1.re, z1.im);
  return BlockOutVars{t.mul(amp, u_re), t.mul(amp, u_im), amp, u_re, u_im};
}

ComplexField complex_linear(const ComplexField& z, const LayerBlock& block) {
  Tensor re, im;
  to_cartesian(z, re, im);
  Tape t;
  LayerBlockVars bv = register_block(t, block, false);
  ComplexVars out = complex_linear_t(t, bv, {t.leaf(re), t.leaf(im)});
  return to_polar(t.value(out.re), t.value(out.im));
}

Tensor amplitude_gate(const ComplexField& z, const ComplexField& z1,
                      const LayerBlock& block) {
  Tape t;
  LayerBlockVars bv = register_block(t, block, false);
  Var m2 = amplitude_gate_t(t, bv, t.leaf(z.amplitude), t.leaf(z1.amplitude));
  return t.value(m2);
}

ComplexField block_forward(const ComplexField& z, const LayerBlock& block,
                           bool apply_relu, double eps_n) {
  Tensor re, im;
  to_cartesian(z, re, im);
  Tape t;
  LayerBlockVars bv = register_block(t, block, false);
  BlockOutVars out = block_forward_t(t, bv, {t.leaf(re), t.leaf(im)},
                                     t.leaf(z.amplitude), apply_relu, eps_n);
  return to_polar(t.value(out.re), t.value(out.im));
}

}  // namespace kpx
