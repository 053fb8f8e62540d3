#pragma once

#include "kpx/tape.hpp"
#include "kpx/tensor.hpp"

namespace kpx {

/// Complex-valued activation in polar form. Amplitudes are non-negative and
/// phases lie in (-pi, pi]; a zero-amplitude unit has phase 0 by convention.
struct ComplexField {
  Tensor amplitude;
  Tensor phase;
};

ComplexField to_polar(const Tensor& re, const Tensor& im);
void to_cartesian(const ComplexField& z, Tensor& re, Tensor& im);

/// One linear stage shared by the real/imaginary/magnitude pathways.
/// Complex blocks are strictly linear (no bias); the real feature extractor
/// at L0 is a plain conv with bias and does not go through this type.
struct LayerBlock {
  enum class Kind { kConv, kDense };
  Kind kind = Kind::kDense;
  Tensor weight;  // conv: [Co,Ci,kh,kw]; dense: [M,N]
  int stride = 1;
  int padding = 0;
};

// ---------------------------------------------------------------------------
// Tape-level building blocks (used by the model's unrolled forward pass).
// ---------------------------------------------------------------------------

struct ComplexVars {
  Var re, im;
};

struct LayerBlockVars {
  LayerBlock::Kind kind;
  Var weight;
  int stride = 1;
  int padding = 0;
};

LayerBlockVars register_block(Tape& t, const LayerBlock& block, bool trainable);

/// f_w applied to one real field (shared weights, no bias).
Var apply_linear(Tape& t, const LayerBlockVars& block, Var x);

/// Eq-style complex linearity: z1 = f_w(Re z) + i f_w(Im z).
ComplexVars complex_linear_t(Tape& t, const LayerBlockVars& block, ComplexVars z);

/// Gating stage: chi = f_w(|z|); m2 = (|z1| + chi) / 2.
Var amplitude_gate_t(Tape& t, const LayerBlockVars& block, Var z_mag, Var m1);

struct BlockOutVars {
  Var re, im;     // output in cartesian form
  Var amplitude;  // ReLU(IN(m2)) — or IN(m2), signed, when relu is skipped
  Var u_re, u_im; // unit phase vector of the linear stage
};

/// Full block: linear -> gate -> normalize (-> ReLU). The final classifier
/// block sets apply_relu = false and exposes the signed normalized amplitude
/// as logits. `chi` may carry a precomputed f_w(|z|) node (the unrolled model
/// hoists it when |z| is constant across timesteps); left invalid it is
/// computed here.
BlockOutVars block_forward_t(Tape& t, const LayerBlockVars& block, ComplexVars z,
                             Var z_mag, bool apply_relu, double eps_n = 1e-5,
                             Var chi = Var{});

// ---------------------------------------------------------------------------
// Plain wrappers over the tape compositions (single evaluation, no grad).
// ---------------------------------------------------------------------------

ComplexField complex_linear(const ComplexField& z, const LayerBlock& block);
Tensor amplitude_gate(const ComplexField& z, const ComplexField& z1,
                      const LayerBlock& block);
ComplexField block_forward(const ComplexField& z, const LayerBlock& block,
                           bool apply_relu, double eps_n = 1e-5);

}  // namespace kpx
