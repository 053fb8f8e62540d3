#pragma once

#include <vector>

#include "kpx/rng.hpp"
#include "kpx/tape.hpp"
#include "kpx/tensor.hpp"

namespace kpx::kuramoto {

/// Learnable lateral coupling r in R^{C x C x h x w}, indexed
/// [target_channel, source_channel, di, dj] with the window centered on the
/// target unit. Positive entries attract nearby phases, negative repel.
struct CouplingKernel {
  Tensor r;
  bool trainable = true;
};

/// Feedback couplings: a spatially structured kernel from the first complex
/// conv layer ([source_channel, target_channel, h1, w1], placed at stride-2
/// centers) and one dense coupling matrix [C, D_l] per dense layer.
struct FeedbackCoupling {
  Tensor from_l1;
  std::vector<Tensor> from_dense;
};

struct KuramotoConfig {
  double epsilon = 0.2;  // global desynchronization
  double eta = 0.006;    // lateral gain
  int timesteps = 15;
};

/// Gaussian-initialized kernel: every (c_out, c_in) slice is
/// amplitude * exp(-(di^2 + dj^2) / (2 sigma^2)) centered in the window.
CouplingKernel init_gaussian_kernel(int channels, int h, int w, double sigma,
                                    double amplitude);

FeedbackCoupling init_feedback(int channels, int h1, int w1,
                               const std::vector<int>& dense_dims, double sigma,
                               Rng& rng);

/// One phase field of a higher layer, as seen from L0.
struct HigherField {
  Tensor phase;      // L1: [C, H/2, W/2]; dense: [D]
  Tensor amplitude;  // same shape
};

// ---------------------------------------------------------------------------
// Tape-level steps. The sine of phase differences is expanded as
// sin(th_k - th_c) = sin th_k cos th_c - cos th_k sin th_c, so the windowed
// coupling becomes a correlation over the fields sin(th)*tanh(a) and
// cos(th)*tanh(a), and the all-to-all -eps term reduces to two global sums.
// ---------------------------------------------------------------------------

Var lateral_step_t(Tape& t, Var sin_th, Var cos_th, Var tanh_a, Var kernel,
                   double epsilon, double eta);

/// Contribution of one higher layer. u_re/u_im are the unit phase vector of
/// the source activity, tanh_a its tanh'ed amplitude. `coupling` is the
/// spatial kernel for the L1 source (spatial = true) or the [C, D] matrix for
/// a dense source. No epsilon term.
Var feedback_term_t(Tape& t, Var sin_th0, Var cos_th0, Var u_re, Var u_im,
                    Var tanh_a, Var coupling, bool spatial, double eta,
                    int out_h, int out_w);

// ---------------------------------------------------------------------------
// Plain wrappers.
// ---------------------------------------------------------------------------

/// Lateral Kuramoto update for the L0 phase field (one Euler step, gain eta).
Tensor lateral_step(const Tensor& theta, const Tensor& amplitude,
                    const CouplingKernel& kernel, double epsilon, double eta);

/// Lateral term plus feedback terms from higher layers. `higher` pairs with
/// the couplings: higher[0] with from_l1 (when present), then the dense ones
/// in order. `eta_fb[i]` is the gain of higher[i].
Tensor feedback_step(const Tensor& theta0, const Tensor& amplitude0,
                     const std::vector<HigherField>& higher,
                     const CouplingKernel& lateral,
                     const FeedbackCoupling& coupling, double epsilon,
                     double eta_lateral, const std::vector<double>& eta_fb);

// ---------------------------------------------------------------------------
// Graph Kuramoto (general coupling matrix), used as a tested utility.
// ---------------------------------------------------------------------------

/// theta'_i = wrap(theta_i + dt * (omega_i + sum_j W_ij sin(theta_j - theta_i)))
Tensor graph_step(const Tensor& theta, const Tensor& omega, const Tensor& w,
                  double dt);

/// E = -sum_{ij} W_ij cos(theta_i - theta_j); gradient-flow energy of the
/// graph dynamic for symmetric W.
double energy(const Tensor& theta, const Tensor& w);

}  // namespace kpx::kuramoto
