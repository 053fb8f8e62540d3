#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kpx/complex_ops.hpp"
#include "kpx/kuramoto.hpp"
#include "kpx/objectives.hpp"
#include "kpx/rng.hpp"

namespace kpx::model {

using objectives::GroupMasks;

enum class Variant {
  kKomplexnet,
  kKomplexnetFb,
  kReal,
  kRandomPhase,
  kIdealPhase,
  kFrozenGaussian,
};

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

/// Variants that run the Kuramoto phase dynamic (and therefore unroll T steps).
bool variant_has_dynamics(Variant v);
/// Variants with complex activations (everything but the real baseline).
bool variant_is_complex(Variant v);

struct NetworkConfig {
  int channels = 8;
  int input_h = 32, input_w = 32;
  int l0_kernel = 5;  // real feature conv, stride 1, padding keeps 32x32
  int l1_kernel = 3;  // complex conv, stride 2 -> 16x16
  int l2_width = 50;
  int classes = 10;
  int timesteps = 15;
  Variant variant = Variant::kKomplexnet;
  double epsilon = 0.2;
  double eta = 0.006;
  std::array<double, 3> eta_fb{0.005, 0.004, 0.004};  // gains for L1, L2, L3
  int lateral_kernel = 13;
  int fb_kernel = 5;
  std::vector<int> feedback_layers{1, 2, 3};
  double eps_n = 1e-5;
  double gauss_amplitude = 0.5;  // lateral kernel init; sigma = k/4
  double fb_init_sigma = 0.01;

  int l1_out() const { return input_h / 2; }
  int flat_width() const { return channels * l1_out() * l1_out(); }
  bool wants_feedback_from(int layer) const;
};

/// Named parameter tensors plus the trainable subset. Map order is the
/// canonical serialization order.
struct Params {
  std::map<std::string, Tensor> tensors;
  std::set<std::string> trainable;

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

/// Fresh parameters for a variant: layer weights with 1/sqrt(fan_in) uniform
/// bounds, Gaussian-initialized lateral kernel, near-zero feedback couplings.
Params init_params(const NetworkConfig& cfg, std::uint64_t seed);

struct ForwardTrace {
  std::vector<Tensor> logits;    // one [10] entry per timestep
  std::vector<Tensor> l0_phase;  // [C,32,32]; empty for the real baseline
  std::vector<Tensor> l0_amp;    // |a|, same every step for static inputs
  int timesteps() const { return static_cast<int>(logits.size()); }
};

// ---- tape-level forward (shared by evaluation and training) ---------------

struct ParamVars {
  std::map<std::string, Var> vars;
  Var get(const std::string& name) const;
};

ParamVars register_params(Tape& t, const Params& p, bool train_mode);

struct TraceVars {
  std::vector<Var> logits;
  std::vector<Var> l0_phase;
  Var l0_amp;
};

/// Unrolled forward pass on a tape. `init_phase` is the [C,H,W] initial (or
/// fixed, for the single-pass complex baselines) phase field; it is ignored
/// by the real variant.
TraceVars forward_t(Tape& t, const Tensor& image, const ParamVars& pv,
                    const NetworkConfig& cfg, const Tensor& init_phase);

// ---- plain forwards --------------------------------------------------------

/// Uniform random phases in (-pi, pi] per unit.
Tensor sample_phase_field(const NetworkConfig& cfg, Rng& rng);

/// Equidistant group phases from the masks: one value per digit group with a
/// random global rotation, circular mean (midpoint when antipodal) on overlap
/// groups, random phases on unassigned pixels.
Tensor ideal_phase_assignment(const GroupMasks& masks, const NetworkConfig& cfg,
                              Rng& rng);

ForwardTrace forward_komplexnet(const Tensor& image, const Params& p,
                                const NetworkConfig& cfg, Rng& rng);
ForwardTrace forward_komplexnet_fb(const Tensor& image, const Params& p,
                                   const NetworkConfig& cfg, Rng& rng);
Tensor forward_real(const Tensor& image, const Params& p,
                    const NetworkConfig& cfg);
ForwardTrace forward_random_phase(const Tensor& image, const Params& p,
                                  const NetworkConfig& cfg, Rng& rng);
ForwardTrace forward_ideal_phase(const Tensor& image, const GroupMasks& masks,
                                 const Params& p, const NetworkConfig& cfg,
                                 Rng& rng);

/// Variant dispatch. `masks` is required by the ideal-phase baseline.
ForwardTrace forward(const Tensor& image, const Params& p,
                     const NetworkConfig& cfg, Rng& rng,
                     const GroupMasks* masks = nullptr);

}  // namespace kpx::model
