#include "kpx/model.hpp"

#include <cmath>
#include <tuple>

namespace kpx::model {

Variant variant_from_string(const std::string& name) {
  if (name == "komplexnet") return Variant::kKomplexnet;
  if (name == "komplexnet_fb") return Variant::kKomplexnetFb;
  if (name == "real") return Variant::kReal;
  if (name == "random_phase") return Variant::kRandomPhase;
  if (name == "ideal_phase") return Variant::kIdealPhase;
  if (name == "frozen_gaussian") return Variant::kFrozenGaussian;
  throw ContractError("unknown variant: " + name);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kKomplexnet: return "komplexnet";
    case Variant::kKomplexnetFb: return "komplexnet_fb";
    case Variant::kReal: return "real";
    case Variant::kRandomPhase: return "random_phase";
    case Variant::kIdealPhase: return "ideal_phase";
    case Variant::kFrozenGaussian: return "frozen_gaussian";
  }
  throw ContractError("unknown variant enum");
}

bool variant_has_dynamics(Variant v) {
  return v == Variant::kKomplexnet || v == Variant::kKomplexnetFb ||
         v == Variant::kFrozenGaussian;
}

bool variant_is_complex(Variant v) { return v != Variant::kReal; }

bool NetworkConfig::wants_feedback_from(int layer) const {
  if (variant != Variant::kKomplexnetFb) return false;
  for (int l : feedback_layers)
    if (l == layer) return true;
  return false;
}

const Tensor& Params::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter: " + name);
  return it->second;
}

Tensor& Params::get(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing parameter: " + name);
  return it->second;
}

namespace {

Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Params init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  Params p;
  const int c = cfg.channels;
  std::uint64_t idx = 0;
  auto next_rng = [&] { return Rng::stream(seed, rng_tag::kParamInit, idx++); };

  {
    Rng r = next_rng();
    const double bound = 1.0 / std::sqrt(1.0 * cfg.l0_kernel * cfg.l0_kernel);
    p.tensors["l0_w"] = uniform_init({c, 1, cfg.l0_kernel, cfg.l0_kernel}, bound, r);
  }
  {
    Rng r = next_rng();
    const double bound = 1.0 / std::sqrt(1.0 * c * cfg.l1_kernel * cfg.l1_kernel);
    p.tensors["l1_w"] = uniform_init({c, c, cfg.l1_kernel, cfg.l1_kernel}, bound, r);
  }
  {
    Rng r = next_rng();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.flat_width()));
    p.tensors["l2_w"] = uniform_init({cfg.l2_width, cfg.flat_width()}, bound, r);
  }
  {
    Rng r = next_rng();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.l2_width));
    p.tensors["l3_w"] = uniform_init({cfg.classes, cfg.l2_width}, bound, r);
  }
  p.trainable = {"l0_w", "l1_w", "l2_w", "l3_w"};

  if (variant_has_dynamics(cfg.variant)) {
    const int k = cfg.lateral_kernel;
    p.tensors["lateral_r"] =
        kuramoto::init_gaussian_kernel(c, k, k, k / 4.0, cfg.gauss_amplitude).r;
    if (cfg.variant != Variant::kFrozenGaussian) p.trainable.insert("lateral_r");
  }
  if (cfg.variant == Variant::kKomplexnetFb) {
    if (cfg.wants_feedback_from(1)) {
      Rng r = next_rng();
      Tensor t({c, c, cfg.fb_kernel, cfg.fb_kernel});
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = cfg.fb_init_sigma * r.normal();
      p.tensors["fb_l1"] = std::move(t);
      p.trainable.insert("fb_l1");
    }
    if (cfg.wants_feedback_from(2)) {
      Rng r = next_rng();
      Tensor t({c, cfg.l2_width});
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = cfg.fb_init_sigma * r.normal();
      p.tensors["fb_l2"] = std::move(t);
      p.trainable.insert("fb_l2");
    }
    if (cfg.wants_feedback_from(3)) {
      Rng r = next_rng();
      Tensor t({c, cfg.classes});
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = cfg.fb_init_sigma * r.normal();
      p.tensors["fb_l3"] = std::move(t);
      p.trainable.insert("fb_l3");
    }
  }
  return p;
}

ParamVars register_params(Tape& t, const Params& p, bool train_mode) {
  ParamVars pv;
  for (const auto& [name, tensor] : p.tensors)
    pv.vars[name] = t.leaf(tensor, train_mode && p.trainable.count(name) > 0);
  return pv;
}

Var ParamVars::get(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("missing parameter var: " + name);
  return it->second;
}

namespace {

struct BlockStack {
  LayerBlockVars l1, l2, l3;
};

BlockStack make_blocks(const ParamVars& pv, const NetworkConfig& cfg) {
  BlockStack b;
  b.l1 = LayerBlockVars{LayerBlock::Kind::kConv, pv.get("l1_w"), 2,
                        cfg.l1_kernel / 2};
  b.l2 = LayerBlockVars{LayerBlock::Kind::kDense, pv.get("l2_w"), 1, 0};
  b.l3 = LayerBlockVars{LayerBlock::Kind::kDense, pv.get("l3_w"), 1, 0};
  return b;
}

struct StepOutputs {
  BlockOutVars b1, b2, b3;
};

/// One bottom-up sweep through the three complex blocks from the L0 activity.
/// chi1 carries the timestep-invariant f_w(|a|) of the first block.
StepOutputs propagate(Tape& t, const BlockStack& blocks, Var re0, Var im0,
                      Var abs_a, Var chi1, const NetworkConfig& cfg) {
  StepOutputs o;
  o.b1 = block_forward_t(t, blocks.l1, ComplexVars{re0, im0}, abs_a, true,
                         cfg.eps_n, chi1);
  const std::vector<int> flat{cfg.flat_width()};
  ComplexVars z1{t.reshape(o.b1.re, flat), t.reshape(o.b1.im, flat)};
  Var m1 = t.reshape(o.b1.amplitude, flat);
  o.b2 = block_forward_t(t, blocks.l2, z1, m1, true, cfg.eps_n);
  o.b3 = block_forward_t(t, blocks.l3, ComplexVars{o.b2.re, o.b2.im},
                         o.b2.amplitude, false, cfg.eps_n);
  return o;
}

struct FeedbackSource {
  Var u_re, u_im, tanh_amp;
};

FeedbackSource feedback_source(Tape& t, const BlockOutVars& out) {
  Var amp = t.hypot(out.re, out.im);
  return FeedbackSource{t.unit_cos(out.re, out.im), t.unit_sin(out.re, out.im),
                        t.tanh(amp)};
}

}  // namespace

TraceVars forward_t(Tape& t, const Tensor& image, const ParamVars& pv,
                    const NetworkConfig& cfg, const Tensor& init_phase) {
  if (image.rank() != 2 || image.extent(0) != cfg.input_h ||
      image.extent(1) != cfg.input_w)
    throw ShapeError("forward: image must be [" + std::to_string(cfg.input_h) +
                     "," + std::to_string(cfg.input_w) + "]");

  TraceVars trace;
  Var x = t.reshape(t.leaf(image), {1, cfg.input_h, cfg.input_w});
  // Bias-free feature conv: zero image regions stay at zero amplitude, so the
  // background neither drives nor joins the phase dynamic.
  Var a = t.conv2d(x, pv.get("l0_w"), 1, cfg.l0_kernel / 2);
  Var abs_a = t.abs(a);
  trace.l0_amp = abs_a;

  if (cfg.variant == Variant::kReal) {
    // architecture-equivalent real pathway, single pass
    Var x1 = t.relu(t.instance_norm(
        t.conv2d(a, pv.get("l1_w"), 2, cfg.l1_kernel / 2), cfg.eps_n));
    Var x2 = t.relu(t.instance_norm(
        t.matvec(pv.get("l2_w"), t.reshape(x1, {cfg.flat_width()})), cfg.eps_n));
    Var logits = t.instance_norm(t.matvec(pv.get("l3_w"), x2), cfg.eps_n);
    trace.logits.push_back(logits);
    return trace;
  }

  if (init_phase.rank() != 3 || init_phase.extent(0) != cfg.channels ||
      init_phase.extent(1) != cfg.input_h || init_phase.extent(2) != cfg.input_w)
    throw ShapeError("forward: init_phase must be [C,H,W]");

  BlockStack blocks = make_blocks(pv, cfg);

  if (!variant_has_dynamics(cfg.variant)) {
    // single-pass complex baselines with fixed phases
    Var theta = t.wrap_phase(t.leaf(init_phase));
    Var re0 = t.mul(a, t.cos(theta));
    Var im0 = t.mul(a, t.sin(theta));
    StepOutputs o = propagate(t, blocks, re0, im0, abs_a, Var{}, cfg);
    trace.logits.push_back(o.b3.amplitude);
    trace.l0_phase.push_back(theta);
    return trace;
  }

  // Kuramoto variants: unrolled T-step dynamic.
  const bool fb = cfg.variant == Variant::kKomplexnetFb;
  Var r = pv.get("lateral_r");
  Var tanh_a = t.tanh(a);
  Var chi1 = apply_linear(t, blocks.l1, abs_a);  // constant across timesteps
  Var theta = t.leaf(init_phase);
  auto [sin_th, cos_th] = t.sincos(theta);
  bool have_prev = false;
  StepOutputs prev;

  for (int step = 0; step < cfg.timesteps; ++step) {
    Var delta = kuramoto::lateral_step_t(t, sin_th, cos_th, tanh_a, r,
                                         cfg.epsilon, cfg.eta);
    if (fb && have_prev) {
      if (cfg.wants_feedback_from(1)) {
        FeedbackSource src = feedback_source(t, prev.b1);
        delta = t.add(delta, kuramoto::feedback_term_t(
                                 t, sin_th, cos_th, src.u_re, src.u_im,
                                 src.tanh_amp, pv.get("fb_l1"), true,
                                 cfg.eta_fb[0], cfg.input_h, cfg.input_w));
      }
      if (cfg.wants_feedback_from(2)) {
        FeedbackSource src = feedback_source(t, prev.b2);
        delta = t.add(delta, kuramoto::feedback_term_t(
                                 t, sin_th, cos_th, src.u_re, src.u_im,
                                 src.tanh_amp, pv.get("fb_l2"), false,
                                 cfg.eta_fb[1], cfg.input_h, cfg.input_w));
      }
      if (cfg.wants_feedback_from(3)) {
        FeedbackSource src = feedback_source(t, prev.b3);
        delta = t.add(delta, kuramoto::feedback_term_t(
                                 t, sin_th, cos_th, src.u_re, src.u_im,
                                 src.tanh_amp, pv.get("fb_l3"), false,
                                 cfg.eta_fb[2], cfg.input_h, cfg.input_w));
      }
    }
    theta = t.wrap_phase(t.add(theta, delta));
    std::tie(sin_th, cos_th) = t.sincos(theta);
    Var re0 = t.mul(a, cos_th);
    Var im0 = t.mul(a, sin_th);
    StepOutputs o = propagate(t, blocks, re0, im0, abs_a, chi1, cfg);
    trace.logits.push_back(o.b3.amplitude);
    trace.l0_phase.push_back(theta);
    prev = o;
    have_prev = true;
  }
  return trace;
}

Tensor sample_phase_field(const NetworkConfig& cfg, Rng& rng) {
  Tensor t({cfg.channels, cfg.input_h, cfg.input_w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.phase();
  return t;
}

Tensor ideal_phase_assignment(const GroupMasks& masks, const NetworkConfig& cfg,
                              Rng& rng) {
  const int g_n = masks.digit_count();
  if (g_n < 1)
    throw ContractError("ideal_phase_assignment: masks must hold digit groups");
  const double rotation = rng.phase();
  std::vector<double> group_phase;
  for (int g = 0; g < g_n; ++g)
    group_phase.push_back(wrap_angle(rotation + kTwoPi * g / g_n));

  // Unassigned (background) pixels keep uninformative random phases.
  Tensor theta = sample_phase_field(cfg, rng);
  const int h = cfg.input_h, w = cfg.input_w;
  auto paint = [&](const objectives::GroupMask& m, double phase) {
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        if (m.mask[static_cast<std::size_t>(i) * w + j])
          for (int c = 0; c < cfg.channels; ++c) theta.at(c, i, j) = phase;
  };

  int digit_idx = 0;
  for (const auto& g : masks.groups) {
    if (g.kind != objectives::GroupKind::kDigit) continue;
    paint(g, group_phase[static_cast<std::size_t>(digit_idx++)]);
  }
  for (const auto& g : masks.groups) {
    if (g.kind != objectives::GroupKind::kOverlap) continue;
    std::vector<double> parents;
    for (int p : g.parents)
      parents.push_back(group_phase[static_cast<std::size_t>(p)]);
    if (parents.empty())
      throw ContractError("ideal_phase_assignment: overlap group without parents");
    objectives::CircularStats st = objectives::circular_stats(parents);
    // Antipodal parents (the two-object case) have no circular mean; use the
    // midpoint a quarter turn from the first parent.
    const double phase =
        st.degenerate ? wrap_angle(parents[0] + kPi / 2) : st.mean;
    paint(g, phase);
  }
  return theta;
}

namespace {

ForwardTrace run_tape(const Tensor& image, const Params& p,
                      const NetworkConfig& cfg, const Tensor& init_phase) {
  Tape t;
  ParamVars pv = register_params(t, p, false);
  TraceVars tv = forward_t(t, image, pv, cfg, init_phase);
  ForwardTrace out;
  for (Var v : tv.logits) out.logits.push_back(t.value(v));
  for (Var v : tv.l0_phase) out.l0_phase.push_back(t.value(v));
  for (std::size_t i = 0; i < out.logits.size(); ++i)
    out.l0_amp.push_back(t.value(tv.l0_amp));
  return out;
}

}  // namespace

ForwardTrace forward_komplexnet(const Tensor& image, const Params& p,
                                const NetworkConfig& cfg, Rng& rng) {
  if (cfg.variant != Variant::kKomplexnet &&
      cfg.variant != Variant::kFrozenGaussian)
    throw ContractError("forward_komplexnet: wrong variant");
  return run_tape(image, p, cfg, sample_phase_field(cfg, rng));
}

ForwardTrace forward_komplexnet_fb(const Tensor& image, const Params& p,
                                   const NetworkConfig& cfg, Rng& rng) {
  if (cfg.variant != Variant::kKomplexnetFb)
    throw ContractError("forward_komplexnet_fb: wrong variant");
  return run_tape(image, p, cfg, sample_phase_field(cfg, rng));
}

Tensor forward_real(const Tensor& image, const Params& p,
                    const NetworkConfig& cfg) {
  if (cfg.variant != Variant::kReal)
    throw ContractError("forward_real: wrong variant");
  return run_tape(image, p, cfg, Tensor()).logits.front();
}

ForwardTrace forward_random_phase(const Tensor& image, const Params& p,
                                  const NetworkConfig& cfg, Rng& rng) {
  if (cfg.variant != Variant::kRandomPhase)
    throw ContractError("forward_random_phase: wrong variant");
  return run_tape(image, p, cfg, sample_phase_field(cfg, rng));
}

ForwardTrace forward_ideal_phase(const Tensor& image, const GroupMasks& masks,
                                 const Params& p, const NetworkConfig& cfg,
                                 Rng& rng) {
  if (cfg.variant != Variant::kIdealPhase)
    throw ContractError("forward_ideal_phase: wrong variant");
  return run_tape(image, p, cfg, ideal_phase_assignment(masks, cfg, rng));
}

ForwardTrace forward(const Tensor& image, const Params& p,
                     const NetworkConfig& cfg, Rng& rng,
                     const GroupMasks* masks) {
  switch (cfg.variant) {
    case Variant::kKomplexnet:
    case Variant::kFrozenGaussian:
      return forward_komplexnet(image, p, cfg, rng);
    case Variant::kKomplexnetFb:
      return forward_komplexnet_fb(image, p, cfg, rng);
    case Variant::kReal:
      return run_tape(image, p, cfg, Tensor());
    case Variant::kRandomPhase:
      return forward_random_phase(image, p, cfg, rng);
    case Variant::kIdealPhase:
      if (masks == nullptr)
        throw ContractError("forward: ideal_phase requires masks");
      return forward_ideal_phase(image, *masks, p, cfg, rng);
  }
  throw ContractError("forward: unknown variant");
}

}  // namespace kpx::model
