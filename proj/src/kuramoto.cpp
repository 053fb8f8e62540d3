#include "kpx/kuramoto.hpp"

#include <cmath>

namespace kpx::kuramoto {

CouplingKernel init_gaussian_kernel(int channels, int h, int w, double sigma,
                                    double amplitude) {
  if (h % 2 == 0 || w % 2 == 0)
    throw ShapeError("init_gaussian_kernel: window extents must be odd");
  Tensor r({channels, channels, h, w});
  const int ch = h / 2, cw = w / 2;
  for (int ki = 0; ki < h; ++ki)
    for (int kj = 0; kj < w; ++kj) {
      const double di = ki - ch, dj = kj - cw;
      const double v =
          amplitude * std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      for (int co = 0; co < channels; ++co)
        for (int ci = 0; ci < channels; ++ci) r.at(co, ci, ki, kj) = v;
    }
  return CouplingKernel{std::move(r), true};
}

FeedbackCoupling init_feedback(int channels, int h1, int w1,
                               const std::vector<int>& dense_dims, double sigma,
                               Rng& rng) {
  FeedbackCoupling fb;
  fb.from_l1 = Tensor({channels, channels, h1, w1});
  for (std::size_t i = 0; i < fb.from_l1.size(); ++i)
    fb.from_l1[i] = sigma * rng.normal();
  for (int d : dense_dims) {
    Tensor m({channels, d});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = sigma * rng.normal();
    fb.from_dense.push_back(std::move(m));
  }
  return fb;
}

Var lateral_step_t(Tape& t, Var sin_th, Var cos_th, Var tanh_a, Var kernel,
                   double epsilon, double eta) {
  return t.lateral_coupling(sin_th, cos_th, tanh_a, kernel, epsilon, eta);
}

Var feedback_term_t(Tape& t, Var sin_th0, Var cos_th0, Var u_re, Var u_im,
                    Var tanh_a, Var coupling, bool spatial, double eta,
                    int out_h, int out_w) {
  Var f_sin = t.mul(u_im, tanh_a);
  Var f_cos = t.mul(u_re, tanh_a);
  Var proj_sin, proj_cos;
  if (spatial) {
    const Tensor& kv = t.value(coupling);
    const int ph = kv.extent(2) / 2, pw = kv.extent(3) / 2;
    proj_sin = t.conv2d_transpose(f_sin, coupling, 2, ph, pw, out_h, out_w);
    proj_cos = t.conv2d_transpose(f_cos, coupling, 2, ph, pw, out_h, out_w);
  } else {
    proj_sin = t.broadcast_channel(t.matvec(coupling, f_sin), out_h, out_w);
    proj_cos = t.broadcast_channel(t.matvec(coupling, f_cos), out_h, out_w);
  }
  return t.scale(
      t.sub(t.mul(cos_th0, proj_sin), t.mul(sin_th0, proj_cos)), eta);
}

Tensor lateral_step(const Tensor& theta, const Tensor& amplitude,
                    const CouplingKernel& kernel, double epsilon, double eta) {
  if (!theta.same_shape(amplitude))
    throw ShapeError("lateral_step: theta/amplitude shape mismatch");
  Tape t;
  Var th = t.leaf(theta);
  Var d = lateral_step_t(t, t.sin(th), t.cos(th), t.tanh(t.leaf(amplitude)),
                         t.leaf(kernel.r), epsilon, eta);
  return t.value(d);
}

Tensor feedback_step(const Tensor& theta0, const Tensor& amplitude0,
                     const std::vector<HigherField>& higher,
                     const CouplingKernel& lateral,
                     const FeedbackCoupling& coupling, double epsilon,
                     double eta_lateral, const std::vector<double>& eta_fb) {
  const bool has_l1 = coupling.from_l1.size() > 0;
  const std::size_t expected =
      (has_l1 ? 1 : 0) + coupling.from_dense.size();
  if (higher.size() != expected || eta_fb.size() != expected)
    throw ContractError("feedback_step: higher fields do not match couplings");

  Tape t;
  Var th0 = t.leaf(theta0);
  Var sin0 = t.sin(th0);
  Var cos0 = t.cos(th0);
  Var total = lateral_step_t(t, sin0, cos0, t.tanh(t.leaf(amplitude0)),
                             t.leaf(lateral.r), epsilon, eta_lateral);
  const int h = theta0.extent(1), w = theta0.extent(2);
  std::size_t idx = 0;
  if (has_l1) {
    Var thl = t.leaf(higher[idx].phase);
    Var term = feedback_term_t(t, sin0, cos0, t.cos(thl), t.sin(thl),
                               t.tanh(t.leaf(higher[idx].amplitude)),
                               t.leaf(coupling.from_l1), true, eta_fb[idx], h, w);
    total = t.add(total, term);
    ++idx;
  }
  for (std::size_t d = 0; d < coupling.from_dense.size(); ++d, ++idx) {
    Var thl = t.leaf(higher[idx].phase);
    Var term = feedback_term_t(t, sin0, cos0, t.cos(thl), t.sin(thl),
                               t.tanh(t.leaf(higher[idx].amplitude)),
                               t.leaf(coupling.from_dense[d]), false,
                               eta_fb[idx], h, w);
    total = t.add(total, term);
  }
  return t.value(total);
}

Tensor graph_step(const Tensor& theta, const Tensor& omega, const Tensor& w,
                  double dt) {
  const int n = theta.extent(0);
  if (w.rank() != 2 || w.extent(0) != n || w.extent(1) != n ||
      omega.extent(0) != n)
    throw ShapeError("graph_step: inconsistent shapes");
  if (!w.all_finite()) throw ContractError("graph_step: W must be finite");
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = omega.at(i);
    for (int j = 0; j < n; ++j)
      s += w.at(i, j) * std::sin(theta.at(j) - theta.at(i));
    out.at(i) = wrap_angle(theta.at(i) + dt * s);
  }
  return out;
}

double energy(const Tensor& theta, const Tensor& w) {
  const int n = theta.extent(0);
  double e = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      e -= w.at(i, j) * std::cos(theta.at(i) - theta.at(j));
  return e;
}

}  // namespace kpx::kuramoto
