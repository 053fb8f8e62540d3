#include "kpx/tape.hpp"

#include <cmath>
#include <utility>

#include "kpx/conv_kernels.hpp"

namespace kpx {

Var Tape::push(Tensor value, bool needs_grad, BackwardFn back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool trainable) {
  return push(std::move(value), trainable, nullptr);
}

void Tape::accumulate(int id, Tensor&& g) {
  if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
  Tensor& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.empty()) {
    slot = std::move(g);
  } else {
    if (!slot.same_shape(g))
      throw ShapeError("Tape: gradient shape mismatch");
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
  }
}

void Tape::backward(Var loss) {
  const int id = check(loss);
  if (nodes_[static_cast<std::size_t>(id)].value.size() != 1)
    throw ContractError("Tape::backward: loss must be scalar");
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<std::size_t>(id)] = Tensor::scalar(1.0);
  for (int i = id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.back) continue;
    if (grads_[static_cast<std::size_t>(i)].empty()) continue;
    n.back(*this, i);
  }
}

const Tensor* Tape::grad(Var v) const {
  const int id = check(v);
  if (static_cast<std::size_t>(id) >= grads_.size()) return nullptr;
  const Tensor& g = grads_[static_cast<std::size_t>(id)];
  return g.empty() ? nullptr : &g;
}

// ---------------------------------------------------------------------------
// elementwise helpers
// ---------------------------------------------------------------------------

template <class F, class DF>
Var Tape::unary_op(Var a, F&& f, DF&& df) {
  const Tensor& x = value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int pa = a.id;
  return push(std::move(y), needs(a), [pa, df](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& x = t.nodes_[static_cast<std::size_t>(pa)].value;
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = go[i] * df(x[i], y[i]);
    t.accumulate(pa, std::move(g));
  });
}

template <class F, class DA, class DB>
Var Tape::binary_op(Var a, Var b, F&& f, DA&& da, DB&& db) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (!x.same_shape(y))
    throw ShapeError("Tape: elementwise shape mismatch " + x.shape_str() +
                     " vs " + y.shape_str());
  Tensor z(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = f(x[i], y[i]);
  const int pa = a.id, pb = b.id;
  return push(std::move(z), needs(a) || needs(b),
              [pa, pb, da, db](Tape& t, int self) {
                const Tensor& go = t.gout(self);
                const Tensor& x = t.nodes_[static_cast<std::size_t>(pa)].value;
                const Tensor& y = t.nodes_[static_cast<std::size_t>(pb)].value;
                if (t.nodes_[static_cast<std::size_t>(pa)].needs_grad) {
                  Tensor g(x.shape());
                  for (std::size_t i = 0; i < x.size(); ++i)
                    g[i] = go[i] * da(x[i], y[i]);
                  t.accumulate(pa, std::move(g));
                }
                if (t.nodes_[static_cast<std::size_t>(pb)].needs_grad) {
                  Tensor g(y.shape());
                  for (std::size_t i = 0; i < y.size(); ++i)
                    g[i] = go[i] * db(x[i], y[i]);
                  t.accumulate(pb, std::move(g));
                }
              });
}

Var Tape::relu(Var a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var Tape::tanh(Var a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var Tape::sin(Var a) {
  return unary_op(
      a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Var Tape::cos(Var a) {
  return unary_op(
      a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Var Tape::sigmoid(Var a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var Tape::sqrt(Var a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var Tape::abs(Var a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var Tape::neg(Var a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var Tape::add(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var Tape::sub(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var Tape::mul(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var Tape::scale(Var a, double c) {
  return unary_op(
      a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Var Tape::offset(Var a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Var Tape::atan2(Var y, Var x) {
  return binary_op(
      y, x, [](double yy, double xx) { return std::atan2(yy, xx); },
      [](double yy, double xx) {
        const double r2 = xx * xx + yy * yy;
        return r2 > 0.0 ? xx / r2 : 0.0;
      },
      [](double yy, double xx) {
        const double r2 = xx * xx + yy * yy;
        return r2 > 0.0 ? -yy / r2 : 0.0;
      });
}

Var Tape::hypot(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return std::hypot(x, y); },
      [](double x, double y) {
        const double h = std::hypot(x, y);
        return h > 0.0 ? x / h : 0.0;
      },
      [](double x, double y) {
        const double h = std::hypot(x, y);
        return h > 0.0 ? y / h : 0.0;
      });
}

Var Tape::unit_cos(Var re, Var im) {
  return binary_op(
      re, im,
      [](double r, double i) {
        const double h = std::hypot(r, i);
        return h > 0.0 ? r / h : 1.0;
      },
      [](double r, double i) {
        const double h = std::hypot(r, i);
        if (h <= 0.0) return 0.0;
        const double ui = i / h;
        return ui * ui / h;
      },
      [](double r, double i) {
        const double h = std::hypot(r, i);
        if (h <= 0.0) return 0.0;
        return -(r / h) * (i / h) / h;
      });
}

Var Tape::unit_sin(Var re, Var im) {
  return binary_op(
      re, im,
      [](double r, double i) {
        const double h = std::hypot(r, i);
        return h > 0.0 ? i / h : 0.0;
      },
      [](double r, double i) {
        const double h = std::hypot(r, i);
        if (h <= 0.0) return 0.0;
        return -(r / h) * (i / h) / h;
      },
      [](double r, double i) {
        const double h = std::hypot(r, i);
        if (h <= 0.0) return 0.0;
        const double ur = r / h;
        return ur * ur / h;
      });
}

Var Tape::wrap_phase(Var a) {
  return unary_op(
      a, [](double x) { return wrap_angle(x); },
      [](double, double) { return 1.0; });
}

std::pair<Var, Var> Tape::sincos(Var a) {
  const Tensor& x = value(a);
  Tensor sv(x.shape()), cv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sv[i] = std::sin(x[i]);
    cv[i] = std::cos(x[i]);
  }
  const int pa = a.id;
  // The cos node is pushed immediately after the sin node; each backward
  // reads the sibling's forward value as its derivative.
  Var s = push(std::move(sv), needs(a), [pa](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& cosv = t.nodes_[static_cast<std::size_t>(self) + 1].value;
    Tensor g(cosv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i] * cosv[i];
    t.accumulate(pa, std::move(g));
  });
  Var c = push(std::move(cv), needs(a), [pa](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& sinv = t.nodes_[static_cast<std::size_t>(self) - 1].value;
    Tensor g(sinv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -go[i] * sinv[i];
    t.accumulate(pa, std::move(g));
  });
  return {s, c};
}

Var Tape::lateral_coupling(Var sin_th, Var cos_th, Var tanh_a, Var kernel,
                           double epsilon, double eta) {
  const Tensor& s = value(sin_th);
  const Tensor& c = value(cos_th);
  const Tensor& ta = value(tanh_a);
  const Tensor& kv = value(kernel);
  if (!s.same_shape(c) || !s.same_shape(ta) || s.rank() != 3)
    throw ShapeError("lateral_coupling: field shape mismatch");
  if (kv.rank() != 4 || kv.extent(0) != s.extent(0) ||
      kv.extent(1) != s.extent(0))
    throw ShapeError("lateral_coupling: kernel must be [C,C,kh,kw]");
  const int kh = kv.extent(2), kw = kv.extent(3);
  if (kh > s.extent(1) || kw > s.extent(2))
    throw ShapeError("lateral_coupling: kernel window does not fit the field");
  const std::size_t n = s.size();

  Tensor f_s(s.shape()), f_c(s.shape());
  double sum_s = 0.0, sum_c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    f_s[i] = s[i] * ta[i];
    f_c[i] = c[i] * ta[i];
    sum_s += f_s[i];
    sum_c += f_c[i];
  }
  Tensor conv_s, conv_c;
  detail::conv2d_forward(f_s, kv, 1, kh / 2, kw / 2, conv_s);
  detail::conv2d_forward(f_c, kv, 1, kh / 2, kw / 2, conv_c);
  Tensor out(s.shape());
  for (std::size_t i = 0; i < n; ++i)
    out[i] = eta * (c[i] * (conv_s[i] - epsilon * sum_s) -
                    s[i] * (conv_c[i] - epsilon * sum_c));

  auto saved = std::make_shared<std::array<Tensor, 2>>();
  (*saved)[0] = std::move(conv_s);
  (*saved)[1] = std::move(conv_c);
  const double ss = sum_s, sc = sum_c;
  const int ps = sin_th.id, pc = cos_th.id, pt = tanh_a.id, pk = kernel.id;
  const bool needs_any =
      needs(sin_th) || needs(cos_th) || needs(tanh_a) || needs(kernel);
  return push(std::move(out), needs_any,
              [ps, pc, pt, pk, epsilon, eta, ss, sc, saved, kh,
               kw](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& s = t.nodes_[static_cast<std::size_t>(ps)].value;
    const Tensor& c = t.nodes_[static_cast<std::size_t>(pc)].value;
    const Tensor& ta = t.nodes_[static_cast<std::size_t>(pt)].value;
    const Tensor& kv = t.nodes_[static_cast<std::size_t>(pk)].value;
    const Tensor& conv_s = (*saved)[0];
    const Tensor& conv_c = (*saved)[1];
    const std::size_t n = s.size();

    // g .* cos and g .* sin feed both adjoint convolutions and the eps sums
    Tensor gc_field(s.shape()), gs_field(s.shape());
    double sum_gc = 0.0, sum_gs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gc_field[i] = eta * go[i] * c[i];
      gs_field[i] = eta * go[i] * s[i];
      sum_gc += gc_field[i];
      sum_gs += gs_field[i];
    }
    // gradient reaching the windowed fields f_s = sin.*ta, f_c = cos.*ta
    Tensor gf_s(s.shape()), gf_c(s.shape());
    detail::conv2d_input_grad(gc_field, kv, 1, kh / 2, kw / 2, gf_s);
    Tensor tmp(s.shape());
    detail::conv2d_input_grad(gs_field, kv, 1, kh / 2, kw / 2, tmp);
    for (std::size_t i = 0; i < n; ++i) {
      gf_s[i] -= epsilon * sum_gc;
      gf_c[i] = -tmp[i] + epsilon * sum_gs;
    }

    const bool w_s = t.nodes_[static_cast<std::size_t>(ps)].needs_grad;
    const bool w_c = t.nodes_[static_cast<std::size_t>(pc)].needs_grad;
    const bool w_t = t.nodes_[static_cast<std::size_t>(pt)].needs_grad;
    const bool w_k = t.nodes_[static_cast<std::size_t>(pk)].needs_grad;
    if (w_s) {
      Tensor gs(s.shape());
      for (std::size_t i = 0; i < n; ++i)
        gs[i] = -eta * go[i] * (conv_c[i] - epsilon * sc) + gf_s[i] * ta[i];
      t.accumulate(ps, std::move(gs));
    }
    if (w_c) {
      Tensor gcv(s.shape());
      for (std::size_t i = 0; i < n; ++i)
        gcv[i] = eta * go[i] * (conv_s[i] - epsilon * ss) + gf_c[i] * ta[i];
      t.accumulate(pc, std::move(gcv));
    }
    if (w_t) {
      Tensor gt(s.shape());
      for (std::size_t i = 0; i < n; ++i)
        gt[i] = gf_s[i] * s[i] + gf_c[i] * c[i];
      t.accumulate(pt, std::move(gt));
    }
    if (w_k) {
      Tensor f_s(s.shape()), f_c(s.shape());
      for (std::size_t i = 0; i < n; ++i) {
        f_s[i] = s[i] * ta[i];
        f_c[i] = c[i] * ta[i];
      }
      Tensor gk1(kv.shape()), gk2(kv.shape());
      detail::conv2d_kernel_grad(f_s, gc_field, 1, kh / 2, kw / 2, gk1);
      detail::conv2d_kernel_grad(f_c, gs_field, 1, kh / 2, kw / 2, gk2);
      for (std::size_t i = 0; i < gk1.size(); ++i) gk1[i] -= gk2[i];
      t.accumulate(pk, std::move(gk1));
    }
  });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& x = value(a);
  Tensor y(std::move(shape));
  if (y.size() != x.size())
    throw ShapeError("reshape: size mismatch " + x.shape_str() + " -> " +
                     y.shape_str());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i];
  const int pa = a.id;
  return push(std::move(y), needs(a), [pa](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& x = t.nodes_[static_cast<std::size_t>(pa)].value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = go[i];
    t.accumulate(pa, std::move(g));
  });
}

Var Tape::sum(Var a) {
  const Tensor& x = value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const int pa = a.id;
  return push(Tensor::scalar(s), needs(a), [pa](Tape& t, int self) {
    const double g = t.gout(self)[0];
    const Tensor& x = t.nodes_[static_cast<std::size_t>(pa)].value;
    t.accumulate(pa, Tensor(x.shape(), g));
  });
}

Var Tape::gather(Var a, std::vector<std::size_t> indices) {
  const Tensor& x = value(a);
  if (indices.empty()) throw ContractError("gather: empty index list");
  Tensor y({static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw ContractError("gather: index out of range");
    y[i] = x[indices[i]];
  }
  const int pa = a.id;
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
  return push(std::move(y), needs(a), [pa, idx](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& x = t.nodes_[static_cast<std::size_t>(pa)].value;
    Tensor g(x.shape());
    for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += go[i];
    t.accumulate(pa, std::move(g));
  });
}

Var Tape::broadcast_channel(Var v, int h, int w) {
  const Tensor& x = value(v);
  if (x.rank() != 1) throw ShapeError("broadcast_channel: expected rank-1 input");
  const int c_n = x.extent(0);
  Tensor y({c_n, h, w});
  for (int c = 0; c < c_n; ++c) {
    const double xv = x.at(c);
    double* row = &y.at(c, 0, 0);
    for (int i = 0; i < h * w; ++i) row[i] = xv;
  }
  const int pa = v.id;
  return push(std::move(y), needs(v), [pa, c_n, h, w](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    Tensor g({c_n});
    for (int c = 0; c < c_n; ++c) {
      const double* row = &go.at(c, 0, 0);
      double s = 0.0;
      for (int i = 0; i < h * w; ++i) s += row[i];
      g.at(c) = s;
    }
    t.accumulate(pa, std::move(g));
  });
}

Var Tape::scalar_mul(Var s, Var x) {
  const Tensor& sv = value(s);
  const Tensor& xv = value(x);
  if (sv.size() != 1) throw ShapeError("scalar_mul: scalar operand must have size 1");
  Tensor y(xv.shape());
  const double c = sv[0];
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = c * xv[i];
  const int ps = s.id, px = x.id;
  return push(std::move(y), needs(s) || needs(x), [ps, px](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& sv = t.nodes_[static_cast<std::size_t>(ps)].value;
    const Tensor& xv = t.nodes_[static_cast<std::size_t>(px)].value;
    if (t.nodes_[static_cast<std::size_t>(ps)].needs_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += go[i] * xv[i];
      t.accumulate(ps, Tensor::scalar(acc));
    }
    if (t.nodes_[static_cast<std::size_t>(px)].needs_grad) {
      Tensor g(xv.shape());
      const double c = sv[0];
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] = c * go[i];
      t.accumulate(px, std::move(g));
    }
  });
}

// ---------------------------------------------------------------------------
// linear layers
// ---------------------------------------------------------------------------

Var Tape::conv2d(Var x, Var kernel, int stride, int padding) {
  return conv2d_hw(x, kernel, stride, padding, padding);
}

Var Tape::conv2d_hw(Var x, Var kernel, int stride, int pad_h, int pad_w) {
  Tensor out;
  detail::conv2d_forward(value(x), value(kernel), stride, pad_h, pad_w, out);
  const int px = x.id, pk = kernel.id;
  return push(std::move(out), needs(x) || needs(kernel),
              [px, pk, stride, pad_h, pad_w](Tape& t, int self) {
                const Tensor& go = t.gout(self);
                const Tensor& xv = t.nodes_[static_cast<std::size_t>(px)].value;
                const Tensor& kv = t.nodes_[static_cast<std::size_t>(pk)].value;
                if (t.nodes_[static_cast<std::size_t>(px)].needs_grad) {
                  Tensor gx(xv.shape());
                  detail::conv2d_input_grad(go, kv, stride, pad_h, pad_w, gx);
                  t.accumulate(px, std::move(gx));
                }
                if (t.nodes_[static_cast<std::size_t>(pk)].needs_grad) {
                  Tensor gk(kv.shape());
                  detail::conv2d_kernel_grad(xv, go, stride, pad_h, pad_w, gk);
                  t.accumulate(pk, std::move(gk));
                }
              });
}

Var Tape::conv2d_transpose(Var x, Var kernel, int stride, int pad_h, int pad_w,
                           int out_h, int out_w) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  if (xv.rank() != 3 || kv.rank() != 4)
    throw ShapeError("conv2d_transpose: expected rank-3 input, rank-4 kernel");
  if (kv.extent(0) != xv.extent(0))
    throw ShapeError("conv2d_transpose: source channel mismatch");
  const int kh = kv.extent(2), kw = kv.extent(3);
  if ((out_h + 2 * pad_h - kh) / stride + 1 != xv.extent(1) ||
      (out_w + 2 * pad_w - kw) / stride + 1 != xv.extent(2))
    throw ShapeError("conv2d_transpose: output extent inconsistent with input");
  Tensor out({kv.extent(1), out_h, out_w});
  detail::conv2d_input_grad(xv, kv, stride, pad_h, pad_w, out);
  const int px = x.id, pk = kernel.id;
  return push(std::move(out), needs(x) || needs(kernel),
              [px, pk, stride, pad_h, pad_w](Tape& t, int self) {
                const Tensor& go = t.gout(self);
                const Tensor& xv = t.nodes_[static_cast<std::size_t>(px)].value;
                const Tensor& kv = t.nodes_[static_cast<std::size_t>(pk)].value;
                if (t.nodes_[static_cast<std::size_t>(px)].needs_grad) {
                  Tensor gx;
                  detail::conv2d_forward(go, kv, stride, pad_h, pad_w, gx);
                  t.accumulate(px, std::move(gx));
                }
                if (t.nodes_[static_cast<std::size_t>(pk)].needs_grad) {
                  Tensor gk(kv.shape());
                  detail::conv2d_kernel_grad(go, xv, stride, pad_h, pad_w, gk);
                  t.accumulate(pk, std::move(gk));
                }
              });
}

Var Tape::matvec(Var w, Var x) {
  Tensor out;
  detail::matvec(value(w), value(x), out);
  const int pw = w.id, px = x.id;
  return push(std::move(out), needs(w) || needs(x), [pw, px](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& wv = t.nodes_[static_cast<std::size_t>(pw)].value;
    const Tensor& xv = t.nodes_[static_cast<std::size_t>(px)].value;
    if (t.nodes_[static_cast<std::size_t>(pw)].needs_grad) {
      Tensor gw;
      detail::matvec_weight_grad(go, xv, gw);
      t.accumulate(pw, std::move(gw));
    }
    if (t.nodes_[static_cast<std::size_t>(px)].needs_grad) {
      Tensor gx;
      detail::matvec_input_grad(wv, go, gx);
      t.accumulate(px, std::move(gx));
    }
  });
}

Var Tape::dense(Var x, Var w, Var b) {
  const Tensor& bv = value(b);
  if (bv.rank() != 1 || bv.extent(0) != value(w).extent(0))
    throw ShapeError("dense: bias shape mismatch");
  return add(matvec(w, x), b);
}

Var Tape::add_channel_bias(Var x, Var b) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(b);
  if (xv.rank() < 2 || bv.rank() != 1 || bv.extent(0) != xv.extent(0))
    throw ShapeError("add_channel_bias: shape mismatch");
  const int c_n = xv.extent(0);
  const std::size_t per = xv.size() / static_cast<std::size_t>(c_n);
  Tensor y(xv.shape());
  for (int c = 0; c < c_n; ++c) {
    const double bvv = bv.at(c);
    const double* src = xv.data() + static_cast<std::size_t>(c) * per;
    double* dst = y.data() + static_cast<std::size_t>(c) * per;
    for (std::size_t i = 0; i < per; ++i) dst[i] = src[i] + bvv;
  }
  const int px = x.id, pb = b.id;
  return push(std::move(y), needs(x) || needs(b), [px, pb, c_n, per](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    if (t.nodes_[static_cast<std::size_t>(px)].needs_grad) {
      Tensor g = go;
      t.accumulate(px, std::move(g));
    }
    if (t.nodes_[static_cast<std::size_t>(pb)].needs_grad) {
      Tensor gb({c_n});
      for (int c = 0; c < c_n; ++c) {
        const double* src = go.data() + static_cast<std::size_t>(c) * per;
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += src[i];
        gb.at(c) = s;
      }
      t.accumulate(pb, std::move(gb));
    }
  });
}

Var Tape::instance_norm(Var x, double eps) {
  const Tensor& xv = value(x);
  const int groups = xv.rank() >= 2 ? xv.extent(0) : 1;
  const std::size_t per = xv.size() / static_cast<std::size_t>(groups);
  if (per < 2)
    throw ContractError("instance_norm: per-channel element count must be >= 2");
  Tensor y(xv.shape());
  // Per group: inverse std and whether the variance floor was active (the
  // denominator is then constant w.r.t. x).
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  auto floored = std::make_shared<std::vector<char>>(groups);
  for (int g = 0; g < groups; ++g) {
    const double* src = xv.data() + static_cast<std::size_t>(g) * per;
    double* dst = y.data() + static_cast<std::size_t>(g) * per;
    double mean = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += src[i];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(per);
    const bool fl = var < eps;
    const double is = 1.0 / std::sqrt(fl ? eps : var);
    (*inv_std)[static_cast<std::size_t>(g)] = is;
    (*floored)[static_cast<std::size_t>(g)] = fl ? 1 : 0;
    for (std::size_t i = 0; i < per; ++i) dst[i] = (src[i] - mean) * is;
  }
  const int pa = x.id;
  return push(std::move(y), needs(x),
              [pa, groups, per, inv_std, floored](Tape& t, int self) {
    const Tensor& go = t.gout(self);
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    const Tensor& xv = t.nodes_[static_cast<std::size_t>(pa)].value;
    Tensor g(xv.shape());
    for (int gr = 0; gr < groups; ++gr) {
      const std::size_t off = static_cast<std::size_t>(gr) * per;
      const double* gop = go.data() + off;
      const double* yp = y.data() + off;
      double* gp = g.data() + off;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        mg += gop[i];
        mgy += gop[i] * yp[i];
      }
      mg /= static_cast<double>(per);
      mgy /= static_cast<double>(per);
      const double is = (*inv_std)[static_cast<std::size_t>(gr)];
      if ((*floored)[static_cast<std::size_t>(gr)]) {
        for (std::size_t i = 0; i < per; ++i) gp[i] = is * (gop[i] - mg);
      } else {
        for (std::size_t i = 0; i < per; ++i)
          gp[i] = is * (gop[i] - mg - yp[i] * mgy);
      }
    }
    t.accumulate(pa, std::move(g));
  });
}

Var Tape::bce_with_logits(Var logits, Tensor targets) {
  const Tensor& lv = value(logits);
  if (!lv.same_shape(targets))
    throw ShapeError("bce_with_logits: target shape mismatch");
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] != 0.0 && targets[i] != 1.0)
      throw ContractError("bce_with_logits: targets must be multi-hot 0/1");
  const double n = static_cast<double>(lv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double l = lv[i];
    loss += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::fabs(l)));
  }
  loss /= n;
  const int pl = logits.id;
  auto yt = std::make_shared<Tensor>(std::move(targets));
  return push(Tensor::scalar(loss), needs(logits), [pl, yt, n](Tape& t, int self) {
    const double g = t.gout(self)[0];
    const Tensor& lv = t.nodes_[static_cast<std::size_t>(pl)].value;
    Tensor gl(lv.shape());
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-lv[i]));
      gl[i] = g * (s - (*yt)[i]) / n;
    }
    t.accumulate(pl, std::move(gl));
  });
}

}  // namespace kpx
