#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "kpx/tensor.hpp"

namespace kpx {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode autodiff tape. Nodes are appended in forward
/// execution order; backward() walks them exactly once in reverse. Forward
/// values are never mutated by backward(), and gradients are recomputed from
/// scratch on every call, so repeated backward passes agree bit for bit.
///
/// A node participates in the backward sweep only if some ancestor leaf was
/// registered as trainable; everything else is skipped and never receives
/// gradient storage.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool trainable = false);
  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // ---- elementwise ----
  Var relu(Var a);
  Var tanh(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var sigmoid(Var a);
  Var sqrt(Var a);
  Var abs(Var a);
  Var neg(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var offset(Var a, double c);
  /// Elementwise atan2(y, x); gradient is zero where x = y = 0.
  Var atan2(Var y, Var x);
  /// Elementwise magnitude sqrt(a^2 + b^2); gradient is zero at the origin.
  Var hypot(Var a, Var b);
  /// re / hypot(re, im); value 1 and gradient 0 where the magnitude is 0.
  Var unit_cos(Var re, Var im);
  /// im / hypot(re, im); value 0 and gradient 0 where the magnitude is 0.
  Var unit_sin(Var re, Var im);
  /// Values wrapped to (-pi, pi]; identity gradient (wrapping is piecewise
  /// identity and every consumer is 2*pi periodic).
  Var wrap_phase(Var a);
  /// sin(x) and cos(x) as a pair of adjacent nodes whose backward passes read
  /// each other's forward values instead of re-evaluating libm.
  std::pair<Var, Var> sincos(Var a);

  /// Fused lateral Kuramoto update (the sin-difference expansion):
  ///   out = eta * [ cos .* conv(sin .* ta, r) - sin .* conv(cos .* ta, r)
  ///                 - eps * (sum(sin .* ta) * cos - sum(cos .* ta) * sin) ]
  /// with r correlated over its centered window. One node instead of the
  /// dozen-op elementwise chain; the adjoints reuse the conv kernels.
  Var lateral_coupling(Var sin_th, Var cos_th, Var tanh_a, Var kernel,
                       double epsilon, double eta);

  // ---- structure ----
  Var reshape(Var a, std::vector<int> shape);
  Var sum(Var a);  // -> shape {1}
  Var gather(Var a, std::vector<std::size_t> indices);
  /// [C] -> [C,H,W], repeating each channel value over the spatial grid.
  Var broadcast_channel(Var v, int h, int w);
  /// Scalar ({1}) times tensor.
  Var scalar_mul(Var s, Var x);

  // ---- linear layers ----
  Var conv2d(Var x, Var kernel, int stride, int padding);
  /// conv2d with independent padding per spatial axis (rectangular windows).
  Var conv2d_hw(Var x, Var kernel, int stride, int pad_h, int pad_w);
  /// Transposed correlation: source unit (cs,i',j') contributes to output
  /// positions in the kh x kw window centered at (i'*stride, j'*stride).
  /// kernel is [Cs, Cd, kh, kw]; output shape [Cd, out_h, out_w].
  Var conv2d_transpose(Var x, Var kernel, int stride, int pad_h, int pad_w,
                       int out_h, int out_w);
  Var matvec(Var w, Var x);
  Var dense(Var x, Var w, Var b);
  Var add_channel_bias(Var x, Var b);
  /// Per-channel standardization for rank >= 2 (dim 0 = channels); rank-1
  /// inputs are normalized over the whole vector. eps acts as a variance
  /// floor, which keeps the op idempotent and guards constant channels.
  Var instance_norm(Var x, double eps);

  // ---- losses ----
  /// Mean over classes of the numerically stable logit-space BCE.
  Var bce_with_logits(Var logits, Tensor targets);

  void backward(Var loss);
  /// Gradient of the last backward() target w.r.t. v; nullptr if none flowed.
  const Tensor* grad(Var v) const;

 private:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    Tensor value;
    BackwardFn back;
    bool needs_grad = false;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ContractError("Tape: invalid Var");
    return v.id;
  }
  Var push(Tensor value, bool needs_grad, BackwardFn back);
  void accumulate(int id, Tensor&& g);
  const Tensor& gout(int id) const { return grads_[static_cast<std::size_t>(id)]; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  template <class F, class DF>
  Var unary_op(Var a, F&& f, DF&& df);
  template <class F, class DA, class DB>
  Var binary_op(Var a, Var b, F&& f, DA&& da, DB&& db);

  // deque: value() references stay valid while new nodes are appended
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace kpx
