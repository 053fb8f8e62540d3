#pragma once

#include "kpx/tensor.hpp"

namespace kpx::detail {

// Raw 2D cross-correlation kernels shared by the forward op and both adjoints.
// Index convention, with S = stride and (Ph, Pw) = zero padding per axis:
//   out[co, oi, oj] = sum_{ci,ki,kj} K[co,ci,ki,kj] * X[ci, oi*S+ki-Ph, oj*S+kj-Pw]
// Out-of-range input positions contribute zero. These functions overwrite
// their destination.

/// out: [Co, Ho, Wo] with Ho = (H + 2Ph - kh) / S + 1 (floor), same for Wo.
void conv2d_forward(const Tensor& x, const Tensor& k, int stride, int pad_h,
                    int pad_w, Tensor& out);

/// Adjoint of conv2d_forward with respect to X.
/// gx: [Ci, H, W];  gout: [Co, Ho, Wo].
void conv2d_input_grad(const Tensor& gout, const Tensor& k, int stride,
                       int pad_h, int pad_w, Tensor& gx);

/// Adjoint of conv2d_forward with respect to K.
/// gk: [Co, Ci, kh, kw].
void conv2d_kernel_grad(const Tensor& x, const Tensor& gout, int stride,
                        int pad_h, int pad_w, Tensor& gk);

/// Dense matrix-vector product: out[m] = sum_n W[m,n] x[n].
void matvec(const Tensor& w, const Tensor& x, Tensor& out);
/// gx[n] = sum_m W[m,n] g[m].
void matvec_input_grad(const Tensor& w, const Tensor& g, Tensor& gx);
/// gw[m,n] = g[m] x[n].
void matvec_weight_grad(const Tensor& g, const Tensor& x, Tensor& gw);

}  // namespace kpx::detail
