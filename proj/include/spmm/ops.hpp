#pragma once
// Tensor kernels: convolution, pooling, shuffling, activations, linear maps,
// normalisation, DFT, and the index-remapping ops (pad / crop / roll /
// permute).  Everything here is a pure function of its inputs, deterministic,
// and single-threaded with a fixed reduction order, so repeated runs are
// bit-identical.  The matching gradient kernels live alongside the forwards;
// the tape in autodiff.hpp wires them together.

#include <optional>

#include "spmm/tensor.hpp"

namespace spmm::ops {

enum class Pad { same, valid };

// ----- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sign(const Tensor<T>& a);  // sign(0) = 0

// Activations.  softplus uses the overflow-safe branch softplus(x) = x for
// x > 20; sigmoid is evaluated tail-stably on both sides.
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Derivatives as a function of the pre-activation input.
template <typename T> Tensor<T> silu_grad(const Tensor<T>& x, const Tensor<T>& g);
template <typename T> Tensor<T> sigmoid_grad(const Tensor<T>& x, const Tensor<T>& g);
template <typename T> Tensor<T> softplus_grad(const Tensor<T>& x, const Tensor<T>& g);
template <typename T> Tensor<T> relu_grad(const Tensor<T>& x, const Tensor<T>& g);

// ----- reductions ------------------------------------------------------------

template <typename T> T sum_all(const Tensor<T>& a);
template <typename T> T mean_all(const Tensor<T>& a);
template <typename T> T max_abs(const Tensor<T>& a);
template <typename T> bool all_finite(const Tensor<T>& a);
// [B,C,H,W] -> [B,C] mean over the spatial axes.
template <typename T> Tensor<T> spatial_mean(const Tensor<T>& x);
template <typename T> Tensor<T> spatial_mean_grad(const Tensor<T>& g, const Shape& xshape);
// x[B,C,H,W] scaled per-channel by s[B,C].
template <typename T> Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);

// ----- softmax / layer norm --------------------------------------------------

// Softmax along the last axis, max-subtracted for overflow safety.
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);
// g_x given the forward output y and upstream gradient g.
template <typename T> Tensor<T> softmax_last_backward(const Tensor<T>& y, const Tensor<T>& g);

// Layer norm over the channel axis of [B,C,H,W], per spatial position:
// y = gamma * (x - mean_c) / sqrt(var_c + eps) + beta (biased variance).
template <typename T>
Tensor<T> layer_norm_chw(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         T eps = T(1e-5));
template <typename T>
void layer_norm_chw_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                             const Tensor<T>& g, Tensor<T>& gx, Tensor<T>& ggamma,
                             Tensor<T>& gbeta);

// ----- convolution -----------------------------------------------------------

// Cross-correlation (no kernel flip), stride fixed at 1, zero padding for
// `same` (odd kernels keep their spatial size).  x is [B,Cin,H,W], w is
// [Cout,Cin/groups,kh,kw], optional bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, Pad pad = Pad::same,
                 int groups = 1, int stride = 1);
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape, Pad pad,
                            int groups);
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& g, const Tensor<T>& x, const Shape& wshape, Pad pad,
                             int groups);
template <typename T> Tensor<T> conv2d_grad_bias(const Tensor<T>& g);

// ----- resampling ------------------------------------------------------------

// Mean over non-overlapping s x s cells of [B,C,H,W]; H, W must divide by s.
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, int s);
template <typename T> Tensor<T> avg_pool2d_grad(const Tensor<T>& g, int s);
// Nearest-neighbour upsample by integer factor s (replicates each pixel).
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, int s);
template <typename T> Tensor<T> upsample_nearest_grad(const Tensor<T>& g, int s);
// [B, C*r^2, H, W] -> [B, C, H*r, W*r]; output channel c at (y*r+dy, x*r+dx)
// reads input channel c*r^2 + dy*r + dx.  pixel_unshuffle is the inverse.
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

// ----- linear / matmul -------------------------------------------------------

// x[..., I] * W[O, I]^T + b -> [..., O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b);
template <typename T>
Tensor<T> linear_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape);
template <typename T>
Tensor<T> linear_grad_weight(const Tensor<T>& g, const Tensor<T>& x, const Shape& wshape);
template <typename T> Tensor<T> linear_grad_bias(const Tensor<T>& g);

// Batched matmul on rank-3 tensors: [N,m,k] x [N,k,n] -> [N,m,n].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
// Swap the last two axes of a rank >= 2 tensor.
template <typename T> Tensor<T> transpose_last(const Tensor<T>& x);

// ----- index remapping -------------------------------------------------------

template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
std::vector<int> inverse_permutation(const std::vector<int>& axes);
// Cyclic shift of the last two axes by (dy, dx); negative shifts roll upward.
template <typename T> Tensor<T> roll2d(const Tensor<T>& x, int dy, int dx);
// Pad the bottom/right of [B,C,H,W] by symmetric reflection (edge included,
// modular fold), so any pad amount is valid for any extent.
template <typename T> Tensor<T> pad_reflect_br(const Tensor<T>& x, int pb, int pr);
template <typename T> Tensor<T> pad_reflect_br_grad(const Tensor<T>& g, const Shape& xshape);
// Top-left crop of the last two axes to h x w.
template <typename T> Tensor<T> crop2d(const Tensor<T>& x, int64_t h, int64_t w);
template <typename T> Tensor<T> crop2d_grad(const Tensor<T>& g, const Shape& xshape);
// Contiguous slice along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, int64_t start, int64_t len);
template <typename T>
Tensor<T> narrow_grad(const Tensor<T>& g, const Shape& xshape, int axis, int64_t start);
template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& xs, int axis);

// The eight symmetries of the square applied to the last two axes of a rank-4
// map: k in [0,8) encodes (rotation by 90deg * (k & 3)) then, if k & 4, a
// horizontal flip.  dihedral_inverse(k) gives the index that undoes k.
template <typename T> Tensor<T> dihedral(const Tensor<T>& x, int k);
int dihedral_inverse(int k);

// ----- DFT -------------------------------------------------------------------

// Unnormalised 2-D DFT over the last two axes (naive row-column O(HW(H+W))).
// Re[u,v] = sum x cos(th), Im[u,v] = -sum x sin(th), th = 2*pi*(u*y/H + v*x/W).
template <typename T>
void dft2(const Tensor<T>& x, Tensor<T>& re, Tensor<T>& im);
// Adjoint of the forward map: given gradients w.r.t. Re and Im, the gradient
// w.r.t. x (transpose of the linear map, no 1/(HW) factor).
template <typename T>
Tensor<T> dft2_adjoint(const Tensor<T>& gre, const Tensor<T>& gim);

}  // namespace spmm::ops
