#pragma once
// Superpixel-routed state update on a feature map (one downsampling scale).
//
// Pipeline for a single-sample map x [1,C,H,W] (batching is the caller's
// loop, since the token decomposition is per sample):
//   x'  = SiLU(depthwise 3x3(x))            full-resolution transform
//   xd  = avg_pool(x', scale)               pooled map, [C,h,w]
//   sp  = superpixel sample of xd           M tokens, assignment table
//   tok = selective state update over the M tokens in raster order
//   A   = sigmoid(scatter(mask, tok))       per-pixel gate, [N,C]
//   out = upsample_nearest(A * xd, scale) + x
// With fuse_full_res the gate is upsampled first and applied to x' instead of
// the pooled map.  A zeroed transform conv makes the block an exact identity:
// every branch collapses to zero and out == x bit for bit.
//
// The mask mode selects the routing estimator: hard+noise for training
// (straight-through), hard without noise for inference (plain argmax), soft
// for relaxed gradient checks.

#include "spmm/ssm.hpp"
#include "spmm/superpixel.hpp"

namespace spmm {

struct SpssmConfig {
  int64_t channels = 0;
  int scale = 1;         // pooling stride before clustering
  int64_t tokens = 64;   // superpixel count (perfect square)
  int sp_iters = 5;      // clustering alternations
  bool fuse_full_res = false;
  SsmConfig ssm;
};

template <typename T>
struct SpssmParams {
  Tensor<T> conv_w;  // [C,1,3,3] depthwise transform
  Tensor<T> conv_b;  // [C]
  SsmParams<T> ssm;
  // Draw order: conv_w (truncated normal, fan-in scaled), conv_b stays zero,
  // then the state-space parameters.
  static SpssmParams init(const SpssmConfig& cfg, Rng& rng);
};

template <typename T>
struct SpssmVars {
  Var<T> conv_w, conv_b;
  SsmVars<T> ssm;
};

template <typename T>
SpssmVars<T> bind(Tape<T>& t, const SpssmParams<T>& p, bool requires_grad);

template <typename T>
Var<T> spssm_forward(Var<T> x, const SpssmVars<T>& p, const SpssmConfig& cfg,
                     const GumbelMode& mask, Rng* rng, ScanStats* stats = nullptr);

// Tensor in/out via a non-recording tape.
template <typename T>
Tensor<T> spssm_apply(const Tensor<T>& x, const SpssmParams<T>& p, const SpssmConfig& cfg,
                      const GumbelMode& mask, Rng* rng, ScanStats* stats = nullptr);

}  // namespace spmm
