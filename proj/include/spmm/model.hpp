#pragma once
// Full network assembly.
//
//   shallow 3x3 conv -> n_loe layer groups -> 3x3 conv -> 3x3 conv to 3r^2
//   channels -> pixel shuffle by r
//
// Each layer group ("LoE") chains m_pairs of (global routed block -> local
// attention block) behind a learnable residual scale beta, then wraps a
// terminal 3x3 conv in a second scaled residual:
//
//   y   = x + beta * Pairs(x)
//   out = x + gamma * conv3x3(y)
//
// so beta = gamma = 0 makes the whole group an exact identity.  Attention
// shifts alternate 0 and window/2 across consecutive local blocks, counted
// globally over the network.
//
// Weights live in a flat name -> tensor map (lexicographic iteration order)
// so optimizers, serialization, and diagnostics all see one canonical view.
// Key scheme:
//
//   stem.w stem.b
//   loe{i}.blk{j}.sgme.{norm1,norm2}.{g,b}
//   loe{i}.blk{j}.sgme.moe.{entry,exit,router}.{w,b}
//   loe{i}.blk{j}.sgme.moe.expert{k}.conv.{w,b}
//   loe{i}.blk{j}.sgme.moe.expert{k}.ssm.{a,d,b_proj,c_proj,dt_w,dt_b}
//   loe{i}.blk{j}.sgme.ffn.{entry,dw,exit}.{w,b}
//   loe{i}.blk{j}.lsme.{norm1,norm2}.{g,b}
//   loe{i}.blk{j}.lsme.ca.{fc1,fc2}.{w,b}
//   loe{i}.blk{j}.lsme.attn.{qkv,proj}.{w,b}   loe{i}.blk{j}.lsme.attn.rel_bias
//   loe{i}.blk{j}.lsme.ffn.{entry,dw,exit}.{w,b}
//   loe{i}.conv.{w,b}   loe{i}.beta   loe{i}.gamma
//   tail.{w,b}   head.{w,b}
//
// Inputs of any size are handled by reflect-padding the bottom/right edges up
// to the least common multiple of the attention window and every expert's
// (scale * superpixel cell) stride, then cropping the upscaled output back.

#include "spmm/lsme.hpp"

#include <map>
#include <string>
#include <utility>

namespace spmm {

struct ModelConfig {
  int64_t channels = 36;
  int n_loe = 3;    // layer groups
  int m_pairs = 2;  // (global, local) block pairs per group
  int upscale = 4;  // r in {2, 3, 4}
  int window = 8;
  int heads = 4;
  std::vector<int> scales = {1, 2, 4};  // expert pooling strides
  int64_t tokens = 64;                  // superpixels per expert (perfect square)
  int sp_iters = 5;
  int top_k = 1;
  int d_state = 16;
  bool bidirectional = true;
  bool fuse_full_res = false;

  MoeConfig sgme_cfg() const;
  LsmeConfig lsme_cfg(int shift) const;
  int64_t grid_side() const;     // sqrt(tokens)
  int64_t pad_multiple() const;  // lcm(window, scale_i * grid cell) over experts
  // "t" (C36, 3 groups), "b" (C48, 4 groups), or "t-mini" (C16, 1 group,
  // 1 pair, 16 tokens, d_state 8 - the gradient-check / toy-training size).
  static ModelConfig preset(const std::string& name, int upscale);
};

template <typename T>
using WeightMap = std::map<std::string, Tensor<T>>;

template <typename T>
struct Model {
  ModelConfig cfg;
  WeightMap<T> weights;
};

// Seed-deterministic build: same seed, same config -> bit-identical weights.
// Conv / linear weights are fan-in-scaled truncated normals (std capped at
// 0.02), biases zero, layer norms (1, 0), beta = gamma = 1, state-space
// parameters per their module's documented scheme.  Draw order follows the
// key scheme above in schema (not lexicographic) order.
template <typename T>
Model<T> model_init(const ModelConfig& cfg, uint64_t seed);

template <typename T>
struct LoeVars {
  std::vector<SgmeVars<T>> sgme;  // m_pairs entries
  std::vector<LsmeVars<T>> lsme;  // m_pairs entries
  Var<T> conv_w, conv_b;
  Var<T> beta, gamma;  // one-element residual scales
};

template <typename T>
struct BoundModel {
  Var<T> stem_w, stem_b;
  std::vector<LoeVars<T>> loe;
  Var<T> tail_w, tail_b;
  Var<T> head_w, head_b;
  // Every leaf in bind (= schema) order; the optimizer walks this list.
  std::vector<std::pair<std::string, Var<T>>> leaves;
};

// Registers every weight as a tape leaf.  Errors name the offending key when
// the map is missing a tensor or carries one the schema does not mention.
// `overrides` substitutes already-built variables (same shape) for the named
// leaves - the hook the finite-difference harness uses to differentiate the
// network with respect to one stored tensor.
template <typename T>
BoundModel<T> bind_model(Tape<T>& t, const Model<T>& m, bool requires_grad,
                         const std::map<std::string, Var<T>>* overrides = nullptr);

// Single-sample forward, [1,3,H,W] -> [1,3,H*r,W*r].  `rng` feeds the routing
// noise when mode asks for it (may be null otherwise).
template <typename T>
Var<T> model_forward(Var<T> x, const BoundModel<T>& p, const ModelConfig& cfg,
                     const RunMode& mode, Rng* rng, ScanStats* scan_stats = nullptr,
                     MoeRunStats* run_stats = nullptr);

// Batched tensor-level forward on a non-recording tape, one sample at a time
// (sample b of a batch matches sample b alone, bit for bit, in noise-free
// modes; with noise the stream is consumed in batch order).
template <typename T>
Tensor<T> model_apply(const Tensor<T>& lr, const Model<T>& m, const RunMode& mode,
                      uint64_t noise_seed = 0, ScanStats* scan_stats = nullptr,
                      MoeRunStats* run_stats = nullptr);

// Exact element count of the weight map.
template <typename T>
int64_t param_count(const Model<T>& m);

// Analytic multiply-accumulate counts (in G = 1e9 MACs) for producing an
// H_out x W_out output; feature-map work is counted at H_out*W_out/r^2
// positions with no padding, matching the usual reporting convention.
// Counted ops: convolutions, linear layers, attention score/value matmuls,
// state-space recurrences (7 MACs per channel-state element per direction),
// clustering distance/update passes, router and excitation FCs.  Routed
// experts contribute the uniform-routing expectation (top_k / n_experts of
// the dense total).  Elementwise activations and norms are excluded.
struct MacsBreakdown {
  double stem = 0, sgme = 0, lsme = 0, loe_conv = 0, tail = 0, head = 0;
  double total() const { return stem + sgme + lsme + loe_conv + tail + head; }
};
MacsBreakdown model_macs(const ModelConfig& cfg, int64_t h_out, int64_t w_out);
double gmacs(const ModelConfig& cfg, int64_t h_out, int64_t w_out);

// Geometric self-ensemble: average of the 8 dihedral-transformed forwards,
// each mapped back through the inverse transform.  Inference mode, no noise.
template <typename T>
Tensor<T> self_ensemble(const Tensor<T>& lr, const Model<T>& m);

}  // namespace spmm
