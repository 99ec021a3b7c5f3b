#pragma once
// Multi-scale mixture over superpixel state experts.
//
// The entry projection splits the map into a routed half and a gating half:
//   [x1; x2] = 1x1(x)                       C -> 2C
//   e_i      = expert_i(x1)                 state update at pooling scale s_i
//   r        = softmax(W . mean(x2) + b)    per-sample router
//   y        = 1x1( (sum_i w_i e_i) * SiLU(x2) )
// Training uses the dense mixture (every expert, weights r_i); inference
// executes only the top-k experts and renormalises their router mass, so with
// k == n the two paths agree to floating-point accuracy.  Expert ties break
// toward the lowest index; execution counters record which experts ran.
//
// The surrounding block wraps the mixture and a gated feed-forward, each
// behind a channel layer norm with a residual:
//   y = x + moe(ln1(x));  z = y + ffn(ln2(y))

#include "spmm/spssm.hpp"

namespace spmm {

struct MoeConfig {
  int64_t channels = 0;
  std::vector<int> scales = {1, 2, 4};  // per-expert pooling strides
  int64_t tokens = 64;                  // superpixels per expert
  int sp_iters = 5;
  int top_k = 1;  // experts executed at inference
  bool fuse_full_res = false;
  SsmConfig ssm;
  int64_t experts() const { return static_cast<int64_t>(scales.size()); }
  SpssmConfig expert(size_t i) const;
};

// How a routed forward runs: dense mixture is the training path; the mask
// mode selects the in-expert routing estimator.
struct RunMode {
  bool dense_mixture = false;
  GumbelMode mask{false, true, 1.0};  // argmax, no noise
  // Dense mixture with noisy straight-through masks.
  static RunMode train(double tau = 1.0) { return RunMode{true, GumbelMode{true, true, tau}}; }
  // Top-k dispatch with deterministic argmax masks.
  static RunMode infer() { return RunMode{false, GumbelMode{false, true, 1.0}}; }
};

struct MoeRunStats {
  std::vector<int64_t> executed;  // per-expert run counts
  int64_t dispatches = 0;
};

template <typename T>
struct MoeParams {
  Tensor<T> entry_w, entry_b;  // [2C,C,1,1], [2C]
  std::vector<SpssmParams<T>> experts;
  Tensor<T> router_w, router_b;  // [n,C], [n]
  Tensor<T> exit_w, exit_b;      // [C,C,1,1], [C]
  // Draw order: entry, experts in index order, router, exit.
  static MoeParams init(const MoeConfig& cfg, Rng& rng);
};

template <typename T>
struct MoeVars {
  Var<T> entry_w, entry_b;
  std::vector<SpssmVars<T>> experts;
  Var<T> router_w, router_b;
  Var<T> exit_w, exit_b;
};

template <typename T>
MoeVars<T> bind(Tape<T>& t, const MoeParams<T>& p, bool requires_grad);

// x is a single-sample map [1,C,H,W]; H and W must divide by every
// scale * sqrt(tokens).
template <typename T>
Var<T> moe_forward(Var<T> x, const MoeVars<T>& p, const MoeConfig& cfg, const RunMode& mode,
                   Rng* rng, ScanStats* scan_stats = nullptr, MoeRunStats* run_stats = nullptr);

// ----- gated feed-forward ----------------------------------------------------
// mid = 1x1(x) (C -> 4C) split into gate/value halves; the value half goes
// through a depthwise 3x3; out = 1x1(SiLU(gate) * value) back to C.

template <typename T>
struct GatedFfnParams {
  Tensor<T> entry_w, entry_b;  // [4C,C,1,1], [4C]
  Tensor<T> dw_w, dw_b;        // [2C,1,3,3], [2C]
  Tensor<T> exit_w, exit_b;    // [C,2C,1,1], [C]
  // Draw order: entry, dw, exit (biases stay zero).
  static GatedFfnParams init(int64_t channels, Rng& rng);
};

template <typename T>
struct GatedFfnVars {
  Var<T> entry_w, entry_b, dw_w, dw_b, exit_w, exit_b;
};

template <typename T>
GatedFfnVars<T> bind(Tape<T>& t, const GatedFfnParams<T>& p, bool requires_grad);

template <typename T>
Var<T> gated_ffn_forward(Var<T> x, const GatedFfnVars<T>& p);

// ----- mixture block (norm + moe + norm + ffn, residual around each) ---------

template <typename T>
struct SgmeParams {
  Tensor<T> norm1_g, norm1_b;  // [C]
  MoeParams<T> moe;
  Tensor<T> norm2_g, norm2_b;  // [C]
  GatedFfnParams<T> ffn;
  // Draw order: moe then ffn (the norms start at gamma 1, beta 0).
  static SgmeParams init(const MoeConfig& cfg, Rng& rng);
};

template <typename T>
struct SgmeVars {
  Var<T> norm1_g, norm1_b;
  MoeVars<T> moe;
  Var<T> norm2_g, norm2_b;
  GatedFfnVars<T> ffn;
};

template <typename T>
SgmeVars<T> bind(Tape<T>& t, const SgmeParams<T>& p, bool requires_grad);

template <typename T>
Var<T> sgme_forward(Var<T> x, const SgmeVars<T>& p, const MoeConfig& cfg, const RunMode& mode,
                    Rng* rng, ScanStats* scan_stats = nullptr, MoeRunStats* run_stats = nullptr);

}  // namespace spmm
