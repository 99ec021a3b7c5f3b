#pragma once
// Local mixed attention block: squeeze-style channel attention feeding a
// shifted-window multi-head self-attention, plus the shared gated
// feed-forward, each half behind a channel layer norm with a residual:
//   y = x + attn(ca(ln1(x)));  z = y + ffn(ln2(y))
//
// Window attention follows the usual shifted scheme: maps are cyclically
// rolled by -shift before partitioning into window x window tiles, each tile
// attends over its own tokens with a learned relative-position bias, and
// cross-boundary pairs in shifted windows are masked with a large negative
// logit.  Shifts alternate 0 and window/2 across consecutive blocks (the
// caller passes the per-block shift).

#include "spmm/moe.hpp"

namespace spmm {

struct LsmeConfig {
  int64_t channels = 0;
  int window = 8;
  int heads = 4;
  int shift = 0;         // 0 or window/2, set per block
  bool ca_first = true;  // channel attention before window attention
};

template <typename T>
struct LsmeParams {
  Tensor<T> norm1_g, norm1_b;    // [C]
  Tensor<T> ca_fc1_w, ca_fc1_b;  // [C/4,C], [C/4]
  Tensor<T> ca_fc2_w, ca_fc2_b;  // [C,C/4], [C]
  Tensor<T> qkv_w, qkv_b;        // [3C,C], [3C]
  Tensor<T> proj_w, proj_b;      // [C,C], [C]
  Tensor<T> rel_bias;            // [(2w-1)^2, heads]
  Tensor<T> norm2_g, norm2_b;    // [C]
  GatedFfnParams<T> ffn;
  // Draw order: ca_fc1_w, ca_fc2_w, qkv_w, proj_w, rel_bias, then the ffn
  // (biases stay zero, norms start at gamma 1 / beta 0).
  static LsmeParams init(const LsmeConfig& cfg, Rng& rng);
};

template <typename T>
struct LsmeVars {
  Var<T> norm1_g, norm1_b;
  Var<T> ca_fc1_w, ca_fc1_b;
  Var<T> ca_fc2_w, ca_fc2_b;
  Var<T> qkv_w, qkv_b;
  Var<T> proj_w, proj_b;
  Var<T> rel_bias;
  Var<T> norm2_g, norm2_b;
  GatedFfnVars<T> ffn;
};

template <typename T>
LsmeVars<T> bind(Tape<T>& t, const LsmeParams<T>& p, bool requires_grad);

// ----- pieces (exposed for direct verification) ------------------------------

// [1,C,H,W] -> [nw, window*window, C] row-major over window tiles and pixels.
template <typename T>
Var<T> window_partition(Var<T> x, int window);
// Inverse of window_partition.
template <typename T>
Var<T> window_reverse(Var<T> t, int window, int64_t c, int64_t h, int64_t w);

// Flattened [t*t] lookup into the (2w-1)^2 relative-offset table for token
// pairs of one window: idx(i,j) = (dy + w - 1)*(2w - 1) + (dx + w - 1).
std::vector<int32_t> rel_bias_index(int window);

// Additive attention mask [nw, t, t] for a shifted partition: 0 within
// contiguous regions, -1e9 across the wrapped boundaries.  All zeros when
// shift == 0.
template <typename T>
Tensor<T> shift_attn_mask(int64_t h, int64_t w, int window, int shift);

// Global-pool excitation: x * sigmoid(fc2(relu(fc1(mean(x))))), reduction 4.
template <typename T>
Var<T> channel_attention(Var<T> x, const LsmeVars<T>& p);

// Shifted-window multi-head self-attention with relative-position bias.
template <typename T>
Var<T> window_attention(Var<T> x, const LsmeVars<T>& p, const LsmeConfig& cfg);

// ----- full block ------------------------------------------------------------

template <typename T>
Var<T> lsme_forward(Var<T> x, const LsmeVars<T>& p, const LsmeConfig& cfg);

}  // namespace spmm
