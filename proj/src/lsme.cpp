#include "spmm/lsme.hpp"

#include <array>
#include <cmath>
#include <memory>

#include "spmm/ops.hpp"

namespace spmm {

namespace {

void check_config(const LsmeConfig& cfg) {
  if (cfg.channels <= 0) throw Error("lsme: channel count must be positive");
  if (cfg.window < 2) throw Error("lsme: window must be at least 2");
  if (cfg.heads < 1 || cfg.channels % cfg.heads != 0)
    throw Error("lsme: channels " + std::to_string(cfg.channels) + " must divide by heads " +
                std::to_string(cfg.heads));
  if (cfg.channels % 4 != 0)
    throw Error("lsme: channel attention needs channels divisible by 4, got " +
                std::to_string(cfg.channels));
  if (cfg.shift < 0 || cfg.shift >= cfg.window)
    throw Error("lsme: shift " + std::to_string(cfg.shift) + " outside [0," +
                std::to_string(cfg.window) + ")");
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double std_dev = std::min(0.02, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(std_dev));
  return t;
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.defined()) throw Error("lsme: undefined variable");
  return *a.tape;
}

// Adds the relative-position bias to head-major window logits.
// attn [nw*heads, t, t]; table [(2w-1)^2, heads]; idx [t*t] into the table.
template <typename T>
Var<T> v_rel_bias_add(Var<T> attn, Var<T> table,
                      std::shared_ptr<const std::vector<int32_t>> idx, int heads) {
  Tape<T>& tp = tape_of(attn);
  if (attn.tape != table.tape) throw Error("lsme: operands live on different tapes");
  Tensor<T> y = tp.value(attn.id);
  {
    const Tensor<T>& tv = tp.value(table.id);
    const int64_t nwh = y.dim(0), t = y.dim(1);
    for (int64_t b = 0; b < nwh; ++b) {
      const int64_t hd = b % heads;
      T* yp = y.data() + b * t * t;
      for (int64_t ij = 0; ij < t * t; ++ij)
        yp[ij] += tv[(*idx)[static_cast<size_t>(ij)] * heads + hd];
    }
  }
  if (!tp.recording()) return tp.constant(std::move(y));
  const int h = heads;
  return tp.record(std::move(y), {attn.id, table.id},
                   [idx, h](Tape<T>& t2, const typename Tape<T>::Node& n) {
                     const Tensor<T>& g = n.grad;
                     t2.accumulate(n.inputs[0], g);
                     const Tensor<T>& tv = t2.value(n.inputs[1]);
                     Tensor<T> gt = Tensor<T>::zeros(tv.shape());
                     const int64_t nwh = g.dim(0), t = g.dim(1);
                     for (int64_t b = 0; b < nwh; ++b) {
                       const int64_t hd = b % h;
                       const T* gp = g.data() + b * t * t;
                       for (int64_t ij = 0; ij < t * t; ++ij)
                         gt[(*idx)[static_cast<size_t>(ij)] * h + hd] += gp[ij];
                     }
                     t2.accumulate(n.inputs[1], gt);
                   });
}

}  // namespace

template <typename T>
LsmeParams<T> LsmeParams<T>::init(const LsmeConfig& cfg, Rng& rng) {
  check_config(cfg);
  const int64_t C = cfg.channels, R = C / 4;
  const int64_t table = (2 * cfg.window - 1) * (2 * cfg.window - 1);
  LsmeParams<T> p;
  p.norm1_g = Tensor<T>::ones({C});
  p.norm1_b = Tensor<T>::zeros({C});
  p.ca_fc1_w = trunc_normal<T>({R, C}, C, rng);
  p.ca_fc1_b = Tensor<T>::zeros({R});
  p.ca_fc2_w = trunc_normal<T>({C, R}, R, rng);
  p.ca_fc2_b = Tensor<T>::zeros({C});
  p.qkv_w = trunc_normal<T>({3 * C, C}, C, rng);
  p.qkv_b = Tensor<T>::zeros({3 * C});
  p.proj_w = trunc_normal<T>({C, C}, C, rng);
  p.proj_b = Tensor<T>::zeros({C});
  p.rel_bias = Tensor<T>({table, cfg.heads});
  for (int64_t i = 0; i < p.rel_bias.numel(); ++i)
    p.rel_bias[i] = static_cast<T>(rng.truncated_normal(0.02));
  p.norm2_g = Tensor<T>::ones({C});
  p.norm2_b = Tensor<T>::zeros({C});
  p.ffn = GatedFfnParams<T>::init(C, rng);
  return p;
}

template <typename T>
LsmeVars<T> bind(Tape<T>& t, const LsmeParams<T>& p, bool requires_grad) {
  LsmeVars<T> v;
  v.norm1_g = t.leaf(p.norm1_g, requires_grad);
  v.norm1_b = t.leaf(p.norm1_b, requires_grad);
  v.ca_fc1_w = t.leaf(p.ca_fc1_w, requires_grad);
  v.ca_fc1_b = t.leaf(p.ca_fc1_b, requires_grad);
  v.ca_fc2_w = t.leaf(p.ca_fc2_w, requires_grad);
  v.ca_fc2_b = t.leaf(p.ca_fc2_b, requires_grad);
  v.qkv_w = t.leaf(p.qkv_w, requires_grad);
  v.qkv_b = t.leaf(p.qkv_b, requires_grad);
  v.proj_w = t.leaf(p.proj_w, requires_grad);
  v.proj_b = t.leaf(p.proj_b, requires_grad);
  v.rel_bias = t.leaf(p.rel_bias, requires_grad);
  v.norm2_g = t.leaf(p.norm2_g, requires_grad);
  v.norm2_b = t.leaf(p.norm2_b, requires_grad);
  v.ffn = bind(t, p.ffn, requires_grad);
  return v;
}

template <typename T>
Var<T> window_partition(Var<T> x, int window) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4 || xv.dim(0) != 1)
    throw Error("window_partition: expected [1,C,H,W], got " + shape_str(xv.shape()));
  const int64_t C = xv.dim(1), H = xv.dim(2), W = xv.dim(3), ws = window;
  if (H % ws != 0 || W % ws != 0)
    throw Error("window_partition: extents " + shape_str(xv.shape()) +
                " are not divisible by window " + std::to_string(ws));
  Var<T> t5 = vops::reshape(x, {C, H / ws, ws, W / ws, ws});
  Var<T> p5 = vops::permute(t5, {1, 3, 2, 4, 0});  // [H/ws, W/ws, ws, ws, C]
  return vops::reshape(p5, {(H / ws) * (W / ws), ws * ws, C});
}

template <typename T>
Var<T> window_reverse(Var<T> t, int window, int64_t c, int64_t h, int64_t w) {
  const int64_t ws = window;
  Var<T> t5 = vops::reshape(t, {h / ws, w / ws, ws, ws, c});
  Var<T> p5 = vops::permute(t5, ops::inverse_permutation({1, 3, 2, 4, 0}));
  return vops::reshape(p5, {1, c, h, w});
}

std::vector<int32_t> rel_bias_index(int window) {
  const int ws = window, t = ws * ws, span = 2 * ws - 1;
  std::vector<int32_t> idx(static_cast<size_t>(t) * t);
  for (int i = 0; i < t; ++i) {
    const int yi = i / ws, xi = i % ws;
    for (int j = 0; j < t; ++j) {
      const int yj = j / ws, xj = j % ws;
      idx[static_cast<size_t>(i * t + j)] =
          static_cast<int32_t>((yi - yj + ws - 1) * span + (xi - xj + ws - 1));
    }
  }
  return idx;
}

template <typename T>
Tensor<T> shift_attn_mask(int64_t h, int64_t w, int window, int shift) {
  const int64_t ws = window, t = ws * ws, nw = (h / ws) * (w / ws);
  Tensor<T> mask = Tensor<T>::zeros({nw, t, t});
  if (shift == 0) return mask;
  // Label contiguous regions of the rolled map: boundaries fall at n-ws and
  // n-shift along each axis, giving up to nine region ids.
  std::vector<int> id(static_cast<size_t>(h * w), 0);
  const std::array<int64_t, 4> bh{0, h - ws, h - shift, h};
  const std::array<int64_t, 4> bw{0, w - ws, w - shift, w};
  int cnt = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int64_t y = bh[static_cast<size_t>(a)]; y < bh[static_cast<size_t>(a) + 1]; ++y)
        for (int64_t x = bw[static_cast<size_t>(b)]; x < bw[static_cast<size_t>(b) + 1]; ++x)
          id[static_cast<size_t>(y * w + x)] = cnt;
      ++cnt;
    }
  }
  for (int64_t wy = 0; wy < h / ws; ++wy) {
    for (int64_t wx = 0; wx < w / ws; ++wx) {
      const int64_t wi = wy * (w / ws) + wx;
      T* mp = mask.data() + wi * t * t;
      for (int64_t i = 0; i < t; ++i) {
        const int idi = id[static_cast<size_t>((wy * ws + i / ws) * w + wx * ws + i % ws)];
        for (int64_t j = 0; j < t; ++j) {
          const int idj = id[static_cast<size_t>((wy * ws + j / ws) * w + wx * ws + j % ws)];
          if (idi != idj) mp[i * t + j] = static_cast<T>(-1e9);
        }
      }
    }
  }
  return mask;
}

template <typename T>
Var<T> channel_attention(Var<T> x, const LsmeVars<T>& p) {
  Var<T> s = vops::spatial_mean(x);  // [1,C]
  Var<T> g = vops::sigmoid(vops::linear(
      vops::relu(vops::linear(s, p.ca_fc1_w, p.ca_fc1_b)), p.ca_fc2_w, p.ca_fc2_b));
  return vops::scale_channels(x, g);
}

template <typename T>
Var<T> window_attention(Var<T> x, const LsmeVars<T>& p, const LsmeConfig& cfg) {
  check_config(cfg);
  Tape<T>& tp = tape_of(x);
  const int64_t C = cfg.channels, ws = cfg.window, heads = cfg.heads, dh = C / heads;
  int64_t H = 0, W = 0;
  {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 4 || xv.dim(0) != 1 || xv.dim(1) != C)
      throw Error("window_attention: expected [1," + std::to_string(C) + ",H,W], got " +
                  shape_str(xv.shape()));
    H = xv.dim(2);
    W = xv.dim(3);
    if (H % ws != 0 || W % ws != 0)
      throw Error("window_attention: extents " + shape_str(xv.shape()) +
                  " are not divisible by window " + std::to_string(ws));
  }
  const int64_t nw = (H / ws) * (W / ws), t = ws * ws;

  Var<T> xs = cfg.shift > 0 ? vops::roll2d(x, -cfg.shift, -cfg.shift) : x;
  Var<T> tok = window_partition(xs, static_cast<int>(ws));
  Var<T> qkv = vops::linear(tok, p.qkv_w, p.qkv_b);  // [nw, t, 3C]
  auto head_major = [&](int64_t off) {
    Var<T> u = vops::narrow(qkv, 2, off, C);
    u = vops::reshape(u, {nw, t, heads, dh});
    u = vops::permute(u, {0, 2, 1, 3});
    return vops::reshape(u, {nw * heads, t, dh});
  };
  Var<T> q = head_major(0);
  Var<T> k = head_major(C);
  Var<T> v = head_major(2 * C);

  Var<T> logits = vops::scale(vops::bmm(q, vops::transpose_last(k)),
                              static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto idx = std::make_shared<const std::vector<int32_t>>(rel_bias_index(static_cast<int>(ws)));
  logits = v_rel_bias_add(logits, p.rel_bias, idx, static_cast<int>(heads));
  if (cfg.shift > 0) {
    const Tensor<T> m = shift_attn_mask<T>(H, W, static_cast<int>(ws), cfg.shift);
    Tensor<T> expanded({nw * heads, t, t});
    for (int64_t b = 0; b < nw * heads; ++b) {
      const T* src = m.data() + (b / heads) * t * t;
      T* dst = expanded.data() + b * t * t;
      for (int64_t ij = 0; ij < t * t; ++ij) dst[ij] = src[ij];
    }
    logits = vops::add(logits, tp.constant(std::move(expanded)));
  }
  Var<T> attn = vops::softmax_last(logits);

  Var<T> o = vops::bmm(attn, v);  // [nw*heads, t, dh]
  o = vops::reshape(o, {nw, heads, t, dh});
  o = vops::permute(o, {0, 2, 1, 3});
  o = vops::reshape(o, {nw, t, C});
  o = vops::linear(o, p.proj_w, p.proj_b);
  Var<T> y = window_reverse(o, static_cast<int>(ws), C, H, W);
  return cfg.shift > 0 ? vops::roll2d(y, cfg.shift, cfg.shift) : y;
}

template <typename T>
Var<T> lsme_forward(Var<T> x, const LsmeVars<T>& p, const LsmeConfig& cfg) {
  check_config(cfg);
  Var<T> u = vops::layer_norm_chw(x, p.norm1_g, p.norm1_b);
  Var<T> a = cfg.ca_first ? window_attention(channel_attention(u, p), p, cfg)
                          : channel_attention(window_attention(u, p, cfg), p);
  Var<T> y = vops::add(x, a);
  return vops::add(y, gated_ffn_forward(vops::layer_norm_chw(y, p.norm2_g, p.norm2_b), p.ffn));
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_LSME(T)                                                     \
  template struct LsmeParams<T>;                                                     \
  template LsmeVars<T> bind(Tape<T>&, const LsmeParams<T>&, bool);                   \
  template Var<T> window_partition(Var<T>, int);                                     \
  template Var<T> window_reverse(Var<T>, int, int64_t, int64_t, int64_t);            \
  template Tensor<T> shift_attn_mask(int64_t, int64_t, int, int);                    \
  template Var<T> channel_attention(Var<T>, const LsmeVars<T>&);                     \
  template Var<T> window_attention(Var<T>, const LsmeVars<T>&, const LsmeConfig&);   \
  template Var<T> lsme_forward(Var<T>, const LsmeVars<T>&, const LsmeConfig&);

SPMM_INSTANTIATE_LSME(float)
SPMM_INSTANTIATE_LSME(double)
#undef SPMM_INSTANTIATE_LSME

}  // namespace spmm
