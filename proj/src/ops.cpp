#include "spmm/ops.hpp"

#include <algorithm>
#include <cmath>

namespace spmm::ops {
namespace {

template <typename T>
Tensor<T> map_unary(const Tensor<T>& a, T (*f)(T)) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <typename T>
T sigmoid_one(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_one(T x) {
  if (x > T(20)) return x;
  if (x < T(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

void check_rank4(const Shape& s, const char* op) {
  if (s.size() != 4)
    throw Error(std::string(op) + ": expected a rank-4 [B,C,H,W] tensor, got " + shape_str(s));
}

}  // namespace

// ----- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::abs(a[i]);
  return out;
}

template <typename T>
Tensor<T> sign(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    out[i] = a[i] > T(0) ? T(1) : (a[i] < T(0) ? T(-1) : T(0));
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * sigmoid_one(a[i]);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return map_unary<T>(a, &sigmoid_one<T>);
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return map_unary<T>(a, &softplus_one<T>);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> silu_grad(const Tensor<T>& x, const Tensor<T>& g) {
  check_same_shape(x, g, "silu_grad");
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T s = sigmoid_one(x[i]);
    out[i] = g[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_grad(const Tensor<T>& x, const Tensor<T>& g) {
  check_same_shape(x, g, "sigmoid_grad");
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T s = sigmoid_one(x[i]);
    out[i] = g[i] * s * (T(1) - s);
  }
  return out;
}

template <typename T>
Tensor<T> softplus_grad(const Tensor<T>& x, const Tensor<T>& g) {
  check_same_shape(x, g, "softplus_grad");
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = g[i] * sigmoid_one(x[i]);
  return out;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& x, const Tensor<T>& g) {
  check_same_shape(x, g, "relu_grad");
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? g[i] : T(0);
  return out;
}

// ----- reductions ------------------------------------------------------------

template <typename T>
T sum_all(const Tensor<T>& a) {
  T s = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
  return s;
}

template <typename T>
T mean_all(const Tensor<T>& a) {
  return sum_all(a) / static_cast<T>(a.numel());
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  for (int64_t i = 0; i < a.numel(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  check_rank4(x.shape(), "spatial_mean");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out({B, C});
  const T* px = x.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    T s = T(0);
    for (int64_t i = 0; i < HW; ++i) s += px[bc * HW + i];
    out[bc] = s / static_cast<T>(HW);
  }
  return out;
}

template <typename T>
Tensor<T> spatial_mean_grad(const Tensor<T>& g, const Shape& xshape) {
  const int64_t B = xshape[0], C = xshape[1], HW = xshape[2] * xshape[3];
  Tensor<T> out(xshape);
  T* po = out.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T v = g[bc] / static_cast<T>(HW);
    for (int64_t i = 0; i < HW; ++i) po[bc * HW + i] = v;
  }
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  check_rank4(x.shape(), "scale_channels");
  if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw Error("scale_channels: scale shape " + shape_str(s.shape()) +
                " does not match [B,C] of " + shape_str(x.shape()));
  const int64_t BC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t bc = 0; bc < BC; ++bc) {
    const T v = s[bc];
    for (int64_t i = 0; i < HW; ++i) po[bc * HW + i] = px[bc * HW + i] * v;
  }
  return out;
}

// ----- softmax / layer norm --------------------------------------------------

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  if (x.rank() < 1) throw Error("softmax_last: rank-0 input");
  const int64_t K = x.dim(-1), R = x.numel() / K;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (int64_t r = 0; r < R; ++r) {
    const T* row = px + r * K;
    T* orow = po + r * K;
    T m = row[0];
    for (int64_t k = 1; k < K; ++k) m = std::max(m, row[k]);
    T z = T(0);
    for (int64_t k = 0; k < K; ++k) {
      orow[k] = std::exp(row[k] - m);
      z += orow[k];
    }
    for (int64_t k = 0; k < K; ++k) orow[k] /= z;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_last_backward(const Tensor<T>& y, const Tensor<T>& g) {
  check_same_shape(y, g, "softmax_backward");
  const int64_t K = y.dim(-1), R = y.numel() / K;
  Tensor<T> out(y.shape());
  for (int64_t r = 0; r < R; ++r) {
    const T* yr = y.data() + r * K;
    const T* gr = g.data() + r * K;
    T* orow = out.data() + r * K;
    T dot = T(0);
    for (int64_t k = 0; k < K; ++k) dot += yr[k] * gr[k];
    for (int64_t k = 0; k < K; ++k) orow[k] = yr[k] * (gr[k] - dot);
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm_chw(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         T eps) {
  check_rank4(x.shape(), "layer_norm");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw Error("layer_norm: gamma/beta must have " + std::to_string(C) + " elements");
  Tensor<T> out(x.shape());
  const int64_t HW = H * W;
  const T* px = x.data();
  T* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T mu = T(0);
      for (int64_t c = 0; c < C; ++c) mu += px[(b * C + c) * HW + i];
      mu /= static_cast<T>(C);
      T var = T(0);
      for (int64_t c = 0; c < C; ++c) {
        const T d = px[(b * C + c) * HW + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T inv = T(1) / std::sqrt(var + eps);
      for (int64_t c = 0; c < C; ++c)
        po[(b * C + c) * HW + i] = gamma[c] * (px[(b * C + c) * HW + i] - mu) * inv + beta[c];
    }
  return out;
}

template <typename T>
void layer_norm_chw_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                             const Tensor<T>& g, Tensor<T>& gx, Tensor<T>& ggamma,
                             Tensor<T>& gbeta) {
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  gx = Tensor<T>(x.shape());
  ggamma = Tensor<T>({C});
  gbeta = Tensor<T>({C});
  const T* px = x.data();
  const T* pg = g.data();
  std::vector<T> xhat(static_cast<size_t>(C));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < HW; ++i) {
      T mu = T(0);
      for (int64_t c = 0; c < C; ++c) mu += px[(b * C + c) * HW + i];
      mu /= static_cast<T>(C);
      T var = T(0);
      for (int64_t c = 0; c < C; ++c) {
        const T d = px[(b * C + c) * HW + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T inv = T(1) / std::sqrt(var + eps);
      T mean_gh = T(0), mean_ghx = T(0);
      for (int64_t c = 0; c < C; ++c) {
        xhat[c] = (px[(b * C + c) * HW + i] - mu) * inv;
        const T gh = pg[(b * C + c) * HW + i] * gamma[c];
        mean_gh += gh;
        mean_ghx += gh * xhat[c];
      }
      mean_gh /= static_cast<T>(C);
      mean_ghx /= static_cast<T>(C);
      for (int64_t c = 0; c < C; ++c) {
        const T gv = pg[(b * C + c) * HW + i];
        const T gh = gv * gamma[c];
        gx.data()[(b * C + c) * HW + i] = inv * (gh - mean_gh - xhat[c] * mean_ghx);
        ggamma[c] += gv * xhat[c];
        gbeta[c] += gv;
      }
    }
}

// ----- convolution -----------------------------------------------------------

namespace {
struct ConvDims {
  int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo, cpg_in, cpg_out;
  int64_t ph, pw;
};

template <typename T>
ConvDims conv_dims(const Shape& xs, const Shape& ws, Pad pad, int groups, int stride) {
  if (stride != 1) throw Error("conv2d: only stride 1 is implemented");
  if (xs.size() != 4) throw Error("conv2d: input must be [B,Cin,H,W], got " + shape_str(xs));
  if (ws.size() != 4)
    throw Error("conv2d: weight must be [Cout,Cin/groups,kh,kw], got " + shape_str(ws));
  ConvDims d{};
  d.B = xs[0]; d.Cin = xs[1]; d.H = xs[2]; d.W = xs[3];
  d.Cout = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  if (groups < 1 || d.Cin % groups || d.Cout % groups)
    throw Error("conv2d: groups " + std::to_string(groups) + " must divide Cin " +
                std::to_string(d.Cin) + " and Cout " + std::to_string(d.Cout));
  d.cpg_in = d.Cin / groups;
  d.cpg_out = d.Cout / groups;
  if (ws[1] != d.cpg_in)
    throw Error("conv2d: weight axis 1 is " + std::to_string(ws[1]) + ", expected Cin/groups = " +
                std::to_string(d.cpg_in));
  if (pad == Pad::same) {
    if (d.kh % 2 == 0 || d.kw % 2 == 0)
      throw Error("conv2d: same padding requires odd kernel extents, got " +
                  std::to_string(d.kh) + "x" + std::to_string(d.kw));
    d.ph = (d.kh - 1) / 2;
    d.pw = (d.kw - 1) / 2;
    d.Ho = d.H;
    d.Wo = d.W;
  } else {
    d.ph = d.pw = 0;
    d.Ho = d.H - d.kh + 1;
    d.Wo = d.W - d.kw + 1;
    if (d.Ho < 1 || d.Wo < 1)
      throw Error("conv2d: kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                  " larger than input " + std::to_string(d.H) + "x" + std::to_string(d.W));
  }
  return d;
}
}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, Pad pad, int groups,
                 int stride) {
  const ConvDims d = conv_dims<T>(x.shape(), w.shape(), pad, groups, stride);
  if (b && b->numel() != d.Cout)
    throw Error("conv2d: bias has " + std::to_string(b->numel()) + " elements, expected " +
                std::to_string(d.Cout));
  Tensor<T> out({d.B, d.Cout, d.Ho, d.Wo});
  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  for (int64_t bi = 0; bi < d.B; ++bi)
    for (int64_t oc = 0; oc < d.Cout; ++oc) {
      const int64_t g = oc / d.cpg_out;
      T* obase = po + (bi * d.Cout + oc) * d.Ho * d.Wo;
      if (b) {
        const T bias = (*b)[oc];
        for (int64_t i = 0; i < d.Ho * d.Wo; ++i) obase[i] = bias;
      }
      for (int64_t icl = 0; icl < d.cpg_in; ++icl) {
        const int64_t ic = g * d.cpg_in + icl;
        const T* xbase = px + (bi * d.Cin + ic) * d.H * d.W;
        const T* wbase = pw + (oc * d.cpg_in + icl) * d.kh * d.kw;
        for (int64_t ky = 0; ky < d.kh; ++ky)
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const T wv = wbase[ky * d.kw + kx];
            const int64_t dy = ky - d.ph, dx = kx - d.pw;
            const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(d.Ho, d.H - dy);
            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(d.Wo, d.W - dx);
            for (int64_t y = y0; y < y1; ++y) {
              T* orow = obase + y * d.Wo;
              const T* xrow = xbase + (y + dy) * d.W + dx;
              for (int64_t xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
            }
          }
      }
    }
  return out;
}

template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape, Pad pad,
                            int groups) {
  const ConvDims d = conv_dims<T>(xshape, w.shape(), pad, groups, 1);
  Tensor<T> gx(xshape);
  const T* pg = g.data();
  const T* pw = w.data();
  T* px = gx.data();
  for (int64_t bi = 0; bi < d.B; ++bi)
    for (int64_t oc = 0; oc < d.Cout; ++oc) {
      const int64_t grp = oc / d.cpg_out;
      const T* gbase = pg + (bi * d.Cout + oc) * d.Ho * d.Wo;
      for (int64_t icl = 0; icl < d.cpg_in; ++icl) {
        const int64_t ic = grp * d.cpg_in + icl;
        T* xbase = px + (bi * d.Cin + ic) * d.H * d.W;
        const T* wbase = pw + (oc * d.cpg_in + icl) * d.kh * d.kw;
        for (int64_t ky = 0; ky < d.kh; ++ky)
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const T wv = wbase[ky * d.kw + kx];
            const int64_t dy = ky - d.ph, dx = kx - d.pw;
            const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(d.Ho, d.H - dy);
            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(d.Wo, d.W - dx);
            for (int64_t y = y0; y < y1; ++y) {
              const T* grow = gbase + y * d.Wo;
              T* xrow = xbase + (y + dy) * d.W + dx;
              for (int64_t xx = x0; xx < x1; ++xx) xrow[xx] += wv * grow[xx];
            }
          }
      }
    }
  return gx;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& g, const Tensor<T>& x, const Shape& wshape, Pad pad,
                             int groups) {
  const ConvDims d = conv_dims<T>(x.shape(), wshape, pad, groups, 1);
  Tensor<T> gw(wshape);
  const T* pg = g.data();
  const T* px = x.data();
  T* pw = gw.data();
  for (int64_t bi = 0; bi < d.B; ++bi)
    for (int64_t oc = 0; oc < d.Cout; ++oc) {
      const int64_t grp = oc / d.cpg_out;
      const T* gbase = pg + (bi * d.Cout + oc) * d.Ho * d.Wo;
      for (int64_t icl = 0; icl < d.cpg_in; ++icl) {
        const int64_t ic = grp * d.cpg_in + icl;
        const T* xbase = px + (bi * d.Cin + ic) * d.H * d.W;
        T* wbase = pw + (oc * d.cpg_in + icl) * d.kh * d.kw;
        for (int64_t ky = 0; ky < d.kh; ++ky)
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const int64_t dy = ky - d.ph, dx = kx - d.pw;
            const int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(d.Ho, d.H - dy);
            const int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(d.Wo, d.W - dx);
            T acc = T(0);
            for (int64_t y = y0; y < y1; ++y) {
              const T* grow = gbase + y * d.Wo;
              const T* xrow = xbase + (y + dy) * d.W + dx;
              for (int64_t xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
            }
            wbase[ky * d.kw + kx] += acc;
          }
      }
    }
  return gw;
}

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& g) {
  check_rank4(g.shape(), "conv2d_grad_bias");
  const int64_t B = g.dim(0), C = g.dim(1), HW = g.dim(2) * g.dim(3);
  Tensor<T> gb({C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      T s = T(0);
      const T* base = g.data() + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) s += base[i];
      gb[c] += s;
    }
  return gb;
}

// ----- resampling ------------------------------------------------------------

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int s) {
  check_rank4(x.shape(), "avg_pool2d");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (s < 1 || H % s || W % s)
    throw Error("avg_pool2d: factor " + std::to_string(s) + " must divide " + std::to_string(H) +
                "x" + std::to_string(W));
  const int64_t h = H / s, w = W / s;
  Tensor<T> out({B, C, h, w});
  const T inv = T(1) / static_cast<T>(s * s);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xbase = x.data() + bc * H * W;
    T* obase = out.data() + bc * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        T acc = T(0);
        for (int64_t dy = 0; dy < s; ++dy)
          for (int64_t dx = 0; dx < s; ++dx) acc += xbase[(y * s + dy) * W + (xx * s + dx)];
        obase[y * w + xx] = acc * inv;
      }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d_grad(const Tensor<T>& g, int s) {
  check_rank4(g.shape(), "avg_pool2d_grad");
  const int64_t B = g.dim(0), C = g.dim(1), h = g.dim(2), w = g.dim(3);
  Tensor<T> gx({B, C, h * s, w * s});
  const T inv = T(1) / static_cast<T>(s * s);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* gbase = g.data() + bc * h * w;
    T* xbase = gx.data() + bc * h * s * w * s;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        const T v = gbase[y * w + xx] * inv;
        for (int64_t dy = 0; dy < s; ++dy)
          for (int64_t dx = 0; dx < s; ++dx) xbase[(y * s + dy) * w * s + (xx * s + dx)] = v;
      }
  }
  return gx;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int s) {
  check_rank4(x.shape(), "upsample_nearest");
  const int64_t B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (s < 1) throw Error("upsample_nearest: factor must be >= 1");
  Tensor<T> out({B, C, h * s, w * s});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xbase = x.data() + bc * h * w;
    T* obase = out.data() + bc * h * s * w * s;
    for (int64_t y = 0; y < h * s; ++y)
      for (int64_t xx = 0; xx < w * s; ++xx)
        obase[y * w * s + xx] = xbase[(y / s) * w + (xx / s)];
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest_grad(const Tensor<T>& g, int s) {
  check_rank4(g.shape(), "upsample_nearest_grad");
  const int64_t B = g.dim(0), C = g.dim(1), H = g.dim(2), W = g.dim(3);
  if (H % s || W % s) throw Error("upsample_nearest_grad: extents must divide by the factor");
  Tensor<T> gx({B, C, H / s, W / s});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* gbase = g.data() + bc * H * W;
    T* xbase = gx.data() + bc * (H / s) * (W / s);
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) xbase[(y / s) * (W / s) + (xx / s)] += gbase[y * W + xx];
  }
  return gx;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  check_rank4(x.shape(), "pixel_shuffle");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % (r * r))
    throw Error("pixel_shuffle: channels " + std::to_string(C) + " not divisible by r^2 = " +
                std::to_string(r * r));
  const int64_t Co = C / (r * r);
  Tensor<T> out({B, Co, H * r, W * r});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t y = 0; y < H * r; ++y)
        for (int64_t xx = 0; xx < W * r; ++xx) {
          const int64_t ci = co * r * r + (y % r) * r + (xx % r);
          out.data()[((b * Co + co) * H * r + y) * W * r + xx] =
              x.data()[((b * C + ci) * H + y / r) * W + xx / r];
        }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  check_rank4(x.shape(), "pixel_unshuffle");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % r || W % r) throw Error("pixel_unshuffle: extents must divide by r");
  const int64_t Co = C * r * r, h = H / r, w = W / r;
  Tensor<T> out({B, Co, h, w});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const int64_t co = c * r * r + (y % r) * r + (xx % r);
          out.data()[((b * Co + co) * h + y / r) * w + xx / r] =
              x.data()[((b * C + c) * H + y) * W + xx];
        }
  return out;
}

// ----- linear / matmul -------------------------------------------------------

namespace {
template <typename T>
void check_linear(const Shape& xs, const Shape& ws, const Tensor<T>* b) {
  if (xs.empty()) throw Error("linear: rank-0 input");
  if (ws.size() != 2)
    throw Error("linear: weight must be [O,I], got " + shape_str(ws));
  if (xs.back() != ws[1])
    throw Error("linear: input feature axis " + std::to_string(xs.back()) +
                " does not match weight inner axis " + std::to_string(ws[1]));
  if (b && b->numel() != ws[0])
    throw Error("linear: bias has " + std::to_string(b->numel()) + " elements, expected " +
                std::to_string(ws[0]));
}
}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
  check_linear(x.shape(), w.shape(), b);
  const int64_t I = x.dim(-1), R = x.numel() / I, O = w.dim(0);
  Shape oshape = x.shape();
  oshape.back() = O;
  Tensor<T> out(std::move(oshape));
  for (int64_t r = 0; r < R; ++r) {
    const T* xr = x.data() + r * I;
    T* orow = out.data() + r * O;
    for (int64_t o = 0; o < O; ++o) {
      const T* wr = w.data() + o * I;
      T acc = b ? (*b)[o] : T(0);
      for (int64_t i = 0; i < I; ++i) acc += xr[i] * wr[i];
      orow[o] = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> linear_grad_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& xshape) {
  const int64_t I = xshape.back(), O = w.dim(0), R = shape_numel(xshape) / I;
  Tensor<T> gx(xshape);
  for (int64_t r = 0; r < R; ++r) {
    const T* gr = g.data() + r * O;
    T* xr = gx.data() + r * I;
    for (int64_t o = 0; o < O; ++o) {
      const T gv = gr[o];
      const T* wr = w.data() + o * I;
      for (int64_t i = 0; i < I; ++i) xr[i] += gv * wr[i];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> linear_grad_weight(const Tensor<T>& g, const Tensor<T>& x, const Shape& wshape) {
  const int64_t I = wshape[1], O = wshape[0], R = x.numel() / I;
  Tensor<T> gw(wshape);
  for (int64_t r = 0; r < R; ++r) {
    const T* gr = g.data() + r * O;
    const T* xr = x.data() + r * I;
    for (int64_t o = 0; o < O; ++o) {
      const T gv = gr[o];
      T* wr = gw.data() + o * I;
      for (int64_t i = 0; i < I; ++i) wr[i] += gv * xr[i];
    }
  }
  return gw;
}

template <typename T>
Tensor<T> linear_grad_bias(const Tensor<T>& g) {
  const int64_t O = g.dim(-1), R = g.numel() / O;
  Tensor<T> gb({O});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t o = 0; o < O; ++o) gb[o] += g.data()[r * O + o];
  return gb;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw Error("bmm: expected rank-3 inputs, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  const int64_t N = a.dim(0), m = a.dim(1), k = a.dim(2);
  if (b.dim(0) != N || b.dim(1) != k)
    throw Error("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  const int64_t n = b.dim(2);
  Tensor<T> out({N, m, n});
  for (int64_t bi = 0; bi < N; ++bi) {
    const T* A = a.data() + bi * m * k;
    const T* B = b.data() + bi * k * n;
    T* O = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = A[i * k + kk];
        const T* brow = B + kk * n;
        T* orow = O + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
  if (x.rank() < 2) throw Error("transpose_last: rank < 2");
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

// ----- index remapping -------------------------------------------------------

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r)
    throw Error("permute: " + std::to_string(axes.size()) + " axes for rank " + std::to_string(r));
  std::vector<char> seen(static_cast<size_t>(r), 0);
  Shape oshape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int a = axes[static_cast<size_t>(i)];
    if (a < 0 || a >= r || seen[static_cast<size_t>(a)])
      throw Error("permute: invalid axis list");
    seen[static_cast<size_t>(a)] = 1;
    oshape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(a)];
  }
  Tensor<T> out(oshape);
  const Shape xstr = shape_strides(x.shape());
  Shape idx(static_cast<size_t>(r), 0);
  const int64_t n = x.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i)
      src += idx[static_cast<size_t>(i)] * xstr[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    out[flat] = x[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < oshape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  return out;
}

std::vector<int> inverse_permutation(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
  return inv;
}

template <typename T>
Tensor<T> roll2d(const Tensor<T>& x, int dy, int dx) {
  if (x.rank() < 2) throw Error("roll2d: rank < 2");
  const int64_t H = x.dim(-2), W = x.dim(-1), outer = x.numel() / (H * W);
  auto mod = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
  Tensor<T> out(x.shape());
  for (int64_t o = 0; o < outer; ++o) {
    const T* xb = x.data() + o * H * W;
    T* ob = out.data() + o * H * W;
    for (int64_t y = 0; y < H; ++y) {
      const int64_t sy = mod(y - dy, H);
      for (int64_t xx = 0; xx < W; ++xx) ob[y * W + xx] = xb[sy * W + mod(xx - dx, W)];
    }
  }
  return out;
}

namespace {
// Symmetric reflection (edge included) folded modulo 2n, valid for any index.
inline int64_t reflect_index(int64_t j, int64_t n) {
  const int64_t p = 2 * n;
  int64_t m = j % p;
  if (m < 0) m += p;
  return m < n ? m : p - 1 - m;
}
}  // namespace

template <typename T>
Tensor<T> pad_reflect_br(const Tensor<T>& x, int pb, int pr) {
  check_rank4(x.shape(), "pad_reflect");
  if (pb < 0 || pr < 0) throw Error("pad_reflect: negative pad");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({B, C, H + pb, W + pr});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xb = x.data() + bc * H * W;
    T* ob = out.data() + bc * (H + pb) * (W + pr);
    for (int64_t y = 0; y < H + pb; ++y) {
      const int64_t sy = reflect_index(y, H);
      for (int64_t xx = 0; xx < W + pr; ++xx)
        ob[y * (W + pr) + xx] = xb[sy * W + reflect_index(xx, W)];
    }
  }
  return out;
}

template <typename T>
Tensor<T> pad_reflect_br_grad(const Tensor<T>& g, const Shape& xshape) {
  const int64_t B = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
  const int64_t Hp = g.dim(2), Wp = g.dim(3);
  Tensor<T> gx(xshape);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* gb = g.data() + bc * Hp * Wp;
    T* xb = gx.data() + bc * H * W;
    for (int64_t y = 0; y < Hp; ++y) {
      const int64_t sy = reflect_index(y, H);
      for (int64_t xx = 0; xx < Wp; ++xx) xb[sy * W + reflect_index(xx, W)] += gb[y * Wp + xx];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int64_t h, int64_t w) {
  if (x.rank() < 2) throw Error("crop2d: rank < 2");
  const int64_t H = x.dim(-2), W = x.dim(-1);
  if (h > H || w > W)
    throw Error("crop2d: crop " + std::to_string(h) + "x" + std::to_string(w) +
                " exceeds input " + std::to_string(H) + "x" + std::to_string(W));
  Shape oshape = x.shape();
  oshape[oshape.size() - 2] = h;
  oshape[oshape.size() - 1] = w;
  Tensor<T> out(oshape);
  const int64_t outer = x.numel() / (H * W);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx)
        out.data()[(o * h + y) * w + xx] = x.data()[(o * H + y) * W + xx];
  return out;
}

template <typename T>
Tensor<T> crop2d_grad(const Tensor<T>& g, const Shape& xshape) {
  const int64_t H = xshape[xshape.size() - 2], W = xshape.back();
  const int64_t h = g.dim(-2), w = g.dim(-1);
  Tensor<T> gx(xshape);
  const int64_t outer = g.numel() / (h * w);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx)
        gx.data()[(o * H + y) * W + xx] = g.data()[(o * h + y) * w + xx];
  return gx;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) throw Error("narrow: bad axis");
  const int64_t D = x.dim(axis);
  if (start < 0 || len < 1 || start + len > D)
    throw Error("narrow: slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of range for axis extent " + std::to_string(D));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor<T> out(oshape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(x.data() + (o * D + start + j) * inner, inner,
                  out.data() + (o * len + j) * inner);
  return out;
}

template <typename T>
Tensor<T> narrow_grad(const Tensor<T>& g, const Shape& xshape, int axis, int64_t start) {
  if (axis < 0) axis += static_cast<int>(xshape.size());
  const int64_t D = xshape[static_cast<size_t>(axis)];
  const int64_t len = g.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<int64_t>(xshape[static_cast<size_t>(i)]);
  for (size_t i = static_cast<size_t>(axis) + 1; i < xshape.size(); ++i) inner *= xshape[i];
  Tensor<T> gx(xshape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(g.data() + (o * len + j) * inner, inner,
                  gx.data() + (o * D + start + j) * inner);
  return gx;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& xs, int axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  const int r = xs[0]->rank();
  if (axis < 0) axis += r;
  int64_t total = 0;
  for (const auto* t : xs) {
    if (t->rank() != r) throw Error("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && t->dim(i) != xs[0]->dim(i))
        throw Error("concat: shape mismatch on axis " + std::to_string(i) + ": " +
                    shape_str(t->shape()) + " vs " + shape_str(xs[0]->shape()));
    total += t->dim(axis);
  }
  Shape oshape = xs[0]->shape();
  oshape[static_cast<size_t>(axis)] = total;
  Tensor<T> out(oshape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[0]->dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= xs[0]->dim(i);
  int64_t off = 0;
  for (const auto* t : xs) {
    const int64_t d = t->dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(t->data() + o * d * inner, d * inner,
                  out.data() + (o * total + off) * inner);
    off += d;
  }
  return out;
}

template <typename T>
Tensor<T> dihedral(const Tensor<T>& x, int k) {
  if (x.rank() != 4) throw Error("dihedral: expected rank-4 input, got " + shape_str(x.shape()));
  if (k < 0 || k >= 8) throw Error("dihedral: k must be in [0,8), got " + std::to_string(k));
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int rot = k & 3;
  const bool swap = (rot & 1) != 0;
  const int64_t Ho = swap ? W : H, Wo = swap ? H : W;
  Tensor<T> out({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* sp = x.data() + bc * H * W;
    T* dp = out.data() + bc * Ho * Wo;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        int64_t oy, ox;
        switch (rot) {
          case 0: oy = y; ox = xx; break;
          case 1: oy = W - 1 - xx; ox = y; break;
          case 2: oy = H - 1 - y; ox = W - 1 - xx; break;
          default: oy = xx; ox = H - 1 - y; break;
        }
        if (k & 4) ox = Wo - 1 - ox;
        dp[oy * Wo + ox] = sp[y * W + xx];
      }
  }
  return out;
}

int dihedral_inverse(int k) {
  if (k < 0 || k >= 8) throw Error("dihedral_inverse: k must be in [0,8), got " + std::to_string(k));
  // Rotations invert to the complementary rotation; the flipped elements are
  // reflections and therefore involutions.
  return k < 4 ? (4 - k) & 3 : k;
}

// ----- DFT -------------------------------------------------------------------

namespace {
struct Twiddles {
  std::vector<double> c, s;  // [K, N] tables of cos/sin(2*pi*k*n/N)
  int64_t K, N;
  Twiddles(int64_t k, int64_t n) : c(static_cast<size_t>(k * n)), s(static_cast<size_t>(k * n)), K(k), N(n) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    for (int64_t i = 0; i < k; ++i)
      for (int64_t j = 0; j < n; ++j) {
        const double th = two_pi * static_cast<double>((i * j) % n) / static_cast<double>(n);
        c[static_cast<size_t>(i * n + j)] = std::cos(th);
        s[static_cast<size_t>(i * n + j)] = std::sin(th);
      }
  }
};
}  // namespace

template <typename T>
void dft2(const Tensor<T>& x, Tensor<T>& re, Tensor<T>& im) {
  if (x.rank() < 2) throw Error("dft2: rank < 2");
  const int64_t H = x.dim(-2), W = x.dim(-1), outer = x.numel() / (H * W);
  re = Tensor<T>(x.shape());
  im = Tensor<T>(x.shape());
  const Twiddles tw(W, W), th(H, H);
  std::vector<double> rr(static_cast<size_t>(H * W)), ri(static_cast<size_t>(H * W));
  for (int64_t o = 0; o < outer; ++o) {
    const T* xb = x.data() + o * H * W;
    // Row transform along W.
    for (int64_t y = 0; y < H; ++y)
      for (int64_t v = 0; v < W; ++v) {
        double ar = 0, ai = 0;
        const double* cv = tw.c.data() + v * W;
        const double* sv = tw.s.data() + v * W;
        for (int64_t xx = 0; xx < W; ++xx) {
          const double val = static_cast<double>(xb[y * W + xx]);
          ar += val * cv[xx];
          ai -= val * sv[xx];
        }
        rr[static_cast<size_t>(y * W + v)] = ar;
        ri[static_cast<size_t>(y * W + v)] = ai;
      }
    // Column transform along H.
    T* reb = re.data() + o * H * W;
    T* imb = im.data() + o * H * W;
    for (int64_t u = 0; u < H; ++u) {
      const double* cu = th.c.data() + u * H;
      const double* su = th.s.data() + u * H;
      for (int64_t v = 0; v < W; ++v) {
        double ar = 0, ai = 0;
        for (int64_t y = 0; y < H; ++y) {
          const double r0 = rr[static_cast<size_t>(y * W + v)];
          const double i0 = ri[static_cast<size_t>(y * W + v)];
          ar += r0 * cu[y] + i0 * su[y];
          ai += i0 * cu[y] - r0 * su[y];
        }
        reb[u * W + v] = static_cast<T>(ar);
        imb[u * W + v] = static_cast<T>(ai);
      }
    }
  }
}

template <typename T>
Tensor<T> dft2_adjoint(const Tensor<T>& gre, const Tensor<T>& gim) {
  check_same_shape(gre, gim, "dft2_adjoint");
  if (gre.rank() < 2) throw Error("dft2_adjoint: rank < 2");
  const int64_t H = gre.dim(-2), W = gre.dim(-1), outer = gre.numel() / (H * W);
  Tensor<T> gx(gre.shape());
  const Twiddles tw(W, W), th(H, H);
  std::vector<double> ar(static_cast<size_t>(H * W)), ai(static_cast<size_t>(H * W));
  for (int64_t o = 0; o < outer; ++o) {
    const T* rb = gre.data() + o * H * W;
    const T* ib = gim.data() + o * H * W;
    // Column stage with e^{+i phi}.
    for (int64_t y = 0; y < H; ++y) {
      const double* cy = th.c.data() + y * H;
      const double* sy = th.s.data() + y * H;
      for (int64_t v = 0; v < W; ++v) {
        double sr = 0, si = 0;
        for (int64_t u = 0; u < H; ++u) {
          const double r0 = static_cast<double>(rb[u * W + v]);
          const double i0 = static_cast<double>(ib[u * W + v]);
          sr += r0 * cy[u] - i0 * sy[u];
          si += r0 * sy[u] + i0 * cy[u];
        }
        ar[static_cast<size_t>(y * W + v)] = sr;
        ai[static_cast<size_t>(y * W + v)] = si;
      }
    }
    // Row stage with e^{+i psi}; only the real part survives.
    T* xb = gx.data() + o * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const double* cx = tw.c.data() + xx * W;
        const double* sx = tw.s.data() + xx * W;
        double acc = 0;
        for (int64_t v = 0; v < W; ++v)
          acc += ar[static_cast<size_t>(y * W + v)] * cx[v] -
                 ai[static_cast<size_t>(y * W + v)] * sx[v];
        xb[y * W + xx] = static_cast<T>(acc);
      }
  }
  return gx;
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> abs(const Tensor<T>&);                                                  \
  template Tensor<T> sign(const Tensor<T>&);                                                 \
  template Tensor<T> silu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> softplus(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> silu_grad(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sigmoid_grad(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> softplus_grad(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> relu_grad(const Tensor<T>&, const Tensor<T>&);                          \
  template T sum_all(const Tensor<T>&);                                                      \
  template T mean_all(const Tensor<T>&);                                                     \
  template T max_abs(const Tensor<T>&);                                                      \
  template bool all_finite(const Tensor<T>&);                                                \
  template Tensor<T> spatial_mean(const Tensor<T>&);                                         \
  template Tensor<T> spatial_mean_grad(const Tensor<T>&, const Shape&);                      \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> softmax_last(const Tensor<T>&);                                         \
  template Tensor<T> softmax_last_backward(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> layer_norm_chw(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    T);                                                      \
  template void layer_norm_chw_backward(const Tensor<T>&, const Tensor<T>&, T,               \
                                        const Tensor<T>&, Tensor<T>&, Tensor<T>&,            \
                                        Tensor<T>&);                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, Pad, int,  \
                            int);                                                            \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&,     \
                                       Pad, int);                                            \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&,    \
                                        Pad, int);                                           \
  template Tensor<T> conv2d_grad_bias(const Tensor<T>&);                                     \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int);                                      \
  template Tensor<T> avg_pool2d_grad(const Tensor<T>&, int);                                 \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                \
  template Tensor<T> upsample_nearest_grad(const Tensor<T>&, int);                           \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                   \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);           \
  template Tensor<T> linear_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&);    \
  template Tensor<T> linear_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&);   \
  template Tensor<T> linear_grad_bias(const Tensor<T>&);                                     \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose_last(const Tensor<T>&);                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                     \
  template Tensor<T> roll2d(const Tensor<T>&, int, int);                                     \
  template Tensor<T> pad_reflect_br(const Tensor<T>&, int, int);                             \
  template Tensor<T> pad_reflect_br_grad(const Tensor<T>&, const Shape&);                    \
  template Tensor<T> crop2d(const Tensor<T>&, int64_t, int64_t);                             \
  template Tensor<T> crop2d_grad(const Tensor<T>&, const Shape&);                            \
  template Tensor<T> narrow(const Tensor<T>&, int, int64_t, int64_t);                        \
  template Tensor<T> narrow_grad(const Tensor<T>&, const Shape&, int, int64_t);              \
  template Tensor<T> concat(const std::vector<const Tensor<T>*>&, int);                      \
  template Tensor<T> dihedral(const Tensor<T>&, int);                                        \
  template void dft2(const Tensor<T>&, Tensor<T>&, Tensor<T>&);                              \
  template Tensor<T> dft2_adjoint(const Tensor<T>&, const Tensor<T>&);

SPMM_INSTANTIATE_OPS(float)
SPMM_INSTANTIATE_OPS(double)

}  // namespace spmm::ops
