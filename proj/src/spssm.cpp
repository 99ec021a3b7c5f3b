#include "spmm/spssm.hpp"

#include <cmath>

#include "spmm/ops.hpp"

namespace spmm {

namespace {

void check_config(const SpssmConfig& cfg) {
  if (cfg.channels <= 0) throw Error("spssm: channel count must be positive");
  if (cfg.scale < 1) throw Error("spssm: scale must be at least 1");
  if (cfg.sp_iters < 1) throw Error("spssm: need at least one clustering iteration");
}

}  // namespace

template <typename T>
SpssmParams<T> SpssmParams<T>::init(const SpssmConfig& cfg, Rng& rng) {
  check_config(cfg);
  const int64_t C = cfg.channels;
  SpssmParams<T> p;
  p.conv_w = Tensor<T>({C, 1, 3, 3});
  const double std_w = std::min(0.02, 1.0 / 3.0);  // fan-in 9
  for (int64_t i = 0; i < p.conv_w.numel(); ++i)
    p.conv_w[i] = static_cast<T>(rng.truncated_normal(std_w));
  p.conv_b = Tensor<T>::zeros({C});
  p.ssm = SsmParams<T>::init(static_cast<int>(C), cfg.ssm.d_state, rng);
  return p;
}

template <typename T>
SpssmVars<T> bind(Tape<T>& t, const SpssmParams<T>& p, bool requires_grad) {
  return SpssmVars<T>{t.leaf(p.conv_w, requires_grad), t.leaf(p.conv_b, requires_grad),
                      bind(t, p.ssm, requires_grad)};
}

template <typename T>
Var<T> spssm_forward(Var<T> x, const SpssmVars<T>& p, const SpssmConfig& cfg,
                     const GumbelMode& mask, Rng* rng, ScanStats* stats) {
  check_config(cfg);
  const int64_t C = cfg.channels;
  {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 4 || xv.dim(0) != 1 || xv.dim(1) != C)
      throw Error("spssm: expected a single-sample map [1," + std::to_string(C) + ",H,W], got " +
                  shape_str(xv.shape()));
    if (xv.dim(2) % cfg.scale != 0 || xv.dim(3) % cfg.scale != 0)
      throw Error("spssm: extents " + shape_str(xv.shape()) + " are not divisible by scale " +
                  std::to_string(cfg.scale));
  }
  const int64_t H = x.value().dim(2), W = x.value().dim(3);
  const int64_t h = H / cfg.scale, w = W / cfg.scale;
  const SuperpixelGrid grid = SuperpixelGrid::make_square(h, w, cfg.tokens);

  Var<T> xf = vops::silu(vops::conv2d(x, p.conv_w, p.conv_b, ops::Pad::same,
                                      static_cast<int>(C)));
  Var<T> xd = cfg.scale > 1 ? vops::avg_pool2d(xf, cfg.scale) : xf;
  Var<T> pix = vops::transpose_last(vops::reshape(xd, {C, h * w}));  // [N,C]

  SuperpixelSampleV<T> sp = v_sample(pix, grid, cfg.sp_iters);
  Var<T> tok = ssm_block(sp.features, p.ssm, cfg.ssm, stats);
  Var<T> mw = v_gumbel_mask(sp.assoc, sp.table, mask, rng);
  Var<T> gate = vops::sigmoid(v_scatter(mw, tok, sp.table));  // [N,C]

  if (cfg.fuse_full_res) {
    Var<T> gmap = vops::reshape(vops::transpose_last(gate), {1, C, h, w});
    Var<T> up = cfg.scale > 1 ? vops::upsample_nearest(gmap, cfg.scale) : gmap;
    return vops::add(vops::mul(up, xf), x);
  }
  Var<T> gmap = vops::reshape(vops::transpose_last(vops::mul(gate, pix)), {1, C, h, w});
  Var<T> up = cfg.scale > 1 ? vops::upsample_nearest(gmap, cfg.scale) : gmap;
  return vops::add(up, x);
}

template <typename T>
Tensor<T> spssm_apply(const Tensor<T>& x, const SpssmParams<T>& p, const SpssmConfig& cfg,
                      const GumbelMode& mask, Rng* rng, ScanStats* stats) {
  Tape<T> t(false);
  return spssm_forward(t.constant(x), bind(t, p, false), cfg, mask, rng, stats).value();
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_SPSSM(T)                                                          \
  template struct SpssmParams<T>;                                                          \
  template SpssmVars<T> bind(Tape<T>&, const SpssmParams<T>&, bool);                       \
  template Var<T> spssm_forward(Var<T>, const SpssmVars<T>&, const SpssmConfig&,           \
                                const GumbelMode&, Rng*, ScanStats*);                      \
  template Tensor<T> spssm_apply(const Tensor<T>&, const SpssmParams<T>&, const            \
                                 SpssmConfig&, const GumbelMode&, Rng*, ScanStats*);

SPMM_INSTANTIATE_SPSSM(float)
SPMM_INSTANTIATE_SPSSM(double)
#undef SPMM_INSTANTIATE_SPSSM

}  // namespace spmm
