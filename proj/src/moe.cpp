#include "spmm/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spmm/ops.hpp"

namespace spmm {

namespace {

void check_config(const MoeConfig& cfg) {
  if (cfg.channels <= 0) throw Error("moe: channel count must be positive");
  if (cfg.scales.empty()) throw Error("moe: need at least one expert scale");
  for (int s : cfg.scales)
    if (s < 1) throw Error("moe: expert scales must be at least 1");
  if (cfg.top_k < 1 || cfg.top_k > cfg.experts())
    throw Error("moe: top_k " + std::to_string(cfg.top_k) + " outside [1," +
                std::to_string(cfg.experts()) + "]");
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double std_dev = std::min(0.02, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(std_dev));
  return t;
}

}  // namespace

SpssmConfig MoeConfig::expert(size_t i) const {
  if (i >= scales.size()) throw Error("moe: expert index " + std::to_string(i) + " out of range");
  SpssmConfig e;
  e.channels = channels;
  e.scale = scales[i];
  e.tokens = tokens;
  e.sp_iters = sp_iters;
  e.fuse_full_res = fuse_full_res;
  e.ssm = ssm;
  return e;
}

template <typename T>
MoeParams<T> MoeParams<T>::init(const MoeConfig& cfg, Rng& rng) {
  check_config(cfg);
  const int64_t C = cfg.channels, n = cfg.experts();
  MoeParams<T> p;
  p.entry_w = trunc_normal<T>({2 * C, C, 1, 1}, C, rng);
  p.entry_b = Tensor<T>::zeros({2 * C});
  p.experts.reserve(static_cast<size_t>(n));
  for (size_t i = 0; i < cfg.scales.size(); ++i)
    p.experts.push_back(SpssmParams<T>::init(cfg.expert(i), rng));
  p.router_w = trunc_normal<T>({n, C}, C, rng);
  p.router_b = Tensor<T>::zeros({n});
  p.exit_w = trunc_normal<T>({C, C, 1, 1}, C, rng);
  p.exit_b = Tensor<T>::zeros({C});
  return p;
}

template <typename T>
MoeVars<T> bind(Tape<T>& t, const MoeParams<T>& p, bool requires_grad) {
  MoeVars<T> v;
  v.entry_w = t.leaf(p.entry_w, requires_grad);
  v.entry_b = t.leaf(p.entry_b, requires_grad);
  v.experts.reserve(p.experts.size());
  for (const auto& e : p.experts) v.experts.push_back(bind(t, e, requires_grad));
  v.router_w = t.leaf(p.router_w, requires_grad);
  v.router_b = t.leaf(p.router_b, requires_grad);
  v.exit_w = t.leaf(p.exit_w, requires_grad);
  v.exit_b = t.leaf(p.exit_b, requires_grad);
  return v;
}

template <typename T>
Var<T> moe_forward(Var<T> x, const MoeVars<T>& p, const MoeConfig& cfg, const RunMode& mode,
                   Rng* rng, ScanStats* scan_stats, MoeRunStats* run_stats) {
  check_config(cfg);
  const int64_t C = cfg.channels, n = cfg.experts();
  if (static_cast<int64_t>(p.experts.size()) != n)
    throw Error("moe: bound expert count " + std::to_string(p.experts.size()) +
                " does not match config " + std::to_string(n));
  {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 4 || xv.dim(0) != 1 || xv.dim(1) != C)
      throw Error("moe: expected a single-sample map [1," + std::to_string(C) + ",H,W], got " +
                  shape_str(xv.shape()));
  }

  Var<T> both = vops::conv2d(x, p.entry_w, p.entry_b);
  Var<T> x1 = vops::narrow(both, 1, 0, C);
  Var<T> x2 = vops::narrow(both, 1, C, C);
  Var<T> r = vops::softmax_last(vops::linear(vops::spatial_mean(x2), p.router_w, p.router_b));
  Var<T> rflat = vops::reshape(r, {n});

  // Expert selection: every expert in the dense mixture, otherwise the top-k
  // router probabilities (ties to the lowest index).
  std::vector<int64_t> chosen;
  if (mode.dense_mixture || cfg.top_k == n) {
    chosen.resize(static_cast<size_t>(n));
    std::iota(chosen.begin(), chosen.end(), 0);
  } else {
    const Tensor<T>& rv = rflat.value();
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return rv[a] > rv[b]; });
    chosen.assign(order.begin(), order.begin() + cfg.top_k);
    std::sort(chosen.begin(), chosen.end());  // run in index order
  }

  // Mixture weights: raw router mass when dense, renormalised over the chosen
  // set otherwise.
  std::vector<Var<T>> weight;
  weight.reserve(chosen.size());
  if (mode.dense_mixture) {
    for (int64_t i : chosen) weight.push_back(vops::narrow(rflat, 0, i, 1));
  } else {
    Var<T> denom = vops::narrow(rflat, 0, chosen[0], 1);
    for (size_t k = 1; k < chosen.size(); ++k)
      denom = vops::add(denom, vops::narrow(rflat, 0, chosen[k], 1));
    Var<T> inv = vops::reciprocal(denom);
    for (int64_t i : chosen)
      weight.push_back(vops::mul(vops::narrow(rflat, 0, i, 1), inv));
  }

  if (run_stats) {
    run_stats->executed.resize(static_cast<size_t>(n), 0);
    run_stats->dispatches += 1;
  }
  Var<T> mix;
  for (size_t k = 0; k < chosen.size(); ++k) {
    const size_t i = static_cast<size_t>(chosen[k]);
    Var<T> e = spssm_forward(x1, p.experts[i], cfg.expert(i), mode.mask, rng, scan_stats);
    if (run_stats) run_stats->executed[i] += 1;
    Var<T> term = vops::scale_by(e, weight[k]);
    mix = k == 0 ? term : vops::add(mix, term);
  }

  Var<T> gated = vops::mul(mix, vops::silu(x2));
  return vops::conv2d(gated, p.exit_w, p.exit_b);
}

// ----- gated feed-forward ----------------------------------------------------

template <typename T>
GatedFfnParams<T> GatedFfnParams<T>::init(int64_t channels, Rng& rng) {
  if (channels <= 0) throw Error("gated_ffn: channel count must be positive");
  const int64_t C = channels;
  GatedFfnParams<T> p;
  p.entry_w = trunc_normal<T>({4 * C, C, 1, 1}, C, rng);
  p.entry_b = Tensor<T>::zeros({4 * C});
  p.dw_w = trunc_normal<T>({2 * C, 1, 3, 3}, 9, rng);
  p.dw_b = Tensor<T>::zeros({2 * C});
  p.exit_w = trunc_normal<T>({C, 2 * C, 1, 1}, 2 * C, rng);
  p.exit_b = Tensor<T>::zeros({C});
  return p;
}

template <typename T>
GatedFfnVars<T> bind(Tape<T>& t, const GatedFfnParams<T>& p, bool requires_grad) {
  return GatedFfnVars<T>{t.leaf(p.entry_w, requires_grad), t.leaf(p.entry_b, requires_grad),
                         t.leaf(p.dw_w, requires_grad),    t.leaf(p.dw_b, requires_grad),
                         t.leaf(p.exit_w, requires_grad),  t.leaf(p.exit_b, requires_grad)};
}

template <typename T>
Var<T> gated_ffn_forward(Var<T> x, const GatedFfnVars<T>& p) {
  const int64_t twoC = p.dw_w.value().dim(0);
  Var<T> mid = vops::conv2d(x, p.entry_w, p.entry_b);
  Var<T> gate = vops::narrow(mid, 1, 0, twoC);
  Var<T> val = vops::narrow(mid, 1, twoC, twoC);
  Var<T> vald = vops::conv2d(val, p.dw_w, p.dw_b, ops::Pad::same, static_cast<int>(twoC));
  return vops::conv2d(vops::mul(vops::silu(gate), vald), p.exit_w, p.exit_b);
}

// ----- mixture block ---------------------------------------------------------

template <typename T>
SgmeParams<T> SgmeParams<T>::init(const MoeConfig& cfg, Rng& rng) {
  check_config(cfg);
  SgmeParams<T> p;
  p.norm1_g = Tensor<T>::ones({cfg.channels});
  p.norm1_b = Tensor<T>::zeros({cfg.channels});
  p.moe = MoeParams<T>::init(cfg, rng);
  p.norm2_g = Tensor<T>::ones({cfg.channels});
  p.norm2_b = Tensor<T>::zeros({cfg.channels});
  p.ffn = GatedFfnParams<T>::init(cfg.channels, rng);
  return p;
}

template <typename T>
SgmeVars<T> bind(Tape<T>& t, const SgmeParams<T>& p, bool requires_grad) {
  SgmeVars<T> v;
  v.norm1_g = t.leaf(p.norm1_g, requires_grad);
  v.norm1_b = t.leaf(p.norm1_b, requires_grad);
  v.moe = bind(t, p.moe, requires_grad);
  v.norm2_g = t.leaf(p.norm2_g, requires_grad);
  v.norm2_b = t.leaf(p.norm2_b, requires_grad);
  v.ffn = bind(t, p.ffn, requires_grad);
  return v;
}

template <typename T>
Var<T> sgme_forward(Var<T> x, const SgmeVars<T>& p, const MoeConfig& cfg, const RunMode& mode,
                    Rng* rng, ScanStats* scan_stats, MoeRunStats* run_stats) {
  Var<T> y = vops::add(
      x, moe_forward(vops::layer_norm_chw(x, p.norm1_g, p.norm1_b), p.moe, cfg, mode, rng,
                     scan_stats, run_stats));
  return vops::add(y, gated_ffn_forward(vops::layer_norm_chw(y, p.norm2_g, p.norm2_b), p.ffn));
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_MOE(T)                                                              \
  template struct MoeParams<T>;                                                              \
  template MoeVars<T> bind(Tape<T>&, const MoeParams<T>&, bool);                             \
  template Var<T> moe_forward(Var<T>, const MoeVars<T>&, const MoeConfig&, const RunMode&,   \
                              Rng*, ScanStats*, MoeRunStats*);                               \
  template struct GatedFfnParams<T>;                                                         \
  template GatedFfnVars<T> bind(Tape<T>&, const GatedFfnParams<T>&, bool);                   \
  template Var<T> gated_ffn_forward(Var<T>, const GatedFfnVars<T>&);                         \
  template struct SgmeParams<T>;                                                             \
  template SgmeVars<T> bind(Tape<T>&, const SgmeParams<T>&, bool);                           \
  template Var<T> sgme_forward(Var<T>, const SgmeVars<T>&, const MoeConfig&, const RunMode&, \
                               Rng*, ScanStats*, MoeRunStats*);

SPMM_INSTANTIATE_MOE(float)
SPMM_INSTANTIATE_MOE(double)
#undef SPMM_INSTANTIATE_MOE

}  // namespace spmm
