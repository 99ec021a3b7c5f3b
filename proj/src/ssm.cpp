#include "spmm/ssm.hpp"

#include <cmath>
#include <thread>

namespace spmm {
namespace {

// phi(u) = expm1(u)/u; series limit 1 below the discretisation threshold.
template <typename T>
inline T phi(T u) {
  if (std::abs(u) < T(1e-8)) return T(1);
  return std::expm1(u) / u;
}

// phi'(u) = (exp(u)*(u-1) + 1) / u^2, series 1/2 + u/3 + u^2/8 near zero
// (the closed form cancels catastrophically for small u).
template <typename T>
inline T phi_prime(T u) {
  if (std::abs(u) < T(1e-3)) return T(0.5) + u / T(3) + u * u / T(8);
  return (std::exp(u) * (u - T(1)) + T(1)) / (u * u);
}

template <typename T>
void check_scan_shapes(const Tensor<T>& abar, const Tensor<T>& bx, const char* op) {
  if (abar.rank() != 3)
    throw Error(std::string(op) + ": expected [L,C,d], got " + shape_str(abar.shape()));
  check_same_shape(abar, bx, op);
}

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

// ----- params ----------------------------------------------------------------

template <typename T>
SsmParams<T> SsmParams<T>::init(int channels, int d_state, Rng& rng) {
  const int64_t C = channels, D = d_state;
  SsmParams<T> p;
  p.a = Tensor<T>({C, D});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < D; ++i) p.a.at(c, i) = static_cast<T>(-(i + 1));
  p.d = Tensor<T>::ones({C});
  const double std_cd = std::min(0.02, 1.0 / std::sqrt(static_cast<double>(C)));
  auto fill = [&](Tensor<T>& t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(std_cd));
  };
  p.b_proj = Tensor<T>({D, C});
  p.c_proj = Tensor<T>({D, C});
  p.dt_proj_w = Tensor<T>({C, C});
  fill(p.b_proj);
  fill(p.c_proj);
  fill(p.dt_proj_w);
  p.dt_proj_b = Tensor<T>({C});
  for (int64_t c = 0; c < C; ++c) {
    const double target = rng.uniform(1e-2, 1e-1);  // softplus(bias) lands here
    p.dt_proj_b[c] = static_cast<T>(std::log(std::expm1(target)));
  }
  return p;
}

// ----- tensor-level kernels --------------------------------------------------

template <typename T>
void discretize(const Tensor<T>& dt, const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& abar,
                Tensor<T>& bbar) {
  if (dt.rank() != 2 || a.rank() != 2 || b.rank() != 2)
    throw Error("discretize: expected dt [L,C], a [C,d], b [L,d]");
  const int64_t L = dt.dim(0), C = dt.dim(1), D = a.dim(1);
  if (a.dim(0) != C)
    throw Error("discretize: a has " + std::to_string(a.dim(0)) + " channels, dt has " +
                std::to_string(C));
  if (b.dim(0) != L || b.dim(1) != D)
    throw Error("discretize: b shape " + shape_str(b.shape()) + " does not match [L,d]");
  abar = Tensor<T>({L, C, D});
  bbar = Tensor<T>({L, C, D});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) {
      const T dtv = dt[l * C + c];
      for (int64_t i = 0; i < D; ++i) {
        const T u = dtv * a[c * D + i];
        abar[(l * C + c) * D + i] = std::exp(u);
        bbar[(l * C + c) * D + i] = phi(u) * dtv * b[l * D + i];
      }
    }
}

template <typename T>
Tensor<T> scan_recurrent(const Tensor<T>& abar, const Tensor<T>& bx, ScanStats* stats) {
  check_scan_shapes(abar, bx, "scan_recurrent");
  const int64_t L = abar.dim(0), CD = abar.dim(1) * abar.dim(2);
  Tensor<T> h(abar.shape());
  for (int64_t j = 0; j < CD; ++j) {
    T state = T(0);
    for (int64_t t = 0; t < L; ++t) {
      state = abar[t * CD + j] * state + bx[t * CD + j];
      h[t * CD + j] = state;
    }
    if (stats) stats->flops += 2 * L;
  }
  return h;
}

template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& abar, const Tensor<T>& bx, ScanStats* stats,
                        int threads) {
  check_scan_shapes(abar, bx, "scan_parallel");
  const int64_t L = abar.dim(0), CD = abar.dim(1) * abar.dim(2);
  const int64_t Lp = next_pow2(L);
  Tensor<T> h(abar.shape());
  int64_t flops = 0;

  auto run_lane_range = [&](int64_t j0, int64_t j1) {
    std::vector<T> pa(static_cast<size_t>(Lp)), pb(static_cast<size_t>(Lp));
    for (int64_t j = j0; j < j1; ++j) {
      for (int64_t t = 0; t < L; ++t) {
        pa[static_cast<size_t>(t)] = abar[t * CD + j];
        pb[static_cast<size_t>(t)] = bx[t * CD + j];
      }
      for (int64_t t = L; t < Lp; ++t) {  // identity map padding
        pa[static_cast<size_t>(t)] = T(1);
        pb[static_cast<size_t>(t)] = T(0);
      }
      // Up-sweep: node i absorbs its left partner, in sequence order
      // (left first, then right): (a,b) := (a_r*a_l, a_r*b_l + b_r).
      for (int64_t step = 1; step < Lp; step <<= 1)
        for (int64_t i = 2 * step - 1; i < Lp; i += 2 * step) {
          const int64_t l = i - step;
          pb[static_cast<size_t>(i)] = pa[static_cast<size_t>(i)] * pb[static_cast<size_t>(l)] +
                                       pb[static_cast<size_t>(i)];
          pa[static_cast<size_t>(i)] = pa[static_cast<size_t>(i)] * pa[static_cast<size_t>(l)];
        }
      // Down-sweep turns subtree sums into exclusive prefixes.
      pa[static_cast<size_t>(Lp - 1)] = T(1);
      pb[static_cast<size_t>(Lp - 1)] = T(0);
      for (int64_t step = Lp >> 1; step >= 1; step >>= 1)
        for (int64_t i = 2 * step - 1; i < Lp; i += 2 * step) {
          const int64_t l = i - step;
          const T ta = pa[static_cast<size_t>(l)], tb = pb[static_cast<size_t>(l)];
          pa[static_cast<size_t>(l)] = pa[static_cast<size_t>(i)];
          pb[static_cast<size_t>(l)] = pb[static_cast<size_t>(i)];
          // right prefix = (left subtree sum) composed after the parent prefix
          pb[static_cast<size_t>(i)] = ta * pb[static_cast<size_t>(i)] + tb;
          pa[static_cast<size_t>(i)] = ta * pa[static_cast<size_t>(i)];
        }
      // Inclusive value: apply the original step map to the exclusive prefix.
      for (int64_t t = 0; t < L; ++t)
        h[t * CD + j] = abar[t * CD + j] * pb[static_cast<size_t>(t)] + bx[t * CD + j];
    }
  };

  const int nthreads = std::max(1, threads);
  if (nthreads == 1 || CD < 2) {
    run_lane_range(0, CD);
  } else {
    std::vector<std::thread> pool;
    const int64_t chunk = (CD + nthreads - 1) / nthreads;
    for (int64_t j0 = 0; j0 < CD; j0 += chunk)
      pool.emplace_back(run_lane_range, j0, std::min(CD, j0 + chunk));
    for (auto& th : pool) th.join();
  }
  // 3 flops per composition, 2(Lp-1) compositions per lane, plus the final
  // 2-flop application per element; a deterministic function of (L, C, d).
  flops = CD * (3 * 2 * (Lp - 1) + 2 * L);
  if (stats) stats->flops += flops;
  return h;
}

// ----- differentiable ops ----------------------------------------------------

template <typename T>
std::pair<Var<T>, Var<T>> v_discretize(Var<T> dt, Var<T> a, Var<T> b) {
  Tape<T>& t = *dt.tape;
  Tensor<T> abar, bbar;
  discretize(dt.value(), a.value(), b.value(), abar, bbar);
  if (!t.recording()) return {t.constant(std::move(abar)), t.constant(std::move(bbar))};

  // abar = exp(dt*a):
  //   d/d(dt) = abar * a,  d/d(a) = abar * dt.
  Var<T> vab = t.record(
      std::move(abar), {dt.id, a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
        const Tensor<T>& dtv = t.value(n.inputs[0]);
        const Tensor<T>& av = t.value(n.inputs[1]);
        const int64_t L = dtv.dim(0), C = dtv.dim(1), D = av.dim(1);
        Tensor<T> gdt(dtv.shape());
        Tensor<T> ga(av.shape());
        for (int64_t l = 0; l < L; ++l)
          for (int64_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (int64_t i = 0; i < D; ++i) {
              const T gab = n.grad[(l * C + c) * D + i] * n.value[(l * C + c) * D + i];
              acc += gab * av[c * D + i];
              ga[c * D + i] += gab * dtv[l * C + c];
            }
            gdt[l * C + c] = acc;
          }
        t.accumulate(n.inputs[0], gdt);
        t.accumulate(n.inputs[1], ga);
      });
  // bbar = dt * phi(dt*a) * b:
  //   d/d(dt) = (phi(u) + u*phi'(u)) * b      with u = dt*a
  //   d/d(a)  = dt^2 * phi'(u) * b
  //   d/d(b)  = dt * phi(u)
  Var<T> vbb = t.record(
      std::move(bbar), {dt.id, a.id, b.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
        const Tensor<T>& dtv = t.value(n.inputs[0]);
        const Tensor<T>& av = t.value(n.inputs[1]);
        const Tensor<T>& bv = t.value(n.inputs[2]);
        const int64_t L = dtv.dim(0), C = dtv.dim(1), D = av.dim(1);
        Tensor<T> gdt(dtv.shape());
        Tensor<T> ga(av.shape());
        Tensor<T> gb(bv.shape());
        for (int64_t l = 0; l < L; ++l)
          for (int64_t c = 0; c < C; ++c) {
            const T dtl = dtv[l * C + c];
            T acc = T(0);
            for (int64_t i = 0; i < D; ++i) {
              const T g = n.grad[(l * C + c) * D + i];
              const T u = dtl * av[c * D + i];
              const T ph = phi(u), dph = phi_prime(u);
              const T bval = bv[l * D + i];
              acc += g * (ph + u * dph) * bval;
              ga[c * D + i] += g * dtl * dtl * dph * bval;
              gb[l * D + i] += g * dtl * ph;
            }
            gdt[l * C + c] = acc;
          }
        t.accumulate(n.inputs[0], gdt);
        t.accumulate(n.inputs[1], ga);
        t.accumulate(n.inputs[2], gb);
      });
  return {vab, vbb};
}

template <typename T>
Var<T> v_scan(Var<T> abar, Var<T> bx, ScanKind kind, ScanStats* stats, int threads) {
  Tape<T>& t = *abar.tape;
  Tensor<T> h = kind == ScanKind::recurrent ? scan_recurrent(abar.value(), bx.value(), stats)
                                            : scan_parallel(abar.value(), bx.value(), stats,
                                                            threads);
  if (!t.recording()) return t.constant(std::move(h));
  // Reverse-time recurrence: G[t] = g[t] + abar[t+1]*G[t+1];
  // d/d(bx[t]) = G[t]; d/d(abar[t]) = G[t] * h[t-1].
  return t.record(std::move(h), {abar.id, bx.id},
                  [](Tape<T>& t, const typename Tape<T>::Node& n) {
                    const Tensor<T>& av = t.value(n.inputs[0]);
                    const Tensor<T>& hv = n.value;
                    const int64_t L = av.dim(0), CD = av.dim(1) * av.dim(2);
                    Tensor<T> ga(av.shape());
                    Tensor<T> gb(av.shape());
                    for (int64_t j = 0; j < CD; ++j) {
                      T acc = T(0);
                      for (int64_t tt = L - 1; tt >= 0; --tt) {
                        acc = n.grad[tt * CD + j] + (tt + 1 < L ? av[(tt + 1) * CD + j] : T(0)) * acc;
                        gb[tt * CD + j] = acc;
                        ga[tt * CD + j] = tt > 0 ? acc * hv[(tt - 1) * CD + j] : T(0);
                      }
                    }
                    t.accumulate(n.inputs[0], ga);
                    t.accumulate(n.inputs[1], gb);
                  });
}

template <typename T>
Var<T> v_scale_state(Var<T> bbar, Var<T> x) {
  Tape<T>& t = *bbar.tape;
  const Tensor<T>& bv = bbar.value();
  const Tensor<T>& xv = x.value();
  const int64_t L = bv.dim(0), C = bv.dim(1), D = bv.dim(2);
  if (xv.rank() != 2 || xv.dim(0) != L || xv.dim(1) != C)
    throw Error("scale_state: x shape " + shape_str(xv.shape()) + " does not match [L,C]");
  Tensor<T> out(bv.shape());
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < D; ++i)
        out[(l * C + c) * D + i] = bv[(l * C + c) * D + i] * xv[l * C + c];
  if (!t.recording()) return t.constant(std::move(out));
  return t.record(std::move(out), {bbar.id, x.id},
                  [](Tape<T>& t, const typename Tape<T>::Node& n) {
                    const Tensor<T>& bv = t.value(n.inputs[0]);
                    const Tensor<T>& xv = t.value(n.inputs[1]);
                    const int64_t L = bv.dim(0), C = bv.dim(1), D = bv.dim(2);
                    Tensor<T> gb(bv.shape());
                    Tensor<T> gx(xv.shape());
                    for (int64_t l = 0; l < L; ++l)
                      for (int64_t c = 0; c < C; ++c) {
                        T acc = T(0);
                        for (int64_t i = 0; i < D; ++i) {
                          const T g = n.grad[(l * C + c) * D + i];
                          gb[(l * C + c) * D + i] = g * xv[l * C + c];
                          acc += g * bv[(l * C + c) * D + i];
                        }
                        gx[l * C + c] = acc;
                      }
                    t.accumulate(n.inputs[0], gb);
                    t.accumulate(n.inputs[1], gx);
                  });
}

template <typename T>
Var<T> v_emit(Var<T> h, Var<T> cseq, Var<T> x, Var<T> dgain) {
  Tape<T>& t = *h.tape;
  const Tensor<T>& hv = h.value();
  const Tensor<T>& cv = cseq.value();
  const Tensor<T>& xv = x.value();
  const Tensor<T>& dv = dgain.value();
  const int64_t L = hv.dim(0), C = hv.dim(1), D = hv.dim(2);
  if (cv.rank() != 2 || cv.dim(0) != L || cv.dim(1) != D)
    throw Error("emit: c sequence shape " + shape_str(cv.shape()) + " does not match [L,d]");
  Tensor<T> y({L, C});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) {
      T acc = xv[l * C + c] * dv[c];
      for (int64_t i = 0; i < D; ++i) acc += hv[(l * C + c) * D + i] * cv[l * D + i];
      y[l * C + c] = acc;
    }
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(
      std::move(y), {h.id, cseq.id, x.id, dgain.id},
      [](Tape<T>& t, const typename Tape<T>::Node& n) {
        const Tensor<T>& hv = t.value(n.inputs[0]);
        const Tensor<T>& cv = t.value(n.inputs[1]);
        const Tensor<T>& xv = t.value(n.inputs[2]);
        const Tensor<T>& dv = t.value(n.inputs[3]);
        const int64_t L = hv.dim(0), C = hv.dim(1), D = hv.dim(2);
        Tensor<T> gh(hv.shape());
        Tensor<T> gc(cv.shape());
        Tensor<T> gx(xv.shape());
        Tensor<T> gd(dv.shape());
        for (int64_t l = 0; l < L; ++l)
          for (int64_t c = 0; c < C; ++c) {
            const T g = n.grad[l * C + c];
            for (int64_t i = 0; i < D; ++i) {
              gh[(l * C + c) * D + i] = g * cv[l * D + i];
              gc[l * D + i] += g * hv[(l * C + c) * D + i];
            }
            gx[l * C + c] = g * dv[c];
            gd[c] += g * xv[l * C + c];
          }
        t.accumulate(n.inputs[0], gh);
        t.accumulate(n.inputs[1], gc);
        t.accumulate(n.inputs[2], gx);
        t.accumulate(n.inputs[3], gd);
      });
}

namespace {

// Reverse the token axis of [L,C]; its own inverse, so backward re-flips.
template <typename T>
Var<T> v_flip_tokens(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.value();
  const int64_t L = xv.dim(0), C = xv.dim(1);
  Tensor<T> out(xv.shape());
  for (int64_t l = 0; l < L; ++l)
    for (int64_t c = 0; c < C; ++c) out[(L - 1 - l) * C + c] = xv[l * C + c];
  if (!t.recording()) return t.constant(std::move(out));
  return t.record(std::move(out), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const int64_t L = n.grad.dim(0), C = n.grad.dim(1);
    Tensor<T> g(n.grad.shape());
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c) g[(L - 1 - l) * C + c] = n.grad[l * C + c];
    t.accumulate(n.inputs[0], g);
  });
}

template <typename T>
Var<T> ssm_block_one_direction(Var<T> x, const SsmVars<T>& p, const SsmConfig& cfg,
                               ScanStats* stats) {
  Var<T> dt = vops::softplus(vops::linear(x, p.dt_proj_w, p.dt_proj_b));
  Var<T> bseq = vops::linear_nobias(x, p.b_proj);
  Var<T> cseq = vops::linear_nobias(x, p.c_proj);
  auto [abar, bbar] = v_discretize(dt, p.a, bseq);
  Var<T> bx = v_scale_state(bbar, x);
  Var<T> h = v_scan(abar, bx, cfg.scan, stats, cfg.threads);
  return v_emit(h, cseq, x, p.d);
}

}  // namespace

template <typename T>
Var<T> ssm_block(Var<T> x, const SsmVars<T>& p, const SsmConfig& cfg, ScanStats* stats) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2) throw Error("ssm_block: expected tokens [L,C], got " + shape_str(xv.shape()));
  if (xv.dim(1) != p.a.value().dim(0))
    throw Error("ssm_block: token width " + std::to_string(xv.dim(1)) +
                " does not match parameter channels " + std::to_string(p.a.value().dim(0)));
  Var<T> fwd = ssm_block_one_direction(x, p, cfg, stats);
  if (!cfg.bidirectional) return fwd;
  Var<T> rev = v_flip_tokens(ssm_block_one_direction(v_flip_tokens(x), p, cfg, stats));
  return vops::scale(vops::add(fwd, rev), T(0.5));
}

template <typename T>
SsmVars<T> bind(Tape<T>& t, const SsmParams<T>& p, bool requires_grad) {
  return SsmVars<T>{t.leaf(p.a, requires_grad),         t.leaf(p.d, requires_grad),
                    t.leaf(p.b_proj, requires_grad),    t.leaf(p.c_proj, requires_grad),
                    t.leaf(p.dt_proj_w, requires_grad), t.leaf(p.dt_proj_b, requires_grad)};
}

template <typename T>
Tensor<T> ssm_block_apply(const Tensor<T>& x, const SsmParams<T>& p, const SsmConfig& cfg,
                          ScanStats* stats) {
  Tape<T> t(false);
  return ssm_block(t.constant(x), bind(t, p, false), cfg, stats).value();
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_SSM(T)                                                              \
  template struct SsmParams<T>;                                                              \
  template void discretize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, \
                           Tensor<T>&);                                                      \
  template Tensor<T> scan_recurrent(const Tensor<T>&, const Tensor<T>&, ScanStats*);         \
  template Tensor<T> scan_parallel(const Tensor<T>&, const Tensor<T>&, ScanStats*, int);     \
  template std::pair<Var<T>, Var<T>> v_discretize(Var<T>, Var<T>, Var<T>);                   \
  template Var<T> v_scan(Var<T>, Var<T>, ScanKind, ScanStats*, int);                         \
  template Var<T> v_scale_state(Var<T>, Var<T>);                                             \
  template Var<T> v_emit(Var<T>, Var<T>, Var<T>, Var<T>);                                    \
  template SsmVars<T> bind(Tape<T>&, const SsmParams<T>&, bool);                             \
  template Var<T> ssm_block(Var<T>, const SsmVars<T>&, const SsmConfig&, ScanStats*);        \
  template Tensor<T> ssm_block_apply(const Tensor<T>&, const SsmParams<T>&, const SsmConfig&,\
                                     ScanStats*);

SPMM_INSTANTIATE_SSM(float)
SPMM_INSTANTIATE_SSM(double)
#undef SPMM_INSTANTIATE_SSM

}  // namespace spmm
