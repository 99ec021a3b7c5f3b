#include "spmm/superpixel.hpp"

#include <cmath>
#include <utility>

namespace spmm {

SuperpixelGrid SuperpixelGrid::make(int64_t h, int64_t w, int64_t gh, int64_t gw) {
  if (h <= 0 || w <= 0 || gh <= 0 || gw <= 0)
    throw Error("superpixel grid: extents must be positive, got map " + std::to_string(h) + "x" +
                std::to_string(w) + " grid " + std::to_string(gh) + "x" + std::to_string(gw));
  if (h % gh != 0 || w % gw != 0)
    throw Error("superpixel grid: cells must tile the map exactly; " + std::to_string(h) + "x" +
                std::to_string(w) + " is not divisible by grid " + std::to_string(gh) + "x" +
                std::to_string(gw));
  return SuperpixelGrid{h, w, gh, gw};
}

SuperpixelGrid SuperpixelGrid::make_square(int64_t h, int64_t w, int64_t m) {
  auto g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(m))));
  if (g * g != m)
    throw Error("superpixel grid: token count " + std::to_string(m) + " is not a perfect square");
  return make(h, w, g, g);
}

CandidateTable build_candidates(const SuperpixelGrid& grid) {
  CandidateTable table;
  table.n = grid.pixels();
  table.m = grid.count();
  table.cand.assign(static_cast<size_t>(table.n) * kSlots, -1);
  const int64_t ch = grid.cell_h(), cw = grid.cell_w();
  for (int64_t y = 0; y < grid.h; ++y) {
    for (int64_t x = 0; x < grid.w; ++x) {
      const int64_t i = y * grid.w + x;
      const int64_t cy = y / ch, cx = x / cw;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t ny = cy + dy, nx = cx + dx;
          if (ny < 0 || ny >= grid.gh || nx < 0 || nx >= grid.gw) continue;
          const int64_t q = (dy + 1) * 3 + (dx + 1);
          table.cand[static_cast<size_t>(i * kSlots + q)] = static_cast<int32_t>(ny * grid.gw + nx);
        }
      }
    }
  }
  return table;
}

TablePtr build_candidates_shared(const SuperpixelGrid& grid) {
  return std::make_shared<const CandidateTable>(build_candidates(grid));
}

namespace {

inline int32_t cand_at(const CandidateTable& tb, int64_t i, int q) {
  return tb.cand[static_cast<size_t>(i * kSlots + q)];
}

template <typename T>
void check_pixel_features(const Tensor<T>& x, int64_t n, const char* op) {
  if (x.rank() != 2 || x.dim(0) != n)
    throw Error(std::string(op) + ": expected pixel features [N,C] with N=" + std::to_string(n) +
                ", got " + shape_str(x.shape()));
}

template <typename T>
void check_tokens(const Tensor<T>& s, int64_t m, int64_t c, const char* op) {
  if (s.rank() != 2 || s.dim(0) != m || (c >= 0 && s.dim(1) != c))
    throw Error(std::string(op) + ": expected superpixel features [" + std::to_string(m) + "," +
                (c >= 0 ? std::to_string(c) : std::string("C")) + "], got " + shape_str(s.shape()));
}

template <typename T>
void check_slots(const Tensor<T>& sim, int64_t n, const char* op) {
  if (sim.rank() != 2 || sim.dim(0) != n || sim.dim(1) != kSlots)
    throw Error(std::string(op) + ": expected slot weights [N,9] with N=" + std::to_string(n) +
                ", got " + shape_str(sim.shape()));
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.defined()) throw Error("superpixel: undefined variable");
  return *a.tape;
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw Error("superpixel: operands live on different tapes");
}

}  // namespace

template <typename T>
Tensor<T> init_superpixels(const Tensor<T>& x, const SuperpixelGrid& grid) {
  check_pixel_features(x, grid.pixels(), "init_superpixels");
  const int64_t c = x.dim(1), ch = grid.cell_h(), cw = grid.cell_w();
  Tensor<T> s = Tensor<T>::zeros({grid.count(), c});
  const T inv = T(1) / static_cast<T>(ch * cw);
  for (int64_t y = 0; y < grid.h; ++y) {
    for (int64_t xx = 0; xx < grid.w; ++xx) {
      const int64_t j = (y / ch) * grid.gw + (xx / cw);
      const T* xp = x.data() + (y * grid.w + xx) * c;
      T* sp = s.data() + j * c;
      for (int64_t k = 0; k < c; ++k) sp[k] += xp[k] * inv;
    }
  }
  return s;
}

template <typename T>
Tensor<T> similarity_step(const Tensor<T>& x, const Tensor<T>& s, const CandidateTable& table) {
  check_pixel_features(x, table.n, "similarity_step");
  check_tokens(s, table.m, x.dim(1), "similarity_step");
  const int64_t c = x.dim(1);
  Tensor<T> sim = Tensor<T>::zeros({table.n, static_cast<int64_t>(kSlots)});
  for (int64_t i = 0; i < table.n; ++i) {
    const T* xp = x.data() + i * c;
    for (int q = 0; q < kSlots; ++q) {
      const int32_t j = cand_at(table, i, q);
      if (j < 0) continue;
      const T* sp = s.data() + static_cast<int64_t>(j) * c;
      T d2 = 0;
      for (int64_t k = 0; k < c; ++k) {
        const T d = xp[k] - sp[k];
        d2 += d * d;
      }
      sim[i * kSlots + q] = std::exp(-d2);
    }
  }
  return sim;
}

template <typename T>
Tensor<T> update_superpixels(const Tensor<T>& x, const Tensor<T>& sim, const Tensor<T>& s_prev,
                             const CandidateTable& table) {
  check_pixel_features(x, table.n, "update_superpixels");
  check_slots(sim, table.n, "update_superpixels");
  check_tokens(s_prev, table.m, x.dim(1), "update_superpixels");
  const int64_t c = x.dim(1);
  Tensor<T> num = Tensor<T>::zeros({table.m, c});
  std::vector<T> z(static_cast<size_t>(table.m), T(0));
  for (int64_t i = 0; i < table.n; ++i) {
    const T* xp = x.data() + i * c;
    for (int q = 0; q < kSlots; ++q) {
      const int32_t j = cand_at(table, i, q);
      if (j < 0) continue;
      const T w = sim[i * kSlots + q];
      if (w == T(0)) continue;
      T* np = num.data() + static_cast<int64_t>(j) * c;
      for (int64_t k = 0; k < c; ++k) np[k] += w * xp[k];
      z[static_cast<size_t>(j)] += w;
    }
  }
  Tensor<T> out = Tensor<T>::zeros({table.m, c});
  for (int64_t j = 0; j < table.m; ++j) {
    const T zj = z[static_cast<size_t>(j)];
    T* op = out.data() + j * c;
    if (zj == T(0)) {  // no mass at all: keep the previous superpixel
      const T* pp = s_prev.data() + j * c;
      for (int64_t k = 0; k < c; ++k) op[k] = pp[k];
      continue;
    }
    const T zc = std::max(zj, static_cast<T>(kAssocFloor));
    const T* np = num.data() + j * c;
    for (int64_t k = 0; k < c; ++k) op[k] = np[k] / zc;
  }
  return out;
}

template <typename T>
Tensor<T> row_normalize(const Tensor<T>& sim, const CandidateTable& table) {
  check_slots(sim, table.n, "row_normalize");
  Tensor<T> out = Tensor<T>::zeros(sim.shape());
  for (int64_t i = 0; i < table.n; ++i) {
    T s = 0;
    for (int q = 0; q < kSlots; ++q)
      if (cand_at(table, i, q) >= 0) s += sim[i * kSlots + q];
    const T sc = std::max(s, static_cast<T>(kAssocFloor));
    for (int q = 0; q < kSlots; ++q)
      if (cand_at(table, i, q) >= 0) out[i * kSlots + q] = sim[i * kSlots + q] / sc;
  }
  return out;
}

template <typename T>
std::vector<int32_t> hard_mask(const Tensor<T>& sim, const CandidateTable& table) {
  check_slots(sim, table.n, "hard_mask");
  std::vector<int32_t> mask(static_cast<size_t>(table.n), -1);
  for (int64_t i = 0; i < table.n; ++i) {
    T best = -1;
    int32_t bestj = -1;
    // Slot order visits candidates in increasing superpixel index, so keeping
    // the first strict maximum breaks ties toward the lowest index.
    for (int q = 0; q < kSlots; ++q) {
      const int32_t j = cand_at(table, i, q);
      if (j < 0) continue;
      const T w = sim[i * kSlots + q];
      if (bestj < 0 || w > best) {
        best = w;
        bestj = j;
      }
    }
    mask[static_cast<size_t>(i)] = bestj;
  }
  return mask;
}

template <typename T>
SuperpixelSample<T> sample(const Tensor<T>& x, const SuperpixelGrid& grid, int iters) {
  if (iters < 1) throw Error("superpixel sample: need at least one iteration");
  SuperpixelSample<T> out;
  out.table = build_candidates(grid);
  Tensor<T> s = init_superpixels(x, grid);
  Tensor<T> sim;
  for (int t = 0; t < iters; ++t) {
    sim = similarity_step(x, s, out.table);
    s = update_superpixels(x, sim, s, out.table);
  }
  out.features = std::move(s);
  out.assoc = row_normalize(sim, out.table);
  out.mask = hard_mask(sim, out.table);
  out.sim = std::move(sim);
  return out;
}

template <typename T>
Tensor<T> scatter(const Tensor<T>& weights, const Tensor<T>& tokens, const CandidateTable& table) {
  check_slots(weights, table.n, "scatter");
  check_tokens(tokens, table.m, int64_t{-1}, "scatter");
  const int64_t c = tokens.dim(1);
  Tensor<T> out = Tensor<T>::zeros({table.n, c});
  for (int64_t i = 0; i < table.n; ++i) {
    T* op = out.data() + i * c;
    for (int q = 0; q < kSlots; ++q) {
      const int32_t j = cand_at(table, i, q);
      if (j < 0) continue;
      const T w = weights[i * kSlots + q];
      if (w == T(0)) continue;
      const T* tp = tokens.data() + static_cast<int64_t>(j) * c;
      for (int64_t k = 0; k < c; ++k) op[k] += w * tp[k];
    }
  }
  return out;
}

template <typename T>
Tensor<T> one_hot_rows(const std::vector<int32_t>& mask, const CandidateTable& table) {
  if (static_cast<int64_t>(mask.size()) != table.n)
    throw Error("one_hot_rows: mask length " + std::to_string(mask.size()) +
                " does not match pixel count " + std::to_string(table.n));
  Tensor<T> out = Tensor<T>::zeros({table.n, static_cast<int64_t>(kSlots)});
  for (int64_t i = 0; i < table.n; ++i) {
    bool found = false;
    for (int q = 0; q < kSlots; ++q) {
      if (cand_at(table, i, q) == mask[static_cast<size_t>(i)]) {
        out[i * kSlots + q] = T(1);
        found = true;
        break;
      }
    }
    if (!found)
      throw Error("one_hot_rows: superpixel " + std::to_string(mask[static_cast<size_t>(i)]) +
                  " is not a candidate of pixel " + std::to_string(i));
  }
  return out;
}

namespace {

// Shared forward for the Gumbel mask: fills soft (softmax of tempered logits
// over present slots) and hard (one-hot at the noisy argmax; first strict
// maximum, i.e. lowest superpixel index on exact ties).
template <typename T>
void gumbel_forward(const Tensor<T>& assoc, const CandidateTable& table, const GumbelMode& mode,
                    Rng* rng, Tensor<T>& soft, Tensor<T>& hard) {
  const T floor = static_cast<T>(kAssocFloor);
  soft = Tensor<T>::zeros(assoc.shape());
  hard = Tensor<T>::zeros(assoc.shape());
  std::array<double, kSlots> logit{};
  std::array<double, kSlots> e{};
  for (int64_t i = 0; i < table.n; ++i) {
    double best = 0;
    int bestq = -1;
    for (int q = 0; q < kSlots; ++q) {
      if (cand_at(table, i, q) < 0) continue;
      double l = std::log(static_cast<double>(assoc[i * kSlots + q] + floor));
      if (mode.noise) l += rng->gumbel();
      logit[static_cast<size_t>(q)] = l;
      if (bestq < 0 || l > best) {
        best = l;
        bestq = q;
      }
    }
    if (bestq < 0) throw Error("gumbel_one_hot: pixel " + std::to_string(i) + " has no candidates");
    hard[i * kSlots + bestq] = T(1);
    const double mx = best / mode.tau;
    double zs = 0;
    for (int q = 0; q < kSlots; ++q) {
      if (cand_at(table, i, q) < 0) continue;
      e[static_cast<size_t>(q)] = std::exp(logit[static_cast<size_t>(q)] / mode.tau - mx);
      zs += e[static_cast<size_t>(q)];
    }
    for (int q = 0; q < kSlots; ++q) {
      if (cand_at(table, i, q) < 0) continue;
      soft[i * kSlots + q] = static_cast<T>(e[static_cast<size_t>(q)] / zs);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> gumbel_one_hot(const Tensor<T>& assoc, const CandidateTable& table,
                         const GumbelMode& mode, Rng* rng) {
  check_slots(assoc, table.n, "gumbel_one_hot");
  if (mode.noise && rng == nullptr) throw Error("gumbel_one_hot: noise requested without an rng");
  if (mode.tau <= 0) throw Error("gumbel_one_hot: temperature must be positive");
  Tensor<T> soft, hard;
  gumbel_forward(assoc, table, mode, rng, soft, hard);
  return mode.hard ? hard : soft;
}

// ----- differentiable --------------------------------------------------------

template <typename T>
Var<T> v_init_superpixels(Var<T> x, const SuperpixelGrid& grid) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = init_superpixels(t.value(x.id), grid);
  if (!t.recording()) return t.constant(std::move(y));
  const SuperpixelGrid g = grid;
  return t.record(std::move(y), {x.id}, [g](Tape<T>& tp, const typename Tape<T>::Node& n) {
    const Tensor<T>& gy = n.grad;
    const int64_t c = gy.dim(1), ch = g.cell_h(), cw = g.cell_w();
    Tensor<T> gx = Tensor<T>::zeros({g.pixels(), c});
    const T inv = T(1) / static_cast<T>(ch * cw);
    for (int64_t y2 = 0; y2 < g.h; ++y2)
      for (int64_t x2 = 0; x2 < g.w; ++x2) {
        const int64_t j = (y2 / ch) * g.gw + (x2 / cw);
        const T* gp = gy.data() + j * c;
        T* xp = gx.data() + (y2 * g.w + x2) * c;
        for (int64_t k = 0; k < c; ++k) xp[k] += gp[k] * inv;
      }
    tp.accumulate(n.inputs[0], gx);
  });
}

template <typename T>
Var<T> v_similarity(Var<T> x, Var<T> s, const TablePtr& table) {
  same_tape(x, s);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = similarity_step(t.value(x.id), t.value(s.id), *table);
  if (!t.recording()) return t.constant(std::move(y));
  TablePtr tb = table;
  return t.record(std::move(y), {x.id, s.id}, [tb](Tape<T>& tp, const typename Tape<T>::Node& n) {
    const Tensor<T>& g = n.grad;
    const Tensor<T>& sim = n.value;
    const Tensor<T>& xv = tp.value(n.inputs[0]);
    const Tensor<T>& sv = tp.value(n.inputs[1]);
    const int64_t c = xv.dim(1);
    Tensor<T> gx = Tensor<T>::zeros(xv.shape());
    Tensor<T> gs = Tensor<T>::zeros(sv.shape());
    for (int64_t i = 0; i < tb->n; ++i) {
      const T* xp = xv.data() + i * c;
      T* gxp = gx.data() + i * c;
      for (int q = 0; q < kSlots; ++q) {
        const int32_t j = cand_at(*tb, i, q);
        if (j < 0) continue;
        const T coeff = T(2) * g[i * kSlots + q] * sim[i * kSlots + q];
        if (coeff == T(0)) continue;
        const T* sp = sv.data() + static_cast<int64_t>(j) * c;
        T* gsp = gs.data() + static_cast<int64_t>(j) * c;
        for (int64_t k = 0; k < c; ++k) {
          const T d = xp[k] - sp[k];
          gxp[k] -= coeff * d;
          gsp[k] += coeff * d;
        }
      }
    }
    tp.accumulate(n.inputs[0], gx);
    tp.accumulate(n.inputs[1], gs);
  });
}

template <typename T>
Var<T> v_update(Var<T> x, Var<T> sim, Var<T> s_prev, const TablePtr& table) {
  same_tape(x, sim);
  same_tape(sim, s_prev);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = update_superpixels(t.value(x.id), t.value(sim.id), t.value(s_prev.id), *table);
  if (!t.recording()) return t.constant(std::move(y));
  TablePtr tb = table;
  auto back = [tb](Tape<T>& tp, const typename Tape<T>::Node& n) {
    const Tensor<T>& g = n.grad;
    const Tensor<T>& out = n.value;
    const Tensor<T>& xv = tp.value(n.inputs[0]);
    const Tensor<T>& wv = tp.value(n.inputs[1]);
    const int64_t c = xv.dim(1);
    const T floor = static_cast<T>(kAssocFloor);
    Tensor<T> gx = Tensor<T>::zeros(xv.shape());
    Tensor<T> gw = Tensor<T>::zeros(wv.shape());
    Tensor<T> gp = Tensor<T>::zeros(out.shape());
    // Recompute the column masses (cheap next to saving them).
    std::vector<T> z(static_cast<size_t>(tb->m), T(0));
    for (int64_t i = 0; i < tb->n; ++i)
      for (int q = 0; q < kSlots; ++q) {
        const int32_t j = cand_at(*tb, i, q);
        if (j >= 0) z[static_cast<size_t>(j)] += wv[i * kSlots + q];
      }
    for (int64_t j = 0; j < tb->m; ++j) {
      if (z[static_cast<size_t>(j)] == T(0)) {  // fallback row: identity to s_prev
        const T* gjp = g.data() + j * c;
        T* pp = gp.data() + j * c;
        for (int64_t k = 0; k < c; ++k) pp[k] += gjp[k];
      }
    }
    for (int64_t i = 0; i < tb->n; ++i) {
      const T* xp = xv.data() + i * c;
      T* gxp = gx.data() + i * c;
      for (int q = 0; q < kSlots; ++q) {
        const int32_t j = cand_at(*tb, i, q);
        if (j < 0) continue;
        const T zj = z[static_cast<size_t>(j)];
        if (zj == T(0)) continue;
        const T zc = std::max(zj, floor);
        const bool live = zj > floor;  // when the clamp is active, z carries no gradient
        const T w = wv[i * kSlots + q];
        const T* gjp = g.data() + static_cast<int64_t>(j) * c;
        const T* op = out.data() + static_cast<int64_t>(j) * c;
        T acc = 0;
        for (int64_t k = 0; k < c; ++k) {
          gxp[k] += gjp[k] * w / zc;
          acc += gjp[k] * (xp[k] - (live ? op[k] : T(0))) / zc;
        }
        gw[i * kSlots + q] += acc;
      }
    }
    tp.accumulate(n.inputs[0], gx);
    tp.accumulate(n.inputs[1], gw);
    tp.accumulate(n.inputs[2], gp);
  };
  return t.record(std::move(y), {x.id, sim.id, s_prev.id}, std::move(back));
}

template <typename T>
Var<T> v_row_normalize(Var<T> sim, const TablePtr& table) {
  Tape<T>& t = tape_of(sim);
  Tensor<T> y = row_normalize(t.value(sim.id), *table);
  if (!t.recording()) return t.constant(std::move(y));
  TablePtr tb = table;
  return t.record(std::move(y), {sim.id}, [tb](Tape<T>& tp, const typename Tape<T>::Node& n) {
    const Tensor<T>& g = n.grad;
    const Tensor<T>& yv = n.value;
    const Tensor<T>& wv = tp.value(n.inputs[0]);
    const T floor = static_cast<T>(kAssocFloor);
    Tensor<T> gw = Tensor<T>::zeros(wv.shape());
    for (int64_t i = 0; i < tb->n; ++i) {
      T s = 0, dot = 0;
      for (int q = 0; q < kSlots; ++q)
        if (cand_at(*tb, i, q) >= 0) {
          s += wv[i * kSlots + q];
          dot += g[i * kSlots + q] * yv[i * kSlots + q];
        }
      const T sc = std::max(s, floor);
      const bool live = s > floor;
      for (int q = 0; q < kSlots; ++q)
        if (cand_at(*tb, i, q) >= 0)
          gw[i * kSlots + q] += (g[i * kSlots + q] - (live ? dot : T(0))) / sc;
    }
    tp.accumulate(n.inputs[0], gw);
  });
}

template <typename T>
Var<T> v_scatter(Var<T> weights, Var<T> tokens, const TablePtr& table) {
  same_tape(weights, tokens);
  Tape<T>& t = tape_of(weights);
  Tensor<T> y = scatter(t.value(weights.id), t.value(tokens.id), *table);
  if (!t.recording()) return t.constant(std::move(y));
  TablePtr tb = table;
  auto back = [tb](Tape<T>& tp, const typename Tape<T>::Node& n) {
    const Tensor<T>& g = n.grad;
    const Tensor<T>& wv = tp.value(n.inputs[0]);
    const Tensor<T>& kv = tp.value(n.inputs[1]);
    const int64_t c = kv.dim(1);
    Tensor<T> gw = Tensor<T>::zeros(wv.shape());
    Tensor<T> gk = Tensor<T>::zeros(kv.shape());
    for (int64_t i = 0; i < tb->n; ++i) {
      const T* gip = g.data() + i * c;
      for (int q = 0; q < kSlots; ++q) {
        const int32_t j = cand_at(*tb, i, q);
        if (j < 0) continue;
        const T w = wv[i * kSlots + q];
        const T* kp = kv.data() + static_cast<int64_t>(j) * c;
        T* gkp = gk.data() + static_cast<int64_t>(j) * c;
        T acc = 0;
        for (int64_t k = 0; k < c; ++k) {
          acc += gip[k] * kp[k];
          gkp[k] += gip[k] * w;
        }
        gw[i * kSlots + q] += acc;
      }
    }
    tp.accumulate(n.inputs[0], gw);
    tp.accumulate(n.inputs[1], gk);
  };
  return t.record(std::move(y), {weights.id, tokens.id}, std::move(back));
}

template <typename T>
Var<T> v_gumbel_mask(Var<T> assoc, const TablePtr& table, const GumbelMode& mode, Rng* rng) {
  Tape<T>& t = tape_of(assoc);
  check_slots(t.value(assoc.id), table->n, "v_gumbel_mask");
  if (mode.noise && rng == nullptr) throw Error("v_gumbel_mask: noise requested without an rng");
  if (mode.tau <= 0) throw Error("v_gumbel_mask: temperature must be positive");
  Tensor<T> soft, hard;
  gumbel_forward(t.value(assoc.id), *table, mode, rng, soft, hard);
  Tensor<T> value, saved_soft;
  if (mode.hard) {
    value = std::move(hard);
    saved_soft = std::move(soft);
  } else {
    saved_soft = soft;  // the value itself doubles as the softened path
    value = std::move(soft);
  }
  if (!t.recording()) return t.constant(std::move(value));
  // The backward runs through the softened path in both modes (straight-through
  // when the forward is hard), so the soft probabilities are saved here.
  TablePtr tb = table;
  const T tau = static_cast<T>(mode.tau);
  auto back = [tb, tau, saved_soft = std::move(saved_soft)](Tape<T>& tp,
                                                            const typename Tape<T>::Node& n) {
    const Tensor<T>& g = n.grad;
    const Tensor<T>& av = tp.value(n.inputs[0]);
    const T floor = static_cast<T>(kAssocFloor);
    Tensor<T> ga = Tensor<T>::zeros(av.shape());
    for (int64_t i = 0; i < tb->n; ++i) {
      T dot = 0;
      for (int q = 0; q < kSlots; ++q)
        if (cand_at(*tb, i, q) >= 0) dot += g[i * kSlots + q] * saved_soft[i * kSlots + q];
      for (int q = 0; q < kSlots; ++q) {
        if (cand_at(*tb, i, q) < 0) continue;
        const T gl = saved_soft[i * kSlots + q] * (g[i * kSlots + q] - dot) / tau;
        ga[i * kSlots + q] += gl / (av[i * kSlots + q] + floor);
      }
    }
    tp.accumulate(n.inputs[0], ga);
  };
  return t.record(std::move(value), {assoc.id}, std::move(back));
}

template <typename T>
SuperpixelSampleV<T> v_sample(Var<T> x, const SuperpixelGrid& grid, int iters) {
  if (iters < 1) throw Error("superpixel sample: need at least one iteration");
  Tape<T>& t = tape_of(x);
  SuperpixelSampleV<T> out;
  out.table = build_candidates_shared(grid);
  Var<T> s = v_init_superpixels(x, grid);
  Var<T> sim = s;  // overwritten on the first iteration
  for (int it = 0; it < iters; ++it) {
    sim = v_similarity(x, s, out.table);
    s = v_update(x, sim, s, out.table);
  }
  out.features = s;
  out.sim = sim;
  out.assoc = v_row_normalize(sim, out.table);
  out.mask = hard_mask(t.value(sim.id), *out.table);
  return out;
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_SUPERPIXEL(T)                                                      \
  template Tensor<T> init_superpixels<T>(const Tensor<T>&, const SuperpixelGrid&);          \
  template Tensor<T> similarity_step<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                        const CandidateTable&);                             \
  template Tensor<T> update_superpixels<T>(const Tensor<T>&, const Tensor<T>&,              \
                                           const Tensor<T>&, const CandidateTable&);        \
  template Tensor<T> row_normalize<T>(const Tensor<T>&, const CandidateTable&);             \
  template std::vector<int32_t> hard_mask<T>(const Tensor<T>&, const CandidateTable&);      \
  template SuperpixelSample<T> sample<T>(const Tensor<T>&, const SuperpixelGrid&, int);     \
  template Tensor<T> scatter<T>(const Tensor<T>&, const Tensor<T>&, const CandidateTable&); \
  template Tensor<T> one_hot_rows<T>(const std::vector<int32_t>&, const CandidateTable&);   \
  template Tensor<T> gumbel_one_hot<T>(const Tensor<T>&, const CandidateTable&,             \
                                       const GumbelMode&, Rng*);                            \
  template Var<T> v_init_superpixels<T>(Var<T>, const SuperpixelGrid&);                     \
  template Var<T> v_similarity<T>(Var<T>, Var<T>, const TablePtr&);                         \
  template Var<T> v_update<T>(Var<T>, Var<T>, Var<T>, const TablePtr&);                     \
  template Var<T> v_row_normalize<T>(Var<T>, const TablePtr&);                              \
  template Var<T> v_scatter<T>(Var<T>, Var<T>, const TablePtr&);                            \
  template Var<T> v_gumbel_mask<T>(Var<T>, const TablePtr&, const GumbelMode&, Rng*);       \
  template SuperpixelSampleV<T> v_sample<T>(Var<T>, const SuperpixelGrid&, int);

SPMM_INSTANTIATE_SUPERPIXEL(float)
SPMM_INSTANTIATE_SUPERPIXEL(double)
#undef SPMM_INSTANTIATE_SUPERPIXEL

}  // namespace spmm
