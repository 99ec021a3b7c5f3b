// Superpixel clustering.  Oracles, written before the assertions and sharing
// no code with the library: direct per-cell means, a dense N x M similarity
// matrix (zeros outside the candidate set), an unrestricted dense soft
// k-means, and the Gumbel-max sampling law checked by Monte-Carlo.

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/superpixel.hpp"

using namespace spmm;
using spmm_test::bitwise_equal;
using spmm_test::max_abs_diff;
using spmm_test::rand_tensor;

namespace {

// ----- oracles ---------------------------------------------------------------

// Per-cell mean, by direct summation over each cell's pixel block.
Tensor<double> cell_mean_oracle(const Tensor<double>& x, const SuperpixelGrid& g) {
  Tensor<double> s({g.count(), x.dim(1)});
  for (int64_t cy = 0; cy < g.gh; ++cy)
    for (int64_t cx = 0; cx < g.gw; ++cx) {
      const int64_t j = cy * g.gw + cx;
      for (int64_t c = 0; c < x.dim(1); ++c) {
        double acc = 0;
        for (int64_t y = cy * g.cell_h(); y < (cy + 1) * g.cell_h(); ++y)
          for (int64_t xx = cx * g.cell_w(); xx < (cx + 1) * g.cell_w(); ++xx)
            acc += x.at(y * g.w + xx, c);
        s.at(j, c) = acc / double(g.cell_h() * g.cell_w());
      }
    }
  return s;
}

// Materialize the sparse [N,9] similarity as a dense [N,M] matrix.
Tensor<double> densify(const Tensor<double>& sim, const CandidateTable& t) {
  Tensor<double> d({t.n, t.m});
  for (int64_t i = 0; i < t.n; ++i)
    for (int q = 0; q < kSlots; ++q) {
      const int32_t j = t.cand[static_cast<size_t>(i * kSlots + q)];
      if (j >= 0) d.at(i, j) = sim.at(i, int64_t{q});
    }
  return d;
}

// Centroid update straight from the dense matrix definition.
Tensor<double> dense_update_oracle(const Tensor<double>& x, const Tensor<double>& dense,
                                   const Tensor<double>& s_prev) {
  const int64_t N = dense.dim(0), M = dense.dim(1), C = x.dim(1);
  Tensor<double> s({M, C});
  for (int64_t j = 0; j < M; ++j) {
    double z = 0;
    for (int64_t i = 0; i < N; ++i) z += dense.at(i, j);
    for (int64_t c = 0; c < C; ++c) {
      if (z <= 0.0) {
        s.at(j, c) = s_prev.at(j, c);  // documented empty-column fallback
        continue;
      }
      double acc = 0;
      for (int64_t i = 0; i < N; ++i) acc += dense.at(i, j) * x.at(i, c);
      s.at(j, c) = acc / std::max(z, kAssocFloor);
    }
  }
  return s;
}

// Unrestricted dense soft k-means: every pixel sees every superpixel.
std::vector<int32_t> dense_kmeans_mask_oracle(const Tensor<double>& x, const SuperpixelGrid& g,
                                              int iters) {
  const int64_t N = g.pixels(), M = g.count(), C = x.dim(1);
  Tensor<double> s = cell_mean_oracle(x, g);
  Tensor<double> sim({N, M});
  for (int it = 0; it < iters; ++it) {
    for (int64_t i = 0; i < N; ++i)
      for (int64_t j = 0; j < M; ++j) {
        double d2 = 0;
        for (int64_t c = 0; c < C; ++c) {
          const double d = x.at(i, c) - s.at(j, c);
          d2 += d * d;
        }
        sim.at(i, j) = std::exp(-d2);
      }
    s = dense_update_oracle(x, sim, s);
  }
  std::vector<int32_t> mask(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    int32_t best = 0;
    for (int64_t j = 1; j < M; ++j)
      if (sim.at(i, j) > sim.at(i, best)) best = static_cast<int32_t>(j);
    mask[static_cast<size_t>(i)] = best;
  }
  return mask;
}

// ----- structured test inputs ------------------------------------------------

// 16x16x3 piecewise-constant value staircase.  Two orthogonal random gradients
// (plus a mixed third channel) are quantized into 4x4 value blocks whose edges
// sit one or three pixels past the cell borders, then lightly dithered.  Every
// block value is distinct and every block overlaps a unique dominant cell, so
// the neighbourhood-restricted and unrestricted clusterings share a fixed
// point; feature-only distances cannot anchor unstructured noise spatially.
Tensor<double> staircase_field(Rng& rng) {
  Tensor<double> x({256, 3});
  const double th = rng.uniform(0.0, 6.283185307179586);
  const double s1 = rng.uniform(8.0, 16.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double s2 = rng.uniform(8.0, 16.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double g[3][2] = {{s1 * std::cos(th), s1 * std::sin(th)},
                          {-s2 * std::sin(th), s2 * std::cos(th)},
                          {0.5 * (s1 * std::cos(th) - s2 * std::sin(th)),
                           0.5 * (s1 * std::sin(th) + s2 * std::cos(th))}};
  const int oy = rng.uniform() < 0.5 ? 1 : 3;
  const int ox = rng.uniform() < 0.5 ? 1 : 3;
  auto band = [](int64_t v, int o) {
    return static_cast<int>(v >= o + 2) + static_cast<int>(v >= o + 6) +
           static_cast<int>(v >= o + 10);
  };
  for (int64_t i = 0; i < 256; ++i) {
    const int by = band(i / 16, oy);
    const int bx = band(i % 16, ox);
    for (int64_t k = 0; k < 3; ++k)
      x.at(i, k) = g[k][0] * by / 4.0 + g[k][1] * bx / 4.0 + 0.02 * rng.normal();
  }
  return x;
}

// Within-assignment scatter: each pixel's squared distance to the mean of its
// assigned group, with the means recomputed from scratch.
double assignment_scatter(const Tensor<double>& x, const std::vector<int32_t>& mask, int64_t m) {
  const int64_t n = x.dim(0), c = x.dim(1);
  Tensor<double> mean({m, c});
  std::vector<int64_t> cnt(static_cast<size_t>(m), 0);
  for (int64_t i = 0; i < n; ++i) {
    const auto j = static_cast<size_t>(mask[static_cast<size_t>(i)]);
    ++cnt[j];
    for (int64_t k = 0; k < c; ++k) mean.at(static_cast<int64_t>(j), k) += x.at(i, k);
  }
  for (int64_t j = 0; j < m; ++j)
    if (cnt[static_cast<size_t>(j)] > 0)
      for (int64_t k = 0; k < c; ++k) mean.at(j, k) /= double(cnt[static_cast<size_t>(j)]);
  double w = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) {
      const double d = x.at(i, k) - mean.at(int64_t{mask[static_cast<size_t>(i)]}, k);
      w += d * d;
    }
  return w;
}

}  // namespace

TEST_CASE("superpixel: grid validation and candidate structure") {
  CHECK_THROWS_AS(SuperpixelGrid::make(7, 8, 2, 2), Error);  // 7 not divisible
  CHECK_THROWS_AS(SuperpixelGrid::make_square(8, 8, 5), Error);  // not a square
  const SuperpixelGrid g = SuperpixelGrid::make_square(8, 12, 16);
  CHECK(g.gh == 4);
  CHECK(g.cell_h() == 2);
  CHECK(g.cell_w() == 3);

  // Independent reconstruction of the 3x3-neighbourhood rule.
  const CandidateTable t = build_candidates(g);
  REQUIRE(t.n == 96);
  REQUIRE(t.m == 16);
  for (int64_t y = 0; y < g.h; ++y)
    for (int64_t x = 0; x < g.w; ++x) {
      const int64_t i = y * g.w + x;
      const int64_t cy = y / g.cell_h(), cx = x / g.cell_w();
      int q = 0;
      int32_t prev = -1;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx, ++q) {
          const int64_t ny = cy + dy, nx = cx + dx;
          const int32_t want = (ny >= 0 && ny < g.gh && nx >= 0 && nx < g.gw)
                                   ? static_cast<int32_t>(ny * g.gw + nx)
                                   : -1;
          const int32_t got = t.cand[static_cast<size_t>(i * kSlots + q)];
          CHECK(got == want);
          if (got >= 0) {
            CHECK(got > prev);  // strictly increasing across present slots
            prev = got;
          }
        }
    }
}

TEST_CASE("superpixel: init equals per-cell means") {
  // Constant image: every token is that constant.
  const SuperpixelGrid g = SuperpixelGrid::make(4, 4, 2, 2);
  const auto c = init_superpixels(Tensor<double>::full({16, 3}, 2.5), g);
  CHECK(ops::max_abs(ops::add_scalar(c, -2.5)) == 0.0);

  // The 4x1 two-cell example: block means [0, 10].
  const SuperpixelGrid g2 = SuperpixelGrid::make(4, 1, 2, 1);
  const Tensor<double> x2({4, 1}, {0.0, 0.0, 10.0, 10.0});
  const auto s2 = init_superpixels(x2, g2);
  CHECK(s2.at(0, 0) == 0.0);
  CHECK(s2.at(1, 0) == 10.0);

  // Random 8x8 against the direct oracle.
  Rng rng(1);
  const SuperpixelGrid g3 = SuperpixelGrid::make(8, 8, 2, 2);
  const auto x3 = rand_tensor<double>({64, 3}, rng);
  CHECK(max_abs_diff(init_superpixels(x3, g3), cell_mean_oracle(x3, g3)) < 1e-7);

  CHECK_THROWS_AS(init_superpixels(Tensor<double>::ones({15, 3}), g), Error);
}

TEST_CASE("superpixel: similarity values and locality") {
  const SuperpixelGrid g = SuperpixelGrid::make(4, 1, 2, 1);
  const CandidateTable t = build_candidates(g);
  const Tensor<double> x({4, 1}, {0.0, 0.0, 10.0, 10.0});
  const auto s0 = init_superpixels(x, g);
  const auto sim = similarity_step(x, s0, t);
  REQUIRE(sim.shape() == Shape{4, kSlots});

  // Pixel 0: home superpixel matches exactly (exp(0) = 1); the other is
  // exp(-10^2) = e^-100.
  int slot_sp0 = -1, slot_sp1 = -1;
  for (int q = 0; q < kSlots; ++q) {
    const int32_t j = t.cand[static_cast<size_t>(q)];
    if (j == 0) slot_sp0 = q;
    if (j == 1) slot_sp1 = q;
  }
  REQUIRE(slot_sp0 >= 0);
  REQUIRE(slot_sp1 >= 0);
  CHECK(sim.at(int64_t{0}, int64_t{slot_sp0}) == 1.0);
  CHECK(sim.at(int64_t{0}, int64_t{slot_sp1}) ==
        doctest::Approx(std::exp(-100.0)).epsilon(1e-12));

  // Distance ln 2 gives similarity 1/2.
  const Tensor<double> xa({1, 1}, {std::sqrt(std::log(2.0))});
  const SuperpixelGrid g1 = SuperpixelGrid::make(1, 1, 1, 1);
  const CandidateTable t1 = build_candidates(g1);
  const auto sim1 = similarity_step(xa, Tensor<double>::zeros({1, 1}), t1);
  bool found = false;
  for (int q = 0; q < kSlots; ++q)
    if (t1.cand[static_cast<size_t>(q)] == 0) {
      CHECK(sim1.at(int64_t{0}, int64_t{q}) == doctest::Approx(0.5).epsilon(1e-12));
      found = true;
    }
  CHECK(found);

  // Absent slots are structurally zero and never carry weight.
  for (int64_t i = 0; i < 4; ++i)
    for (int q = 0; q < kSlots; ++q)
      if (t.cand[static_cast<size_t>(i * kSlots + q)] < 0)
        CHECK(sim.at(i, int64_t{q}) == 0.0);
}

TEST_CASE("superpixel: update matches the dense-matrix oracle") {
  // Single superpixel with uniform weights: the plain mean.
  const SuperpixelGrid g1 = SuperpixelGrid::make(2, 2, 1, 1);
  const CandidateTable t1 = build_candidates(g1);
  Rng rng(2);
  const auto x1 = rand_tensor<double>({4, 2}, rng);
  Tensor<double> sim1({4, kSlots});
  for (int64_t i = 0; i < 4; ++i)
    for (int q = 0; q < kSlots; ++q)
      if (t1.cand[static_cast<size_t>(i * kSlots + q)] == 0) sim1.at(i, int64_t{q}) = 1.0;
  const auto m = update_superpixels(x1, sim1, Tensor<double>::zeros({1, 2}), t1);
  for (int64_t c = 0; c < 2; ++c) {
    double mean = (x1.at(0, c) + x1.at(1, c) + x1.at(2, c) + x1.at(3, c)) / 4.0;
    CHECK(m.at(0, c) == doctest::Approx(mean).epsilon(1e-12));
  }

  // Two separated clusters are a fixed point after one update.
  const SuperpixelGrid g2 = SuperpixelGrid::make(4, 1, 2, 1);
  const CandidateTable t2 = build_candidates(g2);
  const Tensor<double> x2({4, 1}, {0.0, 0.0, 10.0, 10.0});
  const auto s0 = init_superpixels(x2, g2);
  const auto s1 = update_superpixels(x2, similarity_step(x2, s0, t2), s0, t2);
  CHECK(std::abs(s1.at(0, 0) - 0.0) < 1e-12);
  CHECK(std::abs(s1.at(1, 0) - 10.0) < 1e-12);

  // Random 8x8 against the dense N x M oracle.
  const SuperpixelGrid g3 = SuperpixelGrid::make(8, 8, 4, 4);
  const CandidateTable t3 = build_candidates(g3);
  const auto x3 = rand_tensor<double>({64, 3}, rng);
  const auto sp = init_superpixels(x3, g3);
  const auto sim3 = similarity_step(x3, sp, t3);
  const auto got = update_superpixels(x3, sim3, sp, t3);
  const auto want = dense_update_oracle(x3, densify(sim3, t3), sp);
  CHECK(max_abs_diff(got, want) < 1e-6);

  // An all-zero column keeps its previous token.
  Tensor<double> simz({4, kSlots});  // all-zero similarity in the 2-cell grid
  const Tensor<double> prev({2, 1}, {3.5, -1.25});
  const auto kept = update_superpixels(x2, simz, prev, t2);
  CHECK(bitwise_equal(kept, prev));
}

TEST_CASE("superpixel: sampling invariants and tie-breaking") {
  // Constant image: all similarities tie, argmax picks each pixel's lowest
  // candidate index (the top-left neighbouring cell).
  const SuperpixelGrid g = SuperpixelGrid::make(4, 4, 2, 2);
  const auto dec = sample(Tensor<double>::full({16, 3}, 1.0), g, 1);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) {
      const int64_t cy = y / 2, cx = x / 2;
      const int64_t want = std::max<int64_t>(cy - 1, 0) * 2 + std::max<int64_t>(cx - 1, 0);
      CHECK(dec.mask[static_cast<size_t>(y * 4 + x)] == want);
    }

  // Two-cluster example: mask [0,0,1,1].
  const SuperpixelGrid g2 = SuperpixelGrid::make(4, 1, 2, 1);
  const auto d2 = sample(Tensor<double>({4, 1}, {0.0, 0.0, 10.0, 10.0}), g2, 2);
  CHECK(d2.mask == std::vector<int32_t>{0, 0, 1, 1});

  // Random maps: row-stochastic associations, one-hot masks in-neighbourhood.
  Rng rng(3);
  const SuperpixelGrid g3 = SuperpixelGrid::make(8, 8, 4, 4);
  const auto x3 = rand_tensor<double>({64, 2}, rng);
  const auto d3 = sample(x3, g3, 3);
  for (int64_t i = 0; i < 64; ++i) {
    double row = 0;
    bool mask_in_candidates = false;
    for (int q = 0; q < kSlots; ++q) {
      row += d3.assoc.at(i, int64_t{q});
      if (d3.table.cand[static_cast<size_t>(i * kSlots + q)] == d3.mask[static_cast<size_t>(i)])
        mask_in_candidates = true;
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(mask_in_candidates);
  }
}

TEST_CASE("superpixel: agreement with unrestricted dense soft k-means") {
  // Staircase fields, 16x16 with 16 superpixels, 5 iterations; the restricted
  // and dense clusterings should agree on nearly every pixel.  (Distances use
  // feature channels only, so spatially unstructured inputs are out of scope:
  // nothing ties a pixel to nearby cells and agreement drops to chance.)
  const SuperpixelGrid g = SuperpixelGrid::make(16, 16, 4, 4);
  for (uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng(6200 + trial);
    const Tensor<double> x = staircase_field(rng);
    const auto dec = sample(x, g, 5);
    const auto want = dense_kmeans_mask_oracle(x, g, 5);
    int64_t agree = 0;
    for (size_t i = 0; i < want.size(); ++i) agree += (dec.mask[i] == want[i]);
    CHECK(double(agree) / 256.0 >= 0.95);
  }
}

TEST_CASE("superpixel: within-assignment distance shrinks with iterations") {
  // Re-clustering the same image with a growing iteration budget must not
  // increase the within-assignment scatter.  The first update pulls the tokens
  // from plain cell means toward the block values (a real decrease); after the
  // masks settle the scatter plateaus.  Soft k-means is not strictly monotone
  // in general, hence the tiny slack.
  const SuperpixelGrid g = SuperpixelGrid::make(16, 16, 4, 4);
  for (uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(6210 + trial);
    const Tensor<double> x = staircase_field(rng);
    double prev = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= 5; ++t) {
      const double w = assignment_scatter(x, sample(x, g, t).mask, g.count());
      CHECK(w <= prev + 1e-9);
      prev = w;
    }
  }
}

TEST_CASE("superpixel: scatter against the dense matmul oracle") {
  // M = 1: every pixel receives token 0.
  const SuperpixelGrid g1 = SuperpixelGrid::make(2, 2, 1, 1);
  const CandidateTable t1 = build_candidates(g1);
  const Tensor<double> tok({1, 2}, {3.0, -1.0});
  const auto w1 = one_hot_rows(std::vector<int32_t>{0, 0, 0, 0}, t1);
  const auto out1 = scatter(w1, tok, t1);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(out1.at(i, int64_t{0}) == 3.0);
    CHECK(out1.at(i, int64_t{1}) == -1.0);
  }

  // Hard mask [0,0,1,1] with tokens [[a],[b]] -> [a,a,b,b].
  const SuperpixelGrid g2 = SuperpixelGrid::make(4, 1, 2, 1);
  const CandidateTable t2 = build_candidates(g2);
  const Tensor<double> ab({2, 1}, {7.0, 9.0});
  const auto w2 = one_hot_rows(std::vector<int32_t>{0, 0, 1, 1}, t2);
  const auto out2 = scatter(w2, ab, t2);
  CHECK(out2.at(int64_t{0}, int64_t{0}) == 7.0);
  CHECK(out2.at(int64_t{1}, int64_t{0}) == 7.0);
  CHECK(out2.at(int64_t{2}, int64_t{0}) == 9.0);
  CHECK(out2.at(int64_t{3}, int64_t{0}) == 9.0);

  // Soft path: scatter == densified(assoc) @ tokens.
  Rng rng(5);
  const SuperpixelGrid g3 = SuperpixelGrid::make(8, 8, 4, 4);
  const CandidateTable t3 = build_candidates(g3);
  const auto x3 = rand_tensor<double>({64, 3}, rng);
  const auto d3 = sample(x3, g3, 2);
  const auto toks = rand_tensor<double>({16, 5}, rng);
  const auto got = scatter(d3.assoc, toks, t3);
  const auto dense = densify(d3.assoc, t3);
  for (int64_t i = 0; i < 64; ++i)
    for (int64_t c = 0; c < 5; ++c) {
      double acc = 0;
      for (int64_t j = 0; j < 16; ++j) acc += dense.at(i, j) * toks.at(j, c);
      CHECK(got.at(i, c) == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("superpixel: gumbel selection (infer, limit, and sampling law)") {
  // 1x2 grid: every pixel sees exactly the two superpixels.
  const SuperpixelGrid g = SuperpixelGrid::make(2, 2, 1, 2);
  const CandidateTable t = build_candidates(g);
  Tensor<double> assoc({4, kSlots});
  int slot_a = -1, slot_b = -1;
  for (int q = 0; q < kSlots; ++q) {
    if (t.cand[static_cast<size_t>(q)] == 0) slot_a = q;
    if (t.cand[static_cast<size_t>(q)] == 1) slot_b = q;
  }
  REQUIRE(slot_a >= 0);
  REQUIRE(slot_b >= 0);
  for (int64_t i = 0; i < 4; ++i) {
    assoc.at(i, int64_t{slot_a}) = 0.9;
    assoc.at(i, int64_t{slot_b}) = 0.1;
  }

  // Infer mode: exact one-hot at the argmax.
  GumbelMode infer{false, true, 1.0};
  const auto hard = gumbel_one_hot(assoc, t, infer, nullptr);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(hard.at(i, int64_t{slot_a}) == 1.0);
    CHECK(hard.at(i, int64_t{slot_b}) == 0.0);
  }

  // tau -> 0 with zero noise reproduces the argmax one-hot.
  GumbelMode sharp{false, false, 1e-9};
  const auto soft = gumbel_one_hot(assoc, t, sharp, nullptr);
  CHECK(max_abs_diff(soft, hard) < 1e-12);

  // Soft rows with tau = 1 are probability vectors over present slots.
  GumbelMode relaxed{false, false, 1.0};
  const auto rel = gumbel_one_hot(assoc, t, relaxed, nullptr);
  for (int64_t i = 0; i < 4; ++i) {
    double row = 0;
    for (int q = 0; q < kSlots; ++q) row += rel.at(i, int64_t{q});
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }

  // Gumbel-max law: logits [ln 2, 0] select index 0 with probability 2/3.
  // assoc values (2, 1) give exactly those logits after the log.
  for (int64_t i = 0; i < 4; ++i) {
    assoc.at(i, int64_t{slot_a}) = 2.0;
    assoc.at(i, int64_t{slot_b}) = 1.0;
  }
  GumbelMode noisy{true, true, 1.0};
  Rng rng(31);
  int64_t picks_a = 0, total = 0;
  for (int rep = 0; rep < 25000; ++rep) {
    const auto draw = gumbel_one_hot(assoc, t, noisy, &rng);
    for (int64_t i = 0; i < 4; ++i) {
      picks_a += draw.at(i, int64_t{slot_a}) == 1.0;
      ++total;
    }
  }
  CHECK(double(picks_a) / double(total) == doctest::Approx(2.0 / 3.0).epsilon(0.015));

  // Fixed seed reproduces the same masks.
  Rng ra(77), rb(77);
  CHECK(bitwise_equal(gumbel_one_hot(assoc, t, noisy, &ra),
                      gumbel_one_hot(assoc, t, noisy, &rb)));
}
