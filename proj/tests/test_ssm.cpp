// Selective state-space scanning.  Oracles: a literal unrolled recurrence in
// test code, long-double zero-order-hold discretisation, and closed forms for
// degenerate inputs.

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/ssm.hpp"

using namespace spmm;
using spmm_test::bitwise_equal;
using spmm_test::max_abs_diff;
using spmm_test::rand_tensor;

namespace {

// Oracle: the defining recurrence h[t] = abar[t] h[t-1] + bx[t], written as a
// direct elementwise loop (no shared code with the library kernels).
template <typename T>
Tensor<T> unrolled_scan(const Tensor<T>& abar, const Tensor<T>& bx) {
  const int64_t L = abar.dim(0), C = abar.dim(1), d = abar.dim(2);
  Tensor<T> h({L, C, d});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < d; ++i) {
      T state = T(0);
      for (int64_t t = 0; t < L; ++t) {
        state = abar.at(t, c, i) * state + bx.at(t, c, i);
        h.at(t, c, i) = state;
      }
    }
  return h;
}

}  // namespace

TEST_CASE("ssm: both scans match the unrolled recurrence") {
  Rng rng(1);
  for (const int64_t L : {1, 2, 3, 7, 64, 65}) {
    const auto abar = rand_tensor<double>({L, 3, 4}, rng, 0.05, 0.95);
    const auto bx = rand_tensor<double>({L, 3, 4}, rng);
    const auto want = unrolled_scan(abar, bx);
    CHECK(max_abs_diff(scan_recurrent(abar, bx), want) < 1e-12);
    CHECK(max_abs_diff(scan_parallel(abar, bx), want) < 1e-10);
    CHECK(max_abs_diff(scan_parallel(abar, bx, nullptr, 4), want) < 1e-10);
  }
}

TEST_CASE("ssm: parallel scan is thread-count invariant bit for bit") {
  Rng rng(2);
  const auto abar = rand_tensor<double>({37, 4, 5}, rng, 0.1, 0.9);
  const auto bx = rand_tensor<double>({37, 4, 5}, rng);
  const auto one = scan_parallel(abar, bx, nullptr, 1);
  CHECK(bitwise_equal(one, scan_parallel(abar, bx, nullptr, 2)));
  CHECK(bitwise_equal(one, scan_parallel(abar, bx, nullptr, 8)));
}

TEST_CASE("ssm: scan degenerate cases") {
  Rng rng(3);
  // L = 1: h[0] = bx[0] regardless of abar.
  const auto a1 = rand_tensor<double>({1, 2, 3}, rng);
  const auto b1 = rand_tensor<double>({1, 2, 3}, rng);
  CHECK(bitwise_equal(scan_recurrent(a1, b1), b1));
  CHECK(max_abs_diff(scan_parallel(a1, b1), b1) == 0.0);

  // abar = 0: h[t] = bx[t] (no memory).
  const auto a0 = Tensor<double>::zeros({5, 2, 3});
  const auto bx = rand_tensor<double>({5, 2, 3}, rng);
  CHECK(max_abs_diff(scan_recurrent(a0, bx), bx) == 0.0);

  // abar = 1: h[t] is the running sum of bx.
  const auto h = scan_recurrent(Tensor<double>::ones({4, 1, 1}),
                                Tensor<double>({4, 1, 1}, {1.0, 2.0, 3.0, 4.0}));
  CHECK(h.at(3, 0, 0) == doctest::Approx(10.0));

  // Zero input: identically zero states.
  CHECK(ops::max_abs(scan_parallel(rand_tensor<double>({8, 2, 2}, rng),
                                   Tensor<double>::zeros({8, 2, 2}))) == 0.0);

  CHECK_THROWS_AS(scan_recurrent(a0, b1), Error);  // shape mismatch
}

TEST_CASE("ssm: flop counters are exact and linear in length") {
  Rng rng(4);
  const auto a = rand_tensor<double>({16, 3, 5}, rng, 0.1, 0.9);
  const auto b = rand_tensor<double>({16, 3, 5}, rng);
  ScanStats s16, s32;
  scan_recurrent(a, b, &s16);
  CHECK(s16.flops == 2 * 16 * 3 * 5);  // one multiply + one add per lane element

  const auto a2 = rand_tensor<double>({32, 3, 5}, rng, 0.1, 0.9);
  const auto b2 = rand_tensor<double>({32, 3, 5}, rng);
  scan_recurrent(a2, b2, &s32);
  CHECK(s32.flops == 2 * s16.flops);  // doubling L doubles the count exactly

  ScanStats acc;
  scan_recurrent(a, b, &acc);
  scan_recurrent(a, b, &acc);
  CHECK(acc.flops == 2 * s16.flops);  // counters accumulate across calls
}

TEST_CASE("ssm: discretisation against a long-double zero-order-hold oracle") {
  Rng rng(5);
  const int64_t L = 6, C = 3, d = 4;
  auto dt = rand_tensor<double>({L, C}, rng, 1e-3, 0.2);
  const auto a = rand_tensor<double>({C, d}, rng, -4.0, -0.01);
  const auto b = rand_tensor<double>({L, d}, rng);
  Tensor<double> abar, bbar;
  discretize(dt, a, b, abar, bbar);
  REQUIRE(abar.shape() == Shape{L, C, d});

  double worst = 0;
  for (int64_t t = 0; t < L; ++t)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < d; ++i) {
        const long double u = static_cast<long double>(dt.at(t, c)) * a.at(c, i);
        const long double ab = expl(u);
        // phi(u) = (e^u - 1)/u; Bbar = phi(u) * dt * B.
        const long double phi = std::abs(static_cast<double>(u)) < 1e-8
                                    ? 1.0L
                                    : expm1l(u) / u;
        const long double bb = phi * dt.at(t, c) * b.at(t, i);
        worst = std::max(worst, std::abs(static_cast<double>(ab - abar.at(t, c, i))));
        worst = std::max(worst, std::abs(static_cast<double>(bb - bbar.at(t, c, i))));
      }
  CHECK(worst < 1e-14);

  // Tiny dt*a takes the series limit Bbar = dt*B without dividing by ~0.
  Tensor<double> dts = Tensor<double>::full({1, 1}, 1e-12);
  Tensor<double> as = Tensor<double>::full({1, 1}, -1.0);
  Tensor<double> bs = Tensor<double>::full({1, 1}, 2.0);
  Tensor<double> ab2, bb2;
  discretize(dts, as, bs, ab2, bb2);
  CHECK(bb2[0] == doctest::Approx(2e-12).epsilon(1e-10));
  CHECK(ab2[0] == doctest::Approx(1.0).epsilon(1e-10));

  // Stability: a < 0 and dt > 0 give |Abar| < 1.
  for (int64_t i = 0; i < abar.numel(); ++i) {
    CHECK(abar[i] > 0.0);
    CHECK(abar[i] < 1.0);
  }
}

TEST_CASE("ssm: parameter init invariants") {
  Rng rng(6);
  const auto p = SsmParams<double>::init(5, 4, rng);
  REQUIRE(p.a.shape() == Shape{5, 4});
  REQUIRE(p.dt_proj_b.shape() == Shape{5});
  for (int64_t c = 0; c < 5; ++c)
    for (int64_t i = 0; i < 4; ++i)
      CHECK(p.a.at(c, i) == doctest::Approx(-double(i + 1)));  // -(i+1) ladder
  for (int64_t c = 0; c < 5; ++c) {
    CHECK(p.d[c] == 1.0);
    const double rate = std::log1p(std::exp(p.dt_proj_b[c]));  // softplus
    CHECK(rate >= 1e-2 - 1e-9);
    CHECK(rate <= 1e-1 + 1e-9);
  }
  // Truncated-normal projections stay inside 2 standard deviations.
  const double cap = std::min(0.02, 1.0 / std::sqrt(5.0));
  CHECK(ops::max_abs(p.b_proj) <= 2.0 * cap + 1e-12);

  // Same seed, same parameters.
  Rng r1(7), r2(7);
  const auto q1 = SsmParams<double>::init(3, 2, r1);
  const auto q2 = SsmParams<double>::init(3, 2, r2);
  CHECK(bitwise_equal(q1.dt_proj_w, q2.dt_proj_w));
}

TEST_CASE("ssm: block output shape, determinism, and scan-kind equivalence") {
  Rng rng(8);
  const auto p = SsmParams<double>::init(6, 4, rng);
  const auto x = rand_tensor<double>({10, 6}, rng);

  SsmConfig seq;
  seq.d_state = 4;
  SsmConfig par = seq;
  par.scan = ScanKind::parallel;

  const auto y1 = ssm_block_apply(x, p, seq);
  REQUIRE(y1.shape() == Shape{10, 6});
  CHECK(bitwise_equal(y1, ssm_block_apply(x, p, seq)));  // deterministic
  CHECK(max_abs_diff(y1, ssm_block_apply(x, p, par)) < 1e-10);  // same function

  SsmConfig bidir = seq;
  bidir.bidirectional = true;
  const auto yb = ssm_block_apply(x, p, bidir);
  CHECK(max_abs_diff(yb, y1) > 1e-8);  // genuinely different operator

  // Bidirectional output is invariant under sequence reversal of the input
  // when the result is reversed back (forward and backward scans swap roles).
  Tensor<double> xr({10, 6});
  for (int64_t t = 0; t < 10; ++t)
    for (int64_t c = 0; c < 6; ++c) xr.at(t, c) = x.at(9 - t, c);
  const auto ybr = ssm_block_apply(xr, p, bidir);
  double worst = 0;
  for (int64_t t = 0; t < 10; ++t)
    for (int64_t c = 0; c < 6; ++c)
      worst = std::max(worst, std::abs(ybr.at(9 - t, c) - yb.at(t, c)));
  CHECK(worst < 1e-12);
}

TEST_CASE("ssm: zero input gives zero block output") {
  Rng rng(9);
  const auto p = SsmParams<double>::init(4, 3, rng);
  SsmConfig cfg;
  cfg.d_state = 3;
  const auto y = ssm_block_apply(Tensor<double>::zeros({7, 4}), p, cfg);
  CHECK(ops::max_abs(y) == 0.0);  // dt, B, C, and the skip all vanish at x = 0
}

TEST_CASE("ssm: block flop accounting flows through the stats pointer") {
  Rng rng(10);
  const auto p = SsmParams<double>::init(4, 3, rng);
  const auto x = rand_tensor<double>({12, 4}, rng);
  SsmConfig cfg;
  cfg.d_state = 3;
  ScanStats stats;
  (void)ssm_block_apply(x, p, cfg, &stats);
  CHECK(stats.flops == 2 * 12 * 4 * 3);

  SsmConfig bidir = cfg;
  bidir.bidirectional = true;
  ScanStats stats2;
  (void)ssm_block_apply(x, p, bidir, &stats2);
  CHECK(stats2.flops == 2 * stats.flops);  // two scans
}
