// Mixture over state-update experts.  Router weights are observed from the
// outside: with constant-output experts the mixture output is linear in the
// routing weights, so closed-form softmax values become output-level
// assertions.  Dispatch is pinned by execution counters and by comparing the
// dense mixture with top-k runs.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/moe.hpp"

using namespace spmm;
using spmm_test::bitwise_equal;
using spmm_test::max_abs_diff;
using spmm_test::rand_tensor;

namespace {

template <typename T>
Tensor<T> run_moe(const Tensor<T>& x, const MoeParams<T>& p, const MoeConfig& cfg,
                  const RunMode& mode, Rng* rng = nullptr, MoeRunStats* stats = nullptr) {
  Tape<T> tape(false);
  auto v = bind(tape, p, false);
  return moe_forward(tape.leaf(x), v, cfg, mode, rng, nullptr, stats).value();
}

template <typename T>
Tensor<T> run_ffn(const Tensor<T>& x, const GatedFfnParams<T>& p) {
  Tape<T> tape(false);
  auto v = bind(tape, p, false);
  return gated_ffn_forward(tape.leaf(x), v).value();
}

const RunMode kDense{true, GumbelMode{false, true, 1.0}};   // dense, argmax masks
const RunMode kTopK{false, GumbelMode{false, true, 1.0}};   // top-k, argmax masks

}  // namespace

TEST_CASE("moe: zero entry projection gives exactly zero output") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2};
  cfg.tokens = 4;
  cfg.sp_iters = 1;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(41);
  auto p = MoeParams<double>::init(cfg, rng);
  p.entry_w = Tensor<double>::zeros(p.entry_w.shape());
  p.entry_b = Tensor<double>::zeros(p.entry_b.shape());
  p.exit_b = Tensor<double>::zeros(p.exit_b.shape());
  const auto x = rand_tensor<double>({1, 2, 8, 8}, rng);
  const auto y = run_moe(x, p, cfg, kTopK);
  CHECK(ops::max_abs(y) == 0.0);
}

TEST_CASE("moe: pass-through experts reduce to x1 * SiLU(x2)") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2};
  cfg.tokens = 4;
  cfg.sp_iters = 2;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(42);
  auto p = MoeParams<double>::init(cfg, rng);
  for (auto& e : p.experts) {
    e.conv_w = Tensor<double>::zeros(e.conv_w.shape());
    e.conv_b = Tensor<double>::zeros(e.conv_b.shape());
  }
  const auto x = rand_tensor<double>({1, 2, 8, 8}, rng);
  const auto dense = run_moe(x, p, cfg, kDense);

  // Hand composition: entry 1x1, x1 * silu(x2), exit 1x1.
  const int64_t C = 2, H = 8, W = 8;
  Tensor<double> want({1, C, H, W});
  for (int64_t yy = 0; yy < H; ++yy)
    for (int64_t xx = 0; xx < W; ++xx) {
      double x1[2], x2[2];
      for (int64_t o = 0; o < 2 * C; ++o) {
        double acc = p.entry_b[o];
        for (int64_t c = 0; c < C; ++c)
          acc += p.entry_w.at(o, c, int64_t{0}, int64_t{0}) * x.at(int64_t{0}, c, yy, xx);
        (o < C ? x1[o] : x2[o - C]) = acc;
      }
      for (int64_t o = 0; o < C; ++o) {
        double acc = p.exit_b[o];
        for (int64_t c = 0; c < C; ++c) {
          const double gated = x1[c] * (x2[c] / (1.0 + std::exp(-x2[c])));
          acc += p.exit_w.at(o, c, int64_t{0}, int64_t{0}) * gated;
        }
        want.at(int64_t{0}, o, yy, xx) = acc;
      }
    }
  CHECK(max_abs_diff(dense, want) < 1e-9);

  // Identical experts: top-1 with renormalised weight 1 equals the dense sum.
  const auto top1 = run_moe(x, p, cfg, kTopK);
  CHECK(max_abs_diff(top1, dense) < 1e-9);
}

TEST_CASE("moe: router softmax observed through constant experts") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 1, 1};
  cfg.tokens = 1;
  cfg.sp_iters = 1;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(43);
  auto p = MoeParams<double>::init(cfg, rng);
  // x1 = 0 and x2 = constant, so every expert sees a zero routed half and
  // emits a constant map determined by its own conv bias.
  p.entry_w = Tensor<double>::zeros(p.entry_w.shape());
  p.entry_b = Tensor<double>({4}, {0.0, 0.0, 0.7, 0.7});
  for (size_t i = 0; i < p.experts.size(); ++i) {
    p.experts[i].conv_w = Tensor<double>::zeros(p.experts[i].conv_w.shape());
    for (int64_t c = 0; c < 2; ++c)
      p.experts[i].conv_b[c] = 0.4 * double(i + 1) + 0.15 * double(c);
  }
  p.router_w = Tensor<double>::zeros(p.router_w.shape());
  p.exit_w = Tensor<double>::zeros(p.exit_w.shape());
  p.exit_w.at(int64_t{0}, int64_t{0}, int64_t{0}, int64_t{0}) = 1.0;
  p.exit_w.at(int64_t{1}, int64_t{1}, int64_t{0}, int64_t{0}) = 1.0;
  p.exit_b = Tensor<double>::zeros(p.exit_b.shape());

  const auto x = rand_tensor<double>({1, 2, 4, 4}, rng);
  auto with_bias = [&](double b0, double b1, double b2) {
    p.router_b = Tensor<double>({3}, {b0, b1, b2});
    return run_moe(x, p, cfg, kDense);
  };
  // Saturating one logit isolates that expert's constant map.
  const auto e0 = with_bias(50, 0, 0);
  const auto e1 = with_bias(0, 50, 0);
  const auto e2 = with_bias(0, 0, 50);
  CHECK(max_abs_diff(e0, e1) > 1e-3);  // experts genuinely differ

  // Logits [2,1,0]: closed-form softmax weights recombine the isolated maps.
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  const double g0 = std::exp(2.0) / z, g1 = std::exp(1.0) / z, g2 = 1.0 / z;
  CHECK(g0 == doctest::Approx(0.6652).epsilon(1e-3));
  CHECK(g1 == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(g2 == doctest::Approx(0.0900).epsilon(2e-3));
  const auto mixed = with_bias(2, 1, 0);
  Tensor<double> want(mixed.shape());
  for (int64_t i = 0; i < want.numel(); ++i) want[i] = g0 * e0[i] + g1 * e1[i] + g2 * e2[i];
  CHECK(max_abs_diff(mixed, want) < 1e-9);

  // Zero router: uniform thirds.
  const auto uni = with_bias(0, 0, 0);
  for (int64_t i = 0; i < uni.numel(); ++i)
    CHECK(uni[i] == doctest::Approx((e0[i] + e1[i] + e2[i]) / 3.0).epsilon(1e-9));
}

TEST_CASE("moe: single expert makes dense and top-k dispatch identical") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {2};
  cfg.tokens = 4;
  cfg.sp_iters = 2;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(44);
  const auto p = MoeParams<double>::init(cfg, rng);
  const auto x = rand_tensor<double>({1, 2, 8, 8}, rng);
  CHECK(bitwise_equal(run_moe(x, p, cfg, kDense), run_moe(x, p, cfg, kTopK)));
}

TEST_CASE("moe: k = n inference matches the dense mixture") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2};
  cfg.tokens = 4;
  cfg.sp_iters = 2;
  cfg.top_k = 2;
  cfg.ssm.d_state = 2;
  Rng rng(45);
  const auto p = MoeParams<double>::init(cfg, rng);
  const auto x = rand_tensor<double>({1, 2, 8, 8}, rng);
  CHECK(max_abs_diff(run_moe(x, p, cfg, kDense), run_moe(x, p, cfg, kTopK)) < 1e-9);
}

TEST_CASE("moe: execution counters show exactly k experts per dispatch") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 1, 1};
  cfg.tokens = 1;
  cfg.sp_iters = 1;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(46);
  auto p = MoeParams<double>::init(cfg, rng);
  p.router_w = Tensor<double>::zeros(p.router_w.shape());
  p.router_b = Tensor<double>({3}, {0.0, 0.0, 50.0});  // force expert 2
  const auto x = rand_tensor<double>({1, 2, 4, 4}, rng);

  MoeRunStats stats;
  (void)run_moe(x, p, cfg, kTopK, nullptr, &stats);
  CHECK(stats.executed == std::vector<int64_t>{0, 0, 1});
  CHECK(stats.dispatches == 1);
  (void)run_moe(x, p, cfg, kTopK, nullptr, &stats);  // counters accumulate
  CHECK(stats.executed == std::vector<int64_t>{0, 0, 2});
  CHECK(stats.dispatches == 2);

  // Dense mixture runs everyone.
  MoeRunStats dense_stats;
  (void)run_moe(x, p, cfg, kDense, nullptr, &dense_stats);
  CHECK(dense_stats.executed == std::vector<int64_t>{1, 1, 1});

  // Tied router (all-zero bias) breaks to the lowest index.
  p.router_b = Tensor<double>::zeros(p.router_b.shape());
  MoeRunStats tie_stats;
  (void)run_moe(x, p, cfg, kTopK, nullptr, &tie_stats);
  CHECK(tie_stats.executed == std::vector<int64_t>{1, 0, 0});
}

TEST_CASE("moe: relabeling experts with router rows leaves dense output unchanged") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2, 4};
  cfg.tokens = 4;
  cfg.sp_iters = 1;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(47);
  const auto p = MoeParams<double>::init(cfg, rng);
  const auto x = rand_tensor<double>({1, 2, 16, 16}, rng);
  const auto base = run_moe(x, p, cfg, kDense);

  MoeConfig cfg2 = cfg;
  cfg2.scales = {4, 2, 1};
  auto q = p;
  std::swap(q.experts[0], q.experts[2]);
  for (int64_t c = 0; c < 2; ++c) std::swap(q.router_w.at(int64_t{0}, c), q.router_w.at(int64_t{2}, c));
  std::swap(q.router_b[0], q.router_b[2]);
  CHECK(max_abs_diff(run_moe(x, q, cfg2, kDense), base) < 1e-9);
}

TEST_CASE("moe: invalid configurations raise errors") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2};
  cfg.tokens = 4;
  cfg.top_k = 3;  // more than the expert count
  cfg.ssm.d_state = 2;
  Rng rng(48);
  CHECK_THROWS_AS((void)MoeParams<double>::init(cfg, rng), Error);

  cfg.top_k = 1;
  const auto p = MoeParams<double>::init(cfg, rng);
  // 12 is not divisible by scale 2 * grid side 2 * ... (needs multiples of 4).
  const auto x = rand_tensor<double>({1, 2, 6, 6}, rng);
  CHECK_THROWS_AS((void)run_moe(x, p, cfg, kTopK), Error);
}

TEST_CASE("gated ffn: zero weights and gate saturation") {
  Rng rng(49);
  auto p = GatedFfnParams<double>::init(2, rng);
  auto zeroed = p;
  zeroed.entry_w = Tensor<double>::zeros(p.entry_w.shape());
  zeroed.dw_w = Tensor<double>::zeros(p.dw_w.shape());
  zeroed.exit_w = Tensor<double>::zeros(p.exit_w.shape());
  const auto x = rand_tensor<double>({1, 2, 4, 4}, rng);
  CHECK(ops::max_abs(run_ffn(x, zeroed)) == 0.0);

  // Constant raw gate G via the entry bias: SiLU(G) ~ G for large G, so the
  // output approaches the value branch scaled by G.
  const double G = 25.0;
  auto sat = p;
  sat.entry_w = Tensor<double>::zeros(p.entry_w.shape());
  for (int64_t o = 0; o < 4; ++o) sat.entry_b[o] = G;            // gate half
  for (int64_t o = 4; o < 8; ++o) sat.entry_b[o] = 0.3 + 0.1 * double(o);  // value half
  const auto got = run_ffn(x, sat);

  const int64_t H = 4, W = 4;
  Tensor<double> want({1, 2, H, W});
  for (int64_t yy = 0; yy < H; ++yy)
    for (int64_t xx = 0; xx < W; ++xx) {
      double vald[4];
      for (int64_t m = 0; m < 4; ++m) {
        double acc = sat.dw_b[m];
        for (int64_t ky = 0; ky < 3; ++ky)
          for (int64_t kx = 0; kx < 3; ++kx) {
            const int64_t sy = yy + ky - 1, sx = xx + kx - 1;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            acc += sat.dw_w.at(m, int64_t{0}, ky, kx) * (0.3 + 0.1 * double(m + 4));
          }
        vald[m] = acc;
      }
      for (int64_t o = 0; o < 2; ++o) {
        double acc = sat.exit_b[o];
        for (int64_t m = 0; m < 4; ++m)
          acc += sat.exit_w.at(o, m, int64_t{0}, int64_t{0}) * (G * vald[m]);
        want.at(int64_t{0}, o, yy, xx) = acc;
      }
    }
  CHECK(max_abs_diff(got, want) < 1e-3);
}

TEST_CASE("sgme: dead branches give identity; wiring matches the chained form") {
  MoeConfig cfg;
  cfg.channels = 2;
  cfg.scales = {1, 2};
  cfg.tokens = 4;
  cfg.sp_iters = 1;
  cfg.top_k = 1;
  cfg.ssm.d_state = 2;
  Rng rng(50);
  auto p = SgmeParams<double>::init(cfg, rng);
  const auto x = rand_tensor<double>({1, 2, 8, 8}, rng);

  // Kill both residual branches: output must be the input, bit for bit.
  auto dead = p;
  dead.moe.entry_w = Tensor<double>::zeros(dead.moe.entry_w.shape());
  dead.moe.entry_b = Tensor<double>::zeros(dead.moe.entry_b.shape());
  dead.moe.exit_b = Tensor<double>::zeros(dead.moe.exit_b.shape());
  dead.ffn.entry_w = Tensor<double>::zeros(dead.ffn.entry_w.shape());
  dead.ffn.exit_b = Tensor<double>::zeros(dead.ffn.exit_b.shape());
  {
    Tape<double> tape(false);
    auto v = bind(tape, dead, false);
    const auto y = sgme_forward(tape.leaf(x), v, cfg, kDense, nullptr).value();
    CHECK(bitwise_equal(y, x));
  }

  // Random parameters: the block equals norm -> moe -> add, norm -> ffn -> add.
  Tape<double> tape(false);
  auto v = bind(tape, p, false);
  const auto got = sgme_forward(tape.leaf(x), v, cfg, kDense, nullptr).value();
  CHECK(got.shape() == x.shape());

  Tape<double> t2(false);
  auto mv = bind(t2, p.moe, false);
  auto fv = bind(t2, p.ffn, false);
  Var<double> xx = t2.leaf(x);
  Var<double> n1 = vops::layer_norm_chw(xx, t2.leaf(p.norm1_g), t2.leaf(p.norm1_b));
  Var<double> y = vops::add(xx, moe_forward(n1, mv, cfg, kDense, nullptr));
  Var<double> n2 = vops::layer_norm_chw(y, t2.leaf(p.norm2_g), t2.leaf(p.norm2_b));
  Var<double> zz = vops::add(y, gated_ffn_forward(n2, fv));
  CHECK(max_abs_diff(got, zz.value()) < 1e-12);
}
