#include "spmm/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <utility>

#include "spmm/train.hpp"

namespace spmm {

namespace {

using D = double;
using VD = Var<double>;
using FnD = std::function<VD(Tape<D>&, VD)>;

Tensor<D> randu(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Generic scalarisation: a fixed random projection of the op output, so the
// scalar is sensitive to every output coordinate with distinct weights.
VD proj(Tape<D>& t, VD y, uint64_t seed) {
  Tensor<D> w(y.value().shape());
  Rng rng(seed ^ 0xabcdef12u);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return vops::sum_all(vops::mul(y, t.constant(std::move(w))));
}

struct Suite {
  std::vector<GradCheckCase> cases;
  std::string filter;

  void run(const std::string& name, const FnD& f, const Tensor<D>& x, int64_t max_coords = -1) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    GradCheckCase c;
    c.name = name;
    try {
      c.report = grad_check<D>(f, x, kGradCheckEps, max_coords,
                               static_cast<uint64_t>(0x5eed ^ max_coords));
      c.pass = c.report.ok(kGradCheckTol);
    } catch (const std::exception& e) {
      c.pass = false;
      c.name += std::string("  [error: ") + e.what() + "]";
    }
    cases.push_back(std::move(c));
  }
};

// Soft differentiable routing: dense mixture, relaxed masks, no noise.
RunMode soft_mode() { return RunMode{true, GumbelMode{false, false, 1.0}}; }

// ----- elementwise / reduction primitives ------------------------------------

void add_primitive_cases(Suite& s) {
  const Tensor<D> x4 = randu({2, 3, 4, 5}, 11);
  const Tensor<D> x2 = randu({3, 7}, 12);

  s.run("prim.add", [](Tape<D>& t, VD v) {
    return proj(t, vops::add(v, t.constant(randu(v.value().shape(), 21))), 1);
  }, x4);
  s.run("prim.sub", [](Tape<D>& t, VD v) {
    return proj(t, vops::sub(t.constant(randu(v.value().shape(), 22)), v), 2);
  }, x4);
  s.run("prim.mul", [](Tape<D>& t, VD v) {
    return proj(t, vops::mul(v, t.constant(randu(v.value().shape(), 23))), 3);
  }, x4);
  s.run("prim.neg", [](Tape<D>& t, VD v) { return proj(t, vops::neg(v), 4); }, x4);
  s.run("prim.scale", [](Tape<D>& t, VD v) { return proj(t, vops::scale(v, 1.375), 5); }, x4);
  s.run("prim.add_scalar",
        [](Tape<D>& t, VD v) { return proj(t, vops::add_scalar(v, -0.25), 6); }, x4);
  // |x| is checked away from the kink at zero.
  s.run("prim.abs", [](Tape<D>& t, VD v) {
    return proj(t, vops::abs(vops::add_scalar(v, 3.0)), 7);
  }, x4);
  s.run("prim.silu", [](Tape<D>& t, VD v) { return proj(t, vops::silu(v), 8); }, x4);
  s.run("prim.sigmoid", [](Tape<D>& t, VD v) { return proj(t, vops::sigmoid(v), 9); }, x4);
  s.run("prim.softplus", [](Tape<D>& t, VD v) { return proj(t, vops::softplus(v), 10); }, x4);
  s.run("prim.relu", [](Tape<D>& t, VD v) {
    return proj(t, vops::relu(vops::add_scalar(v, 2.5)), 11);
  }, x4);
  s.run("prim.sum_all", [](Tape<D>& t, VD v) {
    (void)t;
    return vops::sum_all(v);
  }, x4);
  s.run("prim.mean_all", [](Tape<D>& t, VD v) {
    (void)t;
    return vops::mean_all(v);
  }, x4);
  s.run("prim.reciprocal", [](Tape<D>& t, VD v) {
    return proj(t, vops::reciprocal(vops::add_scalar(v, 4.0)), 12);
  }, x4);
  s.run("prim.softmax_last",
        [](Tape<D>& t, VD v) { return proj(t, vops::softmax_last(v), 13); }, x2);
  s.run("prim.straight_through.soft", [](Tape<D>& t, VD v) {
    // The estimator forwards `hard`, so f(x) must route x through `hard` for
    // the finite-difference side to see it: hard == soft checks the identity
    // backward exactly.
    return proj(t, vops::straight_through(v.value(), v), 14);
  }, x2);
}

// ----- shaped primitives -----------------------------------------------------

void add_shaped_cases(Suite& s) {
  const Tensor<D> x = randu({2, 4, 6, 6}, 31);
  const Tensor<D> gamma = randu({4}, 32, 0.5, 1.5);
  const Tensor<D> beta = randu({4}, 33);

  s.run("prim.spatial_mean",
        [](Tape<D>& t, VD v) { return proj(t, vops::spatial_mean(v), 20); }, x);
  s.run("prim.scale_channels.x", [&](Tape<D>& t, VD v) {
    return proj(t, vops::scale_channels(v, t.constant(randu({2, 4}, 34))), 21);
  }, x);
  s.run("prim.scale_channels.s", [&](Tape<D>& t, VD v) {
    return proj(t, vops::scale_channels(t.constant(x), v), 22);
  }, randu({2, 4}, 35));
  s.run("prim.scale_by.x", [](Tape<D>& t, VD v) {
    return proj(t, vops::scale_by(v, t.constant(Tensor<D>::full({1}, 0.8))), 23);
  }, x);
  s.run("prim.scale_by.s", [&](Tape<D>& t, VD v) {
    return proj(t, vops::scale_by(t.constant(x), v), 24);
  }, Tensor<D>::full({1}, 1.3));
  s.run("prim.layer_norm.x", [&](Tape<D>& t, VD v) {
    return proj(t, vops::layer_norm_chw(v, t.constant(gamma), t.constant(beta)), 25);
  }, x);
  s.run("prim.layer_norm.gamma", [&](Tape<D>& t, VD v) {
    return proj(t, vops::layer_norm_chw(t.constant(x), v, t.constant(beta)), 26);
  }, gamma);
  s.run("prim.layer_norm.beta", [&](Tape<D>& t, VD v) {
    return proj(t, vops::layer_norm_chw(t.constant(x), t.constant(gamma), v), 27);
  }, beta);

  const Tensor<D> cw = randu({3, 4, 3, 3}, 36, -0.3, 0.3);
  const Tensor<D> cb = randu({3}, 37);
  s.run("prim.conv2d.x", [&](Tape<D>& t, VD v) {
    return proj(t, vops::conv2d(v, t.constant(cw), t.constant(cb)), 28);
  }, x);
  s.run("prim.conv2d.w", [&](Tape<D>& t, VD v) {
    return proj(t, vops::conv2d(t.constant(x), v, t.constant(cb)), 29);
  }, cw);
  s.run("prim.conv2d.b", [&](Tape<D>& t, VD v) {
    return proj(t, vops::conv2d(t.constant(x), t.constant(cw), v), 30);
  }, cb);
  const Tensor<D> dw = randu({4, 1, 3, 3}, 38, -0.3, 0.3);
  s.run("prim.conv2d.depthwise", [&](Tape<D>& t, VD v) {
    return proj(t, vops::conv2d(v, t.constant(dw), t.constant(randu({4}, 39)),
                                ops::Pad::same, 4), 31);
  }, x);
  s.run("prim.conv2d.valid", [&](Tape<D>& t, VD v) {
    return proj(t, vops::conv2d(v, t.constant(cw), t.constant(cb), ops::Pad::valid), 32);
  }, x);
  s.run("prim.avg_pool2d", [](Tape<D>& t, VD v) {
    return proj(t, vops::avg_pool2d(v, 2), 33);
  }, randu({1, 3, 8, 8}, 40));
  s.run("prim.upsample_nearest", [](Tape<D>& t, VD v) {
    return proj(t, vops::upsample_nearest(v, 3), 34);
  }, randu({1, 3, 4, 4}, 41));
  s.run("prim.pixel_shuffle", [](Tape<D>& t, VD v) {
    return proj(t, vops::pixel_shuffle(v, 2), 35);
  }, randu({1, 8, 4, 4}, 42));
  s.run("prim.pixel_unshuffle", [](Tape<D>& t, VD v) {
    return proj(t, vops::pixel_unshuffle(v, 2), 36);
  }, randu({1, 2, 6, 6}, 43));

  const Tensor<D> lx = randu({5, 6}, 44);
  const Tensor<D> lw = randu({3, 6}, 45, -0.4, 0.4);
  const Tensor<D> lb = randu({3}, 46);
  s.run("prim.linear.x", [&](Tape<D>& t, VD v) {
    return proj(t, vops::linear(v, t.constant(lw), t.constant(lb)), 37);
  }, lx);
  s.run("prim.linear.w", [&](Tape<D>& t, VD v) {
    return proj(t, vops::linear(t.constant(lx), v, t.constant(lb)), 38);
  }, lw);
  s.run("prim.linear.b", [&](Tape<D>& t, VD v) {
    return proj(t, vops::linear(t.constant(lx), t.constant(lw), v), 39);
  }, lb);

  const Tensor<D> ba = randu({2, 3, 4}, 47);
  const Tensor<D> bb = randu({2, 4, 5}, 48);
  s.run("prim.bmm.a", [&](Tape<D>& t, VD v) {
    return proj(t, vops::bmm(v, t.constant(bb)), 40);
  }, ba);
  s.run("prim.bmm.b", [&](Tape<D>& t, VD v) {
    return proj(t, vops::bmm(t.constant(ba), v), 41);
  }, bb);

  s.run("prim.transpose_last",
        [](Tape<D>& t, VD v) { return proj(t, vops::transpose_last(v), 42); }, ba);
  s.run("prim.reshape", [](Tape<D>& t, VD v) {
    return proj(t, vops::reshape(v, {4, 6}), 43);
  }, ba);
  s.run("prim.permute", [](Tape<D>& t, VD v) {
    return proj(t, vops::permute(v, {2, 0, 1}), 44);
  }, ba);
  s.run("prim.roll2d", [&](Tape<D>& t, VD v) { return proj(t, vops::roll2d(v, 2, -1), 45); }, x);
  s.run("prim.pad_reflect_br",
        [&](Tape<D>& t, VD v) { return proj(t, vops::pad_reflect_br(v, 3, 2), 46); }, x);
  s.run("prim.crop2d", [&](Tape<D>& t, VD v) { return proj(t, vops::crop2d(v, 4, 3), 47); }, x);
  s.run("prim.narrow", [&](Tape<D>& t, VD v) {
    return proj(t, vops::narrow(v, 1, 1, 2), 48);
  }, x);
  s.run("prim.concat", [&](Tape<D>& t, VD v) {
    std::vector<VD> parts{v, t.constant(randu({2, 2, 6, 6}, 49))};
    return proj(t, vops::concat(parts, 1), 49);
  }, x);
  s.run("prim.dft2", [](Tape<D>& t, VD v) {
    auto [re, im] = vops::dft2(v);
    return vops::add(proj(t, re, 50), proj(t, im, 51));
  }, randu({1, 2, 5, 6}, 50));
}

// ----- state-space cases -----------------------------------------------------

SsmConfig ssm_cfg(bool bidir) {
  SsmConfig c;
  c.d_state = 4;
  c.bidirectional = bidir;
  return c;
}

SsmParams<D> ssm_params(int64_t C, int d, uint64_t seed) {
  Rng rng(seed);
  return SsmParams<D>::init(static_cast<int>(C), d, rng);
}

void add_ssm_cases(Suite& s) {
  const int64_t L = 7, C = 5;
  const SsmParams<D> p0 = ssm_params(C, 4, 101);
  const Tensor<D> x = randu({L, C}, 102);

  auto with_param = [&](const std::string& field) {
    return [&, field](Tape<D>& t, VD v) {
      SsmVars<D> pv = bind(t, p0, false);
      if (field == "x") {
        return proj(t, ssm_block(v, pv, ssm_cfg(false)), 60);
      }
      if (field == "a") pv.a = v;
      else if (field == "d") pv.d = v;
      else if (field == "b_proj") pv.b_proj = v;
      else if (field == "c_proj") pv.c_proj = v;
      else if (field == "dt_w") pv.dt_proj_w = v;
      else pv.dt_proj_b = v;
      return proj(t, ssm_block(t.constant(x), pv, ssm_cfg(false)), 60);
    };
  };
  s.run("ssm.block.x", with_param("x"), x);
  s.run("ssm.block.a", with_param("a"), p0.a);
  s.run("ssm.block.d", with_param("d"), p0.d);
  s.run("ssm.block.b_proj", with_param("b_proj"), p0.b_proj);
  s.run("ssm.block.c_proj", with_param("c_proj"), p0.c_proj);
  s.run("ssm.block.dt_w", with_param("dt_w"), p0.dt_proj_w);
  s.run("ssm.block.dt_b", with_param("dt_b"), p0.dt_proj_b);
  s.run("ssm.block.bidirectional.x", [&](Tape<D>& t, VD v) {
    return proj(t, ssm_block(v, bind(t, p0, false), ssm_cfg(true)), 61);
  }, x);
}

// ----- superpixel cases ------------------------------------------------------

void add_superpixel_cases(Suite& s) {
  const SuperpixelGrid grid = SuperpixelGrid::make_square(8, 8, 16);
  const TablePtr table = build_candidates_shared(grid);
  const int64_t N = 64, C = 3, M = 16;
  const Tensor<D> pix = randu({N, C}, 111, 0.0, 1.0);

  s.run("superpixel.sample.features", [&](Tape<D>& t, VD v) {
    SuperpixelSampleV<D> sp = v_sample(v, grid, 3);
    return vops::add(proj(t, sp.features, 70), proj(t, sp.assoc, 71));
  }, pix);
  s.run("superpixel.similarity.x", [&](Tape<D>& t, VD v) {
    VD cent = v_init_superpixels(t.constant(pix), grid);
    return proj(t, v_similarity(v, cent, table), 72);
  }, pix);
  s.run("superpixel.similarity.s", [&](Tape<D>& t, VD v) {
    return proj(t, v_similarity(t.constant(pix), v, table), 73);
  }, randu({M, C}, 112, 0.0, 1.0));
  s.run("superpixel.update.x", [&](Tape<D>& t, VD v) {
    VD cent = v_init_superpixels(t.constant(pix), grid);
    VD sim = v_similarity(t.constant(pix), cent, table);
    return proj(t, v_update(v, sim, cent, table), 74);
  }, pix);
  s.run("superpixel.update.sim", [&](Tape<D>& t, VD v) {
    VD cent = v_init_superpixels(t.constant(pix), grid);
    return proj(t, v_update(t.constant(pix), v, cent, table), 75);
  }, randu({N, kSlots}, 113, 0.05, 1.0));
  s.run("superpixel.row_normalize", [&](Tape<D>& t, VD v) {
    return proj(t, v_row_normalize(v, table), 76);
  }, randu({N, kSlots}, 114, 0.05, 1.0));
  s.run("superpixel.scatter.weights", [&](Tape<D>& t, VD v) {
    return proj(t, v_scatter(v, t.constant(randu({M, C}, 115)), table), 77);
  }, randu({N, kSlots}, 116, 0.0, 1.0));
  s.run("superpixel.scatter.tokens", [&](Tape<D>& t, VD v) {
    return proj(t, v_scatter(t.constant(randu({N, kSlots}, 117, 0.0, 1.0)), v, table), 78);
  }, randu({M, C}, 118));
  s.run("superpixel.gumbel.soft", [&](Tape<D>& t, VD v) {
    GumbelMode mode{false, false, 0.9};
    return proj(t, v_gumbel_mask(v, table, mode, nullptr), 79);
  }, randu({N, kSlots}, 119, 0.05, 1.0));
  s.run("superpixel.gumbel.soft_noise", [&](Tape<D>& t, VD v) {
    GumbelMode mode{true, false, 1.1};
    Rng rng(4242);  // recreated per evaluation: fixed noise
    return proj(t, v_gumbel_mask(v, table, mode, &rng), 80);
  }, randu({N, kSlots}, 120, 0.05, 1.0));
}

// ----- composite blocks ------------------------------------------------------

SpssmConfig spssm_cfg(int scale, bool full_res) {
  SpssmConfig c;
  c.channels = 4;
  c.scale = scale;
  c.tokens = 4;
  c.sp_iters = 2;
  c.fuse_full_res = full_res;
  c.ssm.d_state = 3;
  c.ssm.bidirectional = true;
  return c;
}

void add_spssm_cases(Suite& s) {
  const SpssmConfig cfg = spssm_cfg(1, false);
  Rng prng(131);
  const SpssmParams<D> p0 = SpssmParams<D>::init(cfg, prng);
  const Tensor<D> x = randu({1, 4, 8, 8}, 132, 0.0, 1.0);
  const GumbelMode soft{false, false, 1.0};

  s.run("spssm.x", [&](Tape<D>& t, VD v) {
    return proj(t, spssm_forward(v, bind(t, p0, false), cfg, soft, nullptr), 90);
  }, x);
  s.run("spssm.conv_w", [&](Tape<D>& t, VD v) {
    SpssmVars<D> pv = bind(t, p0, false);
    pv.conv_w = v;
    return proj(t, spssm_forward(t.constant(x), pv, cfg, soft, nullptr), 91);
  }, p0.conv_w);
  s.run("spssm.ssm.b_proj", [&](Tape<D>& t, VD v) {
    SpssmVars<D> pv = bind(t, p0, false);
    pv.ssm.b_proj = v;
    return proj(t, spssm_forward(t.constant(x), pv, cfg, soft, nullptr), 92);
  }, p0.ssm.b_proj);
  const SpssmConfig cfg2 = spssm_cfg(2, true);
  Rng prng2(133);
  const SpssmParams<D> p2 = SpssmParams<D>::init(cfg2, prng2);
  s.run("spssm.pooled_full_res.x", [&](Tape<D>& t, VD v) {
    return proj(t, spssm_forward(v, bind(t, p2, false), cfg2, soft, nullptr), 93);
  }, x);
}

MoeConfig moe_cfg() {
  MoeConfig c;
  c.channels = 4;
  c.scales = {1, 2};
  c.tokens = 4;
  c.sp_iters = 2;
  c.top_k = 1;
  c.ssm.d_state = 3;
  c.ssm.bidirectional = false;
  return c;
}

void add_moe_cases(Suite& s) {
  const MoeConfig cfg = moe_cfg();
  Rng prng(141);
  const MoeParams<D> p0 = MoeParams<D>::init(cfg, prng);
  const Tensor<D> x = randu({1, 4, 8, 8}, 142, 0.0, 1.0);

  s.run("moe.dense.x", [&](Tape<D>& t, VD v) {
    return proj(t, moe_forward(v, bind(t, p0, false), cfg, soft_mode(), nullptr), 100);
  }, x);
  s.run("moe.dense.router_w", [&](Tape<D>& t, VD v) {
    MoeVars<D> pv = bind(t, p0, false);
    pv.router_w = v;
    return proj(t, moe_forward(t.constant(x), pv, cfg, soft_mode(), nullptr), 101);
  }, p0.router_w);
  s.run("moe.dense.entry_w", [&](Tape<D>& t, VD v) {
    MoeVars<D> pv = bind(t, p0, false);
    pv.entry_w = v;
    return proj(t, moe_forward(t.constant(x), pv, cfg, soft_mode(), nullptr), 102);
  }, p0.entry_w);
  s.run("moe.dense.expert_conv", [&](Tape<D>& t, VD v) {
    MoeVars<D> pv = bind(t, p0, false);
    pv.experts[1].conv_w = v;
    return proj(t, moe_forward(t.constant(x), pv, cfg, soft_mode(), nullptr), 103);
  }, p0.experts[1].conv_w);
  // The acceptance wording: routed mixture with fixed Gumbel noise.  The rng
  // is rebuilt per evaluation, so every probe sees identical noise.
  s.run("moe.dense.fixed_noise.x", [&](Tape<D>& t, VD v) {
    RunMode mode{true, GumbelMode{true, false, 0.8}};
    Rng rng(31337);
    return proj(t, moe_forward(v, bind(t, p0, false), cfg, mode, &rng), 104);
  }, x);

  Rng frng(143);
  const GatedFfnParams<D> f0 = GatedFfnParams<D>::init(4, frng);
  s.run("ffn.x", [&](Tape<D>& t, VD v) {
    return proj(t, gated_ffn_forward(v, bind(t, f0, false)), 105);
  }, x);
  s.run("ffn.entry_w", [&](Tape<D>& t, VD v) {
    GatedFfnVars<D> pv = bind(t, f0, false);
    pv.entry_w = v;
    return proj(t, gated_ffn_forward(t.constant(x), pv), 106);
  }, f0.entry_w);
  s.run("ffn.dw_w", [&](Tape<D>& t, VD v) {
    GatedFfnVars<D> pv = bind(t, f0, false);
    pv.dw_w = v;
    return proj(t, gated_ffn_forward(t.constant(x), pv), 107);
  }, f0.dw_w);

  Rng srng(144);
  const SgmeParams<D> g0 = SgmeParams<D>::init(cfg, srng);
  s.run("sgme.x", [&](Tape<D>& t, VD v) {
    return proj(t, sgme_forward(v, bind(t, g0, false), cfg, soft_mode(), nullptr), 108);
  }, x);
}

LsmeConfig lsme_cfg_small(int shift) {
  LsmeConfig c;
  c.channels = 4;
  c.window = 4;
  c.heads = 2;
  c.shift = shift;
  return c;
}

void add_lsme_cases(Suite& s) {
  const LsmeConfig cfg = lsme_cfg_small(0);
  Rng prng(151);
  const LsmeParams<D> p0 = LsmeParams<D>::init(cfg, prng);
  const Tensor<D> x = randu({1, 4, 8, 8}, 152, 0.0, 1.0);

  s.run("lsme.ca.x", [&](Tape<D>& t, VD v) {
    return proj(t, channel_attention(v, bind(t, p0, false)), 110);
  }, x);
  s.run("lsme.attn.x", [&](Tape<D>& t, VD v) {
    return proj(t, window_attention(v, bind(t, p0, false), cfg), 111);
  }, x);
  s.run("lsme.attn.qkv_w", [&](Tape<D>& t, VD v) {
    LsmeVars<D> pv = bind(t, p0, false);
    pv.qkv_w = v;
    return proj(t, window_attention(t.constant(x), pv, cfg), 112);
  }, p0.qkv_w);
  s.run("lsme.attn.rel_bias", [&](Tape<D>& t, VD v) {
    LsmeVars<D> pv = bind(t, p0, false);
    pv.rel_bias = v;
    return proj(t, window_attention(t.constant(x), pv, cfg), 113);
  }, p0.rel_bias);
  const LsmeConfig shifted = lsme_cfg_small(2);
  s.run("lsme.attn.shifted.x", [&](Tape<D>& t, VD v) {
    return proj(t, window_attention(v, bind(t, p0, false), shifted), 114);
  }, x);
  s.run("lsme.block.x", [&](Tape<D>& t, VD v) {
    return proj(t, lsme_forward(v, bind(t, p0, false), shifted), 115);
  }, x);
  s.run("lsme.block.ca_fc1_w", [&](Tape<D>& t, VD v) {
    LsmeVars<D> pv = bind(t, p0, false);
    pv.ca_fc1_w = v;
    return proj(t, lsme_forward(t.constant(x), pv, cfg), 116);
  }, p0.ca_fc1_w);
}

// ----- full model ------------------------------------------------------------

void add_model_cases(Suite& s) {
  const ModelConfig cfg = ModelConfig::preset("t-mini", 2);
  const Model<D> model = model_init<D>(cfg, 1234);
  const Tensor<D> lr_img = randu({1, 3, 8, 8}, 161, 0.0, 1.0);
  const Tensor<D> hr_img = randu({1, 3, 16, 16}, 162, 0.0, 1.0);

  auto loss_with = [&](Tape<D>& t, const std::map<std::string, Var<D>>* ov, VD input) {
    BoundModel<D> bm = bind_model(t, model, false, ov);
    Var<D> sr = model_forward(input, bm, cfg, soft_mode(), nullptr);
    return train_loss(sr, t.constant(hr_img), 0.05);
  };

  s.run("model.loss.input", [&](Tape<D>& t, VD v) {
    return loss_with(t, nullptr, v);
  }, lr_img, 16);
  for (const auto& kv : model.weights) {
    const std::string name = kv.first;
    s.run("model.loss." + name, [&, name](Tape<D>& t, VD v) {
      std::map<std::string, Var<D>> ov{{name, v}};
      return loss_with(t, &ov, t.constant(lr_img));
    }, kv.second, 2);
  }
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(const std::string& filter) {
  Suite s;
  s.filter = filter;
  add_primitive_cases(s);
  add_shaped_cases(s);
  add_ssm_cases(s);
  add_superpixel_cases(s);
  add_spssm_cases(s);
  add_moe_cases(s);
  add_lsme_cases(s);
  add_model_cases(s);
  return std::move(s.cases);
}

}  // namespace spmm
