#include "spmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace spmm {

namespace {

void check_config(const ModelConfig& cfg) {
  if (cfg.channels <= 0) throw Error("model: channel count must be positive");
  if (cfg.channels % 4 != 0)
    throw Error("model: channels must be divisible by 4 (excitation reduction)");
  if (cfg.heads < 1 || cfg.channels % cfg.heads != 0)
    throw Error("model: channels must be divisible by the head count");
  if (cfg.n_loe < 1) throw Error("model: need at least one layer group");
  if (cfg.m_pairs < 1) throw Error("model: need at least one block pair per group");
  if (cfg.upscale < 1) throw Error("model: upscale must be at least 1");
  if (cfg.window < 1) throw Error("model: window must be positive");
  if (cfg.scales.empty()) throw Error("model: need at least one expert scale");
  cfg.grid_side();  // validates the token count
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double std_dev = std::min(0.02, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.truncated_normal(std_dev));
  return t;
}

// ----- flattening a typed parameter pack into the name -> tensor map ---------

template <typename T>
void put(WeightMap<T>& w, const std::string& name, Tensor<T> tensor) {
  if (!w.emplace(name, std::move(tensor)).second)
    throw Error("model weights: duplicate tensor '" + name + "'");
}

template <typename T>
void put_ssm(WeightMap<T>& w, const std::string& pre, SsmParams<T> p) {
  put(w, pre + ".a", std::move(p.a));
  put(w, pre + ".d", std::move(p.d));
  put(w, pre + ".b_proj", std::move(p.b_proj));
  put(w, pre + ".c_proj", std::move(p.c_proj));
  put(w, pre + ".dt_w", std::move(p.dt_proj_w));
  put(w, pre + ".dt_b", std::move(p.dt_proj_b));
}

template <typename T>
void put_spssm(WeightMap<T>& w, const std::string& pre, SpssmParams<T> p) {
  put(w, pre + ".conv.w", std::move(p.conv_w));
  put(w, pre + ".conv.b", std::move(p.conv_b));
  put_ssm(w, pre + ".ssm", std::move(p.ssm));
}

template <typename T>
void put_ffn(WeightMap<T>& w, const std::string& pre, GatedFfnParams<T> p) {
  put(w, pre + ".entry.w", std::move(p.entry_w));
  put(w, pre + ".entry.b", std::move(p.entry_b));
  put(w, pre + ".dw.w", std::move(p.dw_w));
  put(w, pre + ".dw.b", std::move(p.dw_b));
  put(w, pre + ".exit.w", std::move(p.exit_w));
  put(w, pre + ".exit.b", std::move(p.exit_b));
}

template <typename T>
void put_moe(WeightMap<T>& w, const std::string& pre, MoeParams<T> p) {
  put(w, pre + ".entry.w", std::move(p.entry_w));
  put(w, pre + ".entry.b", std::move(p.entry_b));
  for (size_t k = 0; k < p.experts.size(); ++k)
    put_spssm(w, pre + ".expert" + std::to_string(k), std::move(p.experts[k]));
  put(w, pre + ".router.w", std::move(p.router_w));
  put(w, pre + ".router.b", std::move(p.router_b));
  put(w, pre + ".exit.w", std::move(p.exit_w));
  put(w, pre + ".exit.b", std::move(p.exit_b));
}

template <typename T>
void put_sgme(WeightMap<T>& w, const std::string& pre, SgmeParams<T> p) {
  put(w, pre + ".norm1.g", std::move(p.norm1_g));
  put(w, pre + ".norm1.b", std::move(p.norm1_b));
  put_moe(w, pre + ".moe", std::move(p.moe));
  put(w, pre + ".norm2.g", std::move(p.norm2_g));
  put(w, pre + ".norm2.b", std::move(p.norm2_b));
  put_ffn(w, pre + ".ffn", std::move(p.ffn));
}

template <typename T>
void put_lsme(WeightMap<T>& w, const std::string& pre, LsmeParams<T> p) {
  put(w, pre + ".norm1.g", std::move(p.norm1_g));
  put(w, pre + ".norm1.b", std::move(p.norm1_b));
  put(w, pre + ".ca.fc1.w", std::move(p.ca_fc1_w));
  put(w, pre + ".ca.fc1.b", std::move(p.ca_fc1_b));
  put(w, pre + ".ca.fc2.w", std::move(p.ca_fc2_w));
  put(w, pre + ".ca.fc2.b", std::move(p.ca_fc2_b));
  put(w, pre + ".attn.qkv.w", std::move(p.qkv_w));
  put(w, pre + ".attn.qkv.b", std::move(p.qkv_b));
  put(w, pre + ".attn.proj.w", std::move(p.proj_w));
  put(w, pre + ".attn.proj.b", std::move(p.proj_b));
  put(w, pre + ".attn.rel_bias", std::move(p.rel_bias));
  put(w, pre + ".norm2.g", std::move(p.norm2_g));
  put(w, pre + ".norm2.b", std::move(p.norm2_b));
  put_ffn(w, pre + ".ffn", std::move(p.ffn));
}

// ----- rebuilding tape-bound views from the map ------------------------------

template <typename T>
class Binder {
 public:
  Binder(Tape<T>& t, const WeightMap<T>& w, bool rg,
         std::vector<std::pair<std::string, Var<T>>>& leaves,
         const std::map<std::string, Var<T>>* overrides)
      : t_(t), w_(w), rg_(rg), leaves_(leaves), overrides_(overrides) {}

  Var<T> get(const std::string& name) {
    auto it = w_.find(name);
    if (it == w_.end()) throw Error("model weights: missing tensor '" + name + "'");
    used_.insert(name);
    if (overrides_) {
      auto oit = overrides_->find(name);
      if (oit != overrides_->end()) {
        if (!oit->second.value().same_shape(it->second))
          throw Error("model weights: override shape mismatch for '" + name + "'");
        leaves_.emplace_back(name, oit->second);
        return oit->second;
      }
    }
    Var<T> v = t_.leaf(it->second, rg_);
    leaves_.emplace_back(name, v);
    return v;
  }

  // Every stored tensor must have been fetched exactly once by the schema.
  void check_consumed() const {
    for (const auto& kv : w_)
      if (!used_.count(kv.first))
        throw Error("model weights: unexpected tensor '" + kv.first + "'");
  }

 private:
  Tape<T>& t_;
  const WeightMap<T>& w_;
  bool rg_;
  std::vector<std::pair<std::string, Var<T>>>& leaves_;
  const std::map<std::string, Var<T>>* overrides_;
  std::set<std::string> used_;
};

template <typename T>
SsmVars<T> bind_ssm(Binder<T>& b, const std::string& pre) {
  SsmVars<T> v;
  v.a = b.get(pre + ".a");
  v.d = b.get(pre + ".d");
  v.b_proj = b.get(pre + ".b_proj");
  v.c_proj = b.get(pre + ".c_proj");
  v.dt_proj_w = b.get(pre + ".dt_w");
  v.dt_proj_b = b.get(pre + ".dt_b");
  return v;
}

template <typename T>
SpssmVars<T> bind_spssm(Binder<T>& b, const std::string& pre) {
  SpssmVars<T> v;
  v.conv_w = b.get(pre + ".conv.w");
  v.conv_b = b.get(pre + ".conv.b");
  v.ssm = bind_ssm(b, pre + ".ssm");
  return v;
}

template <typename T>
GatedFfnVars<T> bind_ffn(Binder<T>& b, const std::string& pre) {
  GatedFfnVars<T> v;
  v.entry_w = b.get(pre + ".entry.w");
  v.entry_b = b.get(pre + ".entry.b");
  v.dw_w = b.get(pre + ".dw.w");
  v.dw_b = b.get(pre + ".dw.b");
  v.exit_w = b.get(pre + ".exit.w");
  v.exit_b = b.get(pre + ".exit.b");
  return v;
}

template <typename T>
MoeVars<T> bind_moe(Binder<T>& b, const std::string& pre, int64_t n_experts) {
  MoeVars<T> v;
  v.entry_w = b.get(pre + ".entry.w");
  v.entry_b = b.get(pre + ".entry.b");
  for (int64_t k = 0; k < n_experts; ++k)
    v.experts.push_back(bind_spssm(b, pre + ".expert" + std::to_string(k)));
  v.router_w = b.get(pre + ".router.w");
  v.router_b = b.get(pre + ".router.b");
  v.exit_w = b.get(pre + ".exit.w");
  v.exit_b = b.get(pre + ".exit.b");
  return v;
}

template <typename T>
SgmeVars<T> bind_sgme(Binder<T>& b, const std::string& pre, int64_t n_experts) {
  SgmeVars<T> v;
  v.norm1_g = b.get(pre + ".norm1.g");
  v.norm1_b = b.get(pre + ".norm1.b");
  v.moe = bind_moe(b, pre + ".moe", n_experts);
  v.norm2_g = b.get(pre + ".norm2.g");
  v.norm2_b = b.get(pre + ".norm2.b");
  v.ffn = bind_ffn(b, pre + ".ffn");
  return v;
}

template <typename T>
LsmeVars<T> bind_lsme(Binder<T>& b, const std::string& pre) {
  LsmeVars<T> v;
  v.norm1_g = b.get(pre + ".norm1.g");
  v.norm1_b = b.get(pre + ".norm1.b");
  v.ca_fc1_w = b.get(pre + ".ca.fc1.w");
  v.ca_fc1_b = b.get(pre + ".ca.fc1.b");
  v.ca_fc2_w = b.get(pre + ".ca.fc2.w");
  v.ca_fc2_b = b.get(pre + ".ca.fc2.b");
  v.qkv_w = b.get(pre + ".attn.qkv.w");
  v.qkv_b = b.get(pre + ".attn.qkv.b");
  v.proj_w = b.get(pre + ".attn.proj.w");
  v.proj_b = b.get(pre + ".attn.proj.b");
  v.rel_bias = b.get(pre + ".attn.rel_bias");
  v.norm2_g = b.get(pre + ".norm2.g");
  v.norm2_b = b.get(pre + ".norm2.b");
  v.ffn = bind_ffn(b, pre + ".ffn");
  return v;
}

}  // namespace

// ----- configuration ---------------------------------------------------------

MoeConfig ModelConfig::sgme_cfg() const {
  MoeConfig c;
  c.channels = channels;
  c.scales = scales;
  c.tokens = tokens;
  c.sp_iters = sp_iters;
  c.top_k = top_k;
  c.fuse_full_res = fuse_full_res;
  c.ssm.d_state = d_state;
  c.ssm.bidirectional = bidirectional;
  return c;
}

LsmeConfig ModelConfig::lsme_cfg(int shift) const {
  LsmeConfig c;
  c.channels = channels;
  c.window = window;
  c.heads = heads;
  c.shift = shift;
  return c;
}

int64_t ModelConfig::grid_side() const {
  const auto g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (g < 1 || g * g != tokens)
    throw Error("model: token count must be a perfect square, got " + std::to_string(tokens));
  return g;
}

int64_t ModelConfig::pad_multiple() const {
  // Window attention needs window | H; expert at stride s needs the pooled
  // H/s to split into grid_side cells, i.e. (s * grid_side) | H.
  int64_t m = window;
  for (int s : scales) m = std::lcm(m, static_cast<int64_t>(s) * grid_side());
  return m;
}

ModelConfig ModelConfig::preset(const std::string& name, int upscale) {
  std::string key(name);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  ModelConfig cfg;
  cfg.upscale = upscale;
  if (key == "t") {
    // defaults
  } else if (key == "b") {
    cfg.channels = 48;
    cfg.n_loe = 4;
  } else if (key == "t-mini") {
    cfg.channels = 16;
    cfg.n_loe = 1;
    cfg.m_pairs = 1;
    cfg.tokens = 16;
    cfg.d_state = 8;
  } else {
    throw Error("model: unknown preset '" + name + "' (expected t, b, or t-mini)");
  }
  check_config(cfg);
  return cfg;
}

// ----- build -----------------------------------------------------------------

template <typename T>
Model<T> model_init(const ModelConfig& cfg, uint64_t seed) {
  check_config(cfg);
  Rng rng(seed);
  WeightMap<T> w;
  const int64_t C = cfg.channels;
  put(w, "stem.w", trunc_normal<T>({C, 3, 3, 3}, 3 * 9, rng));
  put(w, "stem.b", Tensor<T>::zeros({C}));
  const MoeConfig mc = cfg.sgme_cfg();
  const LsmeConfig lc = cfg.lsme_cfg(0);  // shift does not shape parameters
  for (int i = 0; i < cfg.n_loe; ++i) {
    const std::string lp = "loe" + std::to_string(i);
    for (int j = 0; j < cfg.m_pairs; ++j) {
      const std::string bp = lp + ".blk" + std::to_string(j);
      put_sgme(w, bp + ".sgme", SgmeParams<T>::init(mc, rng));
      put_lsme(w, bp + ".lsme", LsmeParams<T>::init(lc, rng));
    }
    put(w, lp + ".conv.w", trunc_normal<T>({C, C, 3, 3}, C * 9, rng));
    put(w, lp + ".conv.b", Tensor<T>::zeros({C}));
    put(w, lp + ".beta", Tensor<T>::ones({1}));
    put(w, lp + ".gamma", Tensor<T>::ones({1}));
  }
  put(w, "tail.w", trunc_normal<T>({C, C, 3, 3}, C * 9, rng));
  put(w, "tail.b", Tensor<T>::zeros({C}));
  const int64_t head_out = 3LL * cfg.upscale * cfg.upscale;
  put(w, "head.w", trunc_normal<T>({head_out, C, 3, 3}, C * 9, rng));
  put(w, "head.b", Tensor<T>::zeros({head_out}));
  return Model<T>{cfg, std::move(w)};
}

template <typename T>
BoundModel<T> bind_model(Tape<T>& t, const Model<T>& m, bool requires_grad,
                         const std::map<std::string, Var<T>>* overrides) {
  check_config(m.cfg);
  BoundModel<T> bm;
  Binder<T> b(t, m.weights, requires_grad, bm.leaves, overrides);
  bm.stem_w = b.get("stem.w");
  bm.stem_b = b.get("stem.b");
  const int64_t n_experts = m.cfg.sgme_cfg().experts();
  for (int i = 0; i < m.cfg.n_loe; ++i) {
    const std::string lp = "loe" + std::to_string(i);
    LoeVars<T> g;
    for (int j = 0; j < m.cfg.m_pairs; ++j) {
      const std::string bp = lp + ".blk" + std::to_string(j);
      g.sgme.push_back(bind_sgme(b, bp + ".sgme", n_experts));
      g.lsme.push_back(bind_lsme(b, bp + ".lsme"));
    }
    g.conv_w = b.get(lp + ".conv.w");
    g.conv_b = b.get(lp + ".conv.b");
    g.beta = b.get(lp + ".beta");
    g.gamma = b.get(lp + ".gamma");
    bm.loe.push_back(std::move(g));
  }
  bm.tail_w = b.get("tail.w");
  bm.tail_b = b.get("tail.b");
  bm.head_w = b.get("head.w");
  bm.head_b = b.get("head.b");
  b.check_consumed();
  return bm;
}

// ----- forward ---------------------------------------------------------------

template <typename T>
Var<T> model_forward(Var<T> x, const BoundModel<T>& p, const ModelConfig& cfg,
                     const RunMode& mode, Rng* rng, ScanStats* scan_stats,
                     MoeRunStats* run_stats) {
  const Shape in_shape = x.value().shape();
  if (in_shape.size() != 4 || in_shape[0] != 1 || in_shape[1] != 3)
    throw Error("model: expected a [1,3,H,W] input, got " + shape_str(in_shape));
  const int64_t H = in_shape[2], W = in_shape[3];
  const int64_t mult = cfg.pad_multiple();
  const int pb = static_cast<int>((mult - H % mult) % mult);
  const int pr = static_cast<int>((mult - W % mult) % mult);
  if (pb || pr) x = vops::pad_reflect_br(x, pb, pr);

  Var<T> feat = vops::conv2d(x, p.stem_w, p.stem_b, ops::Pad::same);
  const MoeConfig mc = cfg.sgme_cfg();
  int local_block = 0;
  for (const LoeVars<T>& g : p.loe) {
    Var<T> chain = feat;
    for (size_t j = 0; j < g.sgme.size(); ++j) {
      chain = sgme_forward(chain, g.sgme[j], mc, mode, rng, scan_stats, run_stats);
      const int shift = (local_block++ % 2) ? cfg.window / 2 : 0;
      chain = lsme_forward(chain, g.lsme[j], cfg.lsme_cfg(shift));
    }
    Var<T> y = vops::add(feat, vops::scale_by(chain, g.beta));
    Var<T> conv = vops::conv2d(y, g.conv_w, g.conv_b, ops::Pad::same);
    feat = vops::add(feat, vops::scale_by(conv, g.gamma));
  }
  Var<T> tail = vops::conv2d(feat, p.tail_w, p.tail_b, ops::Pad::same);
  Var<T> head = vops::conv2d(tail, p.head_w, p.head_b, ops::Pad::same);
  Var<T> sr = vops::pixel_shuffle(head, cfg.upscale);
  if (pb || pr) sr = vops::crop2d(sr, H * cfg.upscale, W * cfg.upscale);
  return sr;
}

template <typename T>
Tensor<T> model_apply(const Tensor<T>& lr, const Model<T>& m, const RunMode& mode,
                      uint64_t noise_seed, ScanStats* scan_stats, MoeRunStats* run_stats) {
  if (lr.rank() != 4 || lr.dim(1) != 3)
    throw Error("model: expected a [B,3,H,W] input, got " + shape_str(lr.shape()));
  const int64_t B = lr.dim(0), H = lr.dim(2), W = lr.dim(3);
  const int64_t r = m.cfg.upscale;
  Tensor<T> out({B, 3, H * r, W * r});
  Rng rng(noise_seed);
  const int64_t per = 3 * H * r * W * r;
  for (int64_t b = 0; b < B; ++b) {
    Tape<T> t(false);
    BoundModel<T> bm = bind_model(t, m, false);
    Var<T> xb = t.constant(ops::narrow(lr, 0, b, 1));
    Var<T> y = model_forward(xb, bm, m.cfg, mode, &rng, scan_stats, run_stats);
    std::copy_n(y.value().data(), per, out.data() + b * per);
  }
  return out;
}

// ----- accounting ------------------------------------------------------------

template <typename T>
int64_t param_count(const Model<T>& m) {
  int64_t n = 0;
  for (const auto& kv : m.weights) n += kv.second.numel();
  return n;
}

MacsBreakdown model_macs(const ModelConfig& cfg, int64_t h_out, int64_t w_out) {
  check_config(cfg);
  if (h_out < 1 || w_out < 1) throw Error("model: output extent must be positive");
  const double C = static_cast<double>(cfg.channels);
  const double r = static_cast<double>(cfg.upscale);
  const double N = static_cast<double>(h_out) * static_cast<double>(w_out) / (r * r);
  const double d = static_cast<double>(cfg.d_state);
  const double M = static_cast<double>(cfg.tokens);
  const double dirs = cfg.bidirectional ? 2.0 : 1.0;
  const double n_exp = static_cast<double>(cfg.scales.size());
  const double blocks = static_cast<double>(cfg.n_loe) * static_cast<double>(cfg.m_pairs);

  // Shared gated feed-forward: 1x1 C->4C, depthwise 3x3 on 2C, 1x1 2C->C.
  const double ffn = N * C * 4 * C + N * 2 * C * 9 + N * 2 * C * C;

  double expert_sum = 0;
  for (int s : cfg.scales) {
    const double np = N / (static_cast<double>(s) * static_cast<double>(s));
    const double dw = N * C * 9;  // full-resolution depthwise transform
    const double cluster = 2.0 * cfg.sp_iters * np * 9 * C;  // distance + update per pass
    const double ssm = dirs * (M * C * C           // step-size projection
                               + 2 * M * C * d     // input/output projections
                               + 7 * M * C * d     // discretize + recurrence + emit
                               + M * C);           // skip gain
    expert_sum += dw + cluster + ssm;
  }
  const double routed = expert_sum * static_cast<double>(cfg.top_k) / n_exp;
  const double router = n_exp * C;
  const double moe = N * C * 2 * C + routed + router + N * C * C;  // entry + experts + exit
  const double sgme = moe + ffn;

  const double ws2 = static_cast<double>(cfg.window) * static_cast<double>(cfg.window);
  const double ca = C * C / 4.0 * 2.0;  // two excitation FCs on the pooled vector
  const double attn = N * C * 3 * C      // qkv
                      + 2 * N * ws2 * C  // scores and values
                      + N * C * C;       // output projection
  const double lsme = ca + attn + ffn;

  MacsBreakdown out;
  out.stem = N * 3 * C * 9;
  out.sgme = blocks * sgme;
  out.lsme = blocks * lsme;
  out.loe_conv = static_cast<double>(cfg.n_loe) * N * C * C * 9;
  out.tail = N * C * C * 9;
  out.head = N * C * (3 * r * r) * 9;
  return out;
}

double gmacs(const ModelConfig& cfg, int64_t h_out, int64_t w_out) {
  return model_macs(cfg, h_out, w_out).total() / 1e9;
}

// ----- self-ensemble ---------------------------------------------------------

template <typename T>
Tensor<T> self_ensemble(const Tensor<T>& lr, const Model<T>& m) {
  Tensor<T> acc;
  for (int k = 0; k < 8; ++k) {
    Tensor<T> sr = model_apply(ops::dihedral(lr, k), m, RunMode::infer());
    Tensor<T> back = ops::dihedral(sr, ops::dihedral_inverse(k));
    acc = (k == 0) ? std::move(back) : ops::add(acc, back);
  }
  return ops::scale(acc, static_cast<T>(1.0 / 8.0));
}

#define SPMM_INSTANTIATE_MODEL(T)                                                        \
  template Model<T> model_init<T>(const ModelConfig&, uint64_t);                         \
  template BoundModel<T> bind_model<T>(Tape<T>&, const Model<T>&, bool,                  \
                                       const std::map<std::string, Var<T>>*);            \
  template Var<T> model_forward<T>(Var<T>, const BoundModel<T>&, const ModelConfig&,     \
                                   const RunMode&, Rng*, ScanStats*, MoeRunStats*);      \
  template Tensor<T> model_apply<T>(const Tensor<T>&, const Model<T>&, const RunMode&,   \
                                    uint64_t, ScanStats*, MoeRunStats*);                 \
  template int64_t param_count<T>(const Model<T>&);                                      \
  template Tensor<T> self_ensemble<T>(const Tensor<T>&, const Model<T>&);

SPMM_INSTANTIATE_MODEL(float)
SPMM_INSTANTIATE_MODEL(double)

}  // namespace spmm
