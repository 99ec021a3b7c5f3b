#include "spmm/train.hpp"

#include <algorithm>
#include <cmath>

namespace spmm {

// ----- loss ------------------------------------------------------------------

template <typename T>
Var<T> train_loss(Var<T> sr, Var<T> hr, T lambda_freq) {
  if (!sr.value().same_shape(hr.value()))
    throw Error("loss: shape mismatch " + shape_str(sr.value().shape()) + " vs " +
                shape_str(hr.value().shape()));
  if (lambda_freq < T(0)) throw Error("loss: negative frequency weight");
  Var<T> diff = vops::sub(sr, hr);
  Var<T> pixel = vops::mean_all(vops::abs(diff));
  if (lambda_freq == T(0)) return pixel;
  auto [re, im] = vops::dft2(diff);
  Var<T> freq = vops::add(vops::mean_all(vops::abs(re)), vops::mean_all(vops::abs(im)));
  return vops::add(pixel, vops::scale(freq, lambda_freq));
}

template <typename T>
T train_loss_value(const Tensor<T>& sr, const Tensor<T>& hr, T lambda_freq) {
  Tape<T> t(false);
  return train_loss(t.constant(sr), t.constant(hr), lambda_freq).value()[0];
}

// ----- schedule --------------------------------------------------------------

double Schedule::lr_at(int64_t step) const {
  double lr = base_lr;
  int64_t prev = -1;
  for (int64_t m : milestones) {
    if (m <= prev) throw Error("schedule: milestones must be strictly increasing");
    prev = m;
    if (step >= m) lr *= factor;
  }
  return lr;
}

// ----- optimizer -------------------------------------------------------------

template <typename T>
void adam_step(OptState<T>& opt, WeightMap<T>& weights,
               const std::map<std::string, Tensor<T>>& grads) {
  for (const auto& kv : grads)
    if (!weights.count(kv.first))
      throw Error("adam: gradient for unknown parameter '" + kv.first + "'");
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  for (auto& kv : weights) {
    const std::string& name = kv.first;
    Tensor<T>& p = kv.second;
    auto git = grads.find(name);
    if (git == grads.end()) throw Error("adam: missing gradient for parameter '" + name + "'");
    const Tensor<T>& g = git->second;
    if (!g.same_shape(p))
      throw Error("adam: gradient shape " + shape_str(g.shape()) + " does not match parameter '" +
                  name + "' " + shape_str(p.shape()));
    if (!ops::all_finite(g))
      throw Error("adam: non-finite gradient for parameter '" + name + "'");
    Tensor<T>& m = opt.m.try_emplace(name, p.shape()).first->second;
    Tensor<T>& v = opt.v.try_emplace(name, p.shape()).first->second;
    if (!m.same_shape(p) || !v.same_shape(p))
      throw Error("adam: moment shape does not match parameter '" + name + "'");
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = opt.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

// ----- augmentation ----------------------------------------------------------

template <typename T>
Tensor<T> augment(const Tensor<T>& patch, int64_t crop_h, int64_t crop_w, Rng& rng) {
  if (patch.rank() != 4)
    throw Error("augment: expected a [B,C,H,W] patch, got " + shape_str(patch.shape()));
  const int64_t H = patch.dim(2), W = patch.dim(3);
  if (crop_h < 1 || crop_w < 1 || crop_h > H || crop_w > W)
    throw Error("augment: crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                " does not fit in " + std::to_string(H) + "x" + std::to_string(W));
  const auto top = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(H - crop_h + 1)));
  const auto left = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(W - crop_w + 1)));
  const int k = static_cast<int>(rng.uniform_int(8));
  Tensor<T> crop = ops::narrow(ops::narrow(patch, 2, top, crop_h), 3, left, crop_w);
  return ops::dihedral(crop, k);
}

// ----- overfit harness -------------------------------------------------------

template <typename T>
ToyTrace train_toy(Model<T>& model, const Tensor<T>& lr_img, const Tensor<T>& hr_img,
                   int steps, double lr, uint64_t seed, T lambda_freq) {
  if (steps < 0 || steps > 1000)
    throw Error("train_toy: step count " + std::to_string(steps) + " outside [0, 1000]");
  if (lr_img.rank() != 4 || lr_img.dim(0) != 1 || lr_img.dim(1) != 3)
    throw Error("train_toy: expected a [1,3,h,w] input, got " + shape_str(lr_img.shape()));
  const int64_t r = model.cfg.upscale;
  if (hr_img.rank() != 4 || hr_img.dim(0) != 1 || hr_img.dim(1) != 3 ||
      hr_img.dim(2) != lr_img.dim(2) * r || hr_img.dim(3) != lr_img.dim(3) * r)
    throw Error("train_toy: target " + shape_str(hr_img.shape()) + " is not the x" +
                std::to_string(r) + " upscale of " + shape_str(lr_img.shape()));

  ToyTrace trace;
  OptState<T> opt;
  opt.lr = lr;
  Rng run_rng(seed);
  const int64_t n_experts = model.cfg.sgme_cfg().experts();
  for (int step = 0; step < steps; ++step) {
    Tape<T> tape(true);
    BoundModel<T> bm = bind_model(tape, model, true);
    Rng step_rng = run_rng.child(static_cast<uint64_t>(step));
    MoeRunStats stats;
    Var<T> sr = model_forward(tape.constant(lr_img), bm, model.cfg, RunMode::train(), &step_rng,
                              nullptr, &stats);
    Var<T> loss = train_loss(sr, tape.constant(hr_img), lambda_freq);
    const double loss_value = static_cast<double>(loss.value()[0]);
    trace.loss.push_back(loss_value);
    stats.executed.resize(static_cast<size_t>(n_experts), 0);
    trace.expert_usage.push_back(stats.executed);
    if (!std::isfinite(loss_value)) {
      trace.aborted = true;
      return trace;
    }
    tape.backward(loss);
    std::map<std::string, Tensor<T>> grads;
    for (const auto& leaf : bm.leaves) grads.emplace(leaf.first, tape.grad(leaf.second));
    adam_step(opt, model.weights, grads);
  }
  return trace;
}

#define SPMM_INSTANTIATE_TRAIN(T)                                                              \
  template Var<T> train_loss<T>(Var<T>, Var<T>, T);                                            \
  template T train_loss_value<T>(const Tensor<T>&, const Tensor<T>&, T);                       \
  template void adam_step<T>(OptState<T>&, WeightMap<T>&,                                      \
                             const std::map<std::string, Tensor<T>>&);                         \
  template Tensor<T> augment<T>(const Tensor<T>&, int64_t, int64_t, Rng&);                     \
  template ToyTrace train_toy<T>(Model<T>&, const Tensor<T>&, const Tensor<T>&, int, double,   \
                                 uint64_t, T);

SPMM_INSTANTIATE_TRAIN(float)
SPMM_INSTANTIATE_TRAIN(double)

}  // namespace spmm
