#pragma once
// Toy-scale optimization: dual-domain L1 loss, bias-corrected Adam, a step
// learning-rate schedule, crop/flip augmentation, and a deterministic overfit
// harness on a single image pair.

#include "spmm/model.hpp"

namespace spmm {

// mean|sr - hr| + lambda * mean(|Re dF| + |Im dF|), where dF is the
// unnormalised 2-D DFT of the difference over the last two axes (the DFT is
// linear, so transforming the difference equals differencing the transforms).
template <typename T>
Var<T> train_loss(Var<T> sr, Var<T> hr, T lambda_freq);

// Tensor-level convenience for evaluation paths.
template <typename T>
T train_loss_value(const Tensor<T>& sr, const Tensor<T>& hr, T lambda_freq);

// Step schedule: the rate is multiplied by `factor` at each milestone, so
// lr_at(t) = base_lr * factor^(#milestones <= t).  Milestones must be
// strictly increasing.
struct Schedule {
  double base_lr = 2e-4;
  std::vector<int64_t> milestones = {250000, 400000, 450000, 475000};
  double factor = 0.5;
  double lr_at(int64_t step) const;
};

// Adam state: per-parameter moment tensors keyed like the weight map, plus
// the shared step counter.  Moments appear on first touch, shaped like their
// parameters.
template <typename T>
struct OptState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, Tensor<T>> m, v;
};

// One bias-corrected Adam update, in place on `weights`.  Every weight needs
// a same-shaped gradient entry and vice versa; a non-finite gradient raises
// an error naming the parameter.  Zero gradient leaves a parameter bitwise
// unchanged, and the first step moves each coordinate by lr * g/(|g| + eps')
// (magnitude lr up to the epsilon).
template <typename T>
void adam_step(OptState<T>& opt, WeightMap<T>& weights,
               const std::map<std::string, Tensor<T>>& grads);

// Seeded random crop to crop_h x crop_w followed by one of the eight
// dihedral transforms, on a [B,C,H,W] patch.  Draw order: top offset, left
// offset, transform index.
template <typename T>
Tensor<T> augment(const Tensor<T>& patch, int64_t crop_h, int64_t crop_w, Rng& rng);

// Per-step record of the overfit harness.
struct ToyTrace {
  std::vector<double> loss;                       // one entry per completed step
  std::vector<std::vector<int64_t>> expert_usage;  // per step, per expert
  bool aborted = false;                           // non-finite loss encountered
};

// Full train-mode forward/backward/Adam loop on one LR/HR pair (train mode:
// dense expert mixture, straight-through hard routing with Gumbel noise
// re-drawn each step from the run seed).  Deterministic: the same seed gives
// a bitwise-identical trace and final weights.  A non-finite loss stops the
// loop with the trace collected so far and `aborted` set; steps are capped
// at 1000 (this is an overfit probe, not a trainer).
template <typename T>
ToyTrace train_toy(Model<T>& model, const Tensor<T>& lr_img, const Tensor<T>& hr_img,
                   int steps, double lr, uint64_t seed, T lambda_freq = static_cast<T>(0.05));

}  // namespace spmm
