// Optimization pieces.  The dual-domain loss is rebuilt from plain loops and
// a naive DFT, Adam's first-step geometry and bitwise no-op-on-zero-gradient
// guarantees are asserted directly, the augmentation stream is replayed
// against the public RNG draw order, and the overfit harness is checked for
// determinism and clean aborts.

#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/train.hpp"

using namespace spmm;
using spmm_test::bitwise_equal;
using spmm_test::max_abs_diff;
using spmm_test::rand_tensor;

TEST_CASE("train: loss equals a loop-and-naive-DFT oracle") {
  Rng rng(81);
  const auto sr = rand_tensor<double>({1, 2, 3, 4}, rng);
  const auto hr = rand_tensor<double>({1, 2, 3, 4}, rng);
  const double lambda = 0.05;
  const double got = train_loss_value(sr, hr, lambda);

  const int64_t H = 3, W = 4;
  double l1 = 0, freq = 0;
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t u = 0; u < H; ++u)
      for (int64_t v = 0; v < W; ++v) {
        // Pixel-domain term at (u,v) and frequency bin (u,v) for this plane.
        l1 += std::abs(sr.at(int64_t{0}, c, u, v) - hr.at(int64_t{0}, c, u, v));
        double re = 0, im = 0;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x) {
            const double d = sr.at(int64_t{0}, c, y, x) - hr.at(int64_t{0}, c, y, x);
            const double th = 2.0 * M_PI * (double(u * y) / H + double(v * x) / W);
            re += d * std::cos(th);
            im -= d * std::sin(th);
          }
        freq += std::abs(re) + std::abs(im);
      }
  }
  const double want = l1 / double(2 * H * W) + lambda * freq / double(2 * H * W);
  CHECK(got == doctest::Approx(want).epsilon(1e-9));

  // lambda = 0 reduces to the plain mean absolute error.
  CHECK(train_loss_value(sr, hr, 0.0) == doctest::Approx(l1 / 24.0).epsilon(1e-12));
  // Identical images: zero loss.
  CHECK(train_loss_value(sr, sr, lambda) == 0.0);

  // The taped loss agrees with the tensor-level value.
  Tape<double> tape(true);
  const auto lv = train_loss(tape.leaf(sr), tape.leaf(hr), lambda);
  CHECK(lv.value()[0] == doctest::Approx(got).epsilon(1e-12));
}

TEST_CASE("train: schedule halves at each milestone") {
  Schedule s;
  s.base_lr = 2e-4;
  s.milestones = {10, 20};
  s.factor = 0.5;
  CHECK(s.lr_at(0) == 2e-4);
  CHECK(s.lr_at(9) == 2e-4);
  CHECK(s.lr_at(10) == 1e-4);
  CHECK(s.lr_at(19) == 1e-4);
  CHECK(s.lr_at(20) == 5e-5);
  CHECK(s.lr_at(1000000) == 5e-5);

  Schedule bad;
  bad.milestones = {20, 10};
  CHECK_THROWS_AS((void)bad.lr_at(0), Error);

  // Default schedule: four halvings by the end.
  Schedule def;
  CHECK(def.lr_at(500000) == doctest::Approx(2e-4 / 16.0).epsilon(1e-12));
}

TEST_CASE("train: Adam first step, zero-gradient freeze, and error naming") {
  WeightMap<double> w;
  w["a"] = Tensor<double>({2}, {1.0, -2.0});
  w["b"] = Tensor<double>({2}, {0.5, 0.25});
  std::map<std::string, Tensor<double>> g;
  g["a"] = Tensor<double>({2}, {0.3, -4.0});
  g["b"] = Tensor<double>({2}, {0.0, 0.0});
  OptState<double> opt;
  opt.lr = 1e-3;

  const auto w0 = w;
  adam_step(opt, w, g);
  CHECK(opt.t == 1);
  // First step: each coordinate moves by lr * g / (|g| + eps'), i.e. by lr in
  // magnitude (up to epsilon), against the gradient sign.
  CHECK(w["a"][0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(w["a"][1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
  // Zero gradient: bitwise frozen.
  CHECK(bitwise_equal(w["b"], w0.at("b")));

  // Second step with the same gradients keeps moving "a" the same way.
  const double a0 = w["a"][0];
  adam_step(opt, w, g);
  CHECK(w["a"][0] < a0);
  CHECK(opt.t == 2);

  // Missing/extra gradient entries are refused.
  std::map<std::string, Tensor<double>> missing{{"a", g["a"]}};
  CHECK_THROWS_AS(adam_step(opt, w, missing), Error);
  auto shaped = g;
  shaped["a"] = Tensor<double>::ones({3});
  CHECK_THROWS_AS(adam_step(opt, w, shaped), Error);

  // Non-finite gradients name the parameter.
  auto broken = g;
  broken["b"] = Tensor<double>({2}, {std::nan(""), 0.0});
  try {
    adam_step(opt, w, broken);
    FAIL("expected a non-finite gradient error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
}

TEST_CASE("train: augmentation replays the documented draw order") {
  Rng rng(82);
  const auto patch = rand_tensor<double>({1, 3, 9, 7}, rng);

  Rng draw(55);
  const auto got = augment(patch, 4, 5, draw);
  REQUIRE(got.dim(2) == 4);
  REQUIRE(got.dim(3) == 5);

  Rng replay(55);
  const int64_t top = replay.uniform_int(int64_t{9 - 4 + 1});
  const int64_t left = replay.uniform_int(int64_t{7 - 5 + 1});
  const int64_t k = replay.uniform_int(int64_t{8});
  Tensor<double> crop({1, 3, 4, 5});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 5; ++x)
        crop.at(int64_t{0}, c, y, x) = patch.at(int64_t{0}, c, top + y, left + x);
  CHECK(bitwise_equal(got, ops::dihedral(crop, static_cast<int>(k))));

  // Oversized crops are refused.
  CHECK_THROWS_AS((void)augment(patch, 10, 5, rng), Error);
}

TEST_CASE("train: overfit harness is deterministic and reduces the loss") {
  const ModelConfig cfg = ModelConfig::preset("t-mini", 2);
  Rng rng(83);
  // Smooth synthetic pair: HR plus its exact 2x downsample stand-in.
  Tensor<double> hr({1, 3, 16, 16});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 16; ++x)
        hr.at(int64_t{0}, c, y, x) =
            0.5 + 0.4 * std::sin(0.41 * double(y) + 0.23 * double(x) + double(c));
  Tensor<double> lr({1, 3, 8, 8});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 8; ++y)
      for (int64_t x = 0; x < 8; ++x) {
        double acc = 0;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx)
            acc += hr.at(int64_t{0}, c, 2 * y + dy, 2 * x + dx);
        lr.at(int64_t{0}, c, y, x) = acc / 4.0;
      }

  auto m1 = model_init<double>(cfg, 1);
  auto m2 = model_init<double>(cfg, 1);
  const auto tr1 = train_toy(m1, lr, hr, 8, 1e-3, 42);
  const auto tr2 = train_toy(m2, lr, hr, 8, 1e-3, 42);
  REQUIRE(tr1.loss.size() == 8);
  REQUIRE(tr1.expert_usage.size() == 8);
  CHECK(!tr1.aborted);
  CHECK(tr1.loss == tr2.loss);  // bitwise-deterministic trace
  bool weights_equal = true;
  for (const auto& kv : m1.weights)
    weights_equal = weights_equal && bitwise_equal(kv.second, m2.weights.at(kv.first));
  CHECK(weights_equal);
  CHECK(tr1.loss.back() < tr1.loss.front());
  // Dense training touches every expert each step.
  for (const auto& step : tr1.expert_usage) {
    REQUIRE(step.size() == 3);
    for (int64_t e : step) CHECK(e == 1);
  }

  // Zero steps leave the weights untouched.
  auto m3 = model_init<double>(cfg, 1);
  const auto m3_before = m3.weights;
  const auto tr0 = train_toy(m3, lr, hr, 0, 1e-3, 42);
  CHECK(tr0.loss.empty());
  bool untouched = true;
  for (const auto& kv : m3.weights)
    untouched = untouched && bitwise_equal(kv.second, m3_before.at(kv.first));
  CHECK(untouched);

  // A poisoned model aborts cleanly instead of looping on NaNs.
  auto m4 = model_init<double>(cfg, 1);
  m4.weights["stem.w"][0] = std::nan("");
  const auto trn = train_toy(m4, lr, hr, 4, 1e-3, 42);
  CHECK(trn.aborted);
  CHECK(trn.loss.size() <= 1);
}
