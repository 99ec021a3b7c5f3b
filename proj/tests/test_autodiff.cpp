// Tape mechanics and recorded-op semantics.  Finite-difference coverage of
// every primitive lives in the shared gradient-check suite (exercised from
// test_model.cpp and the acceptance run); here the focus is the tape's
// contracts and hand-derivable gradients.

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "spmm/autodiff.hpp"

using namespace spmm;
using spmm_test::bitwise_equal;
using spmm_test::max_abs_diff;
using spmm_test::rand_tensor;

TEST_CASE("tape: recording, values, and backward contracts") {
  Tape<double> t(true);
  CHECK(t.recording());
  Var<double> x = t.leaf(Tensor<double>({2}, {3.0, -1.0}), true);
  Var<double> y = vops::mul(x, x);
  Var<double> loss = vops::sum_all(y);
  CHECK(loss.value().numel() == 1);
  CHECK(loss.value()[0] == doctest::Approx(10.0));

  CHECK_THROWS_AS(t.grad(x), Error);  // no backward yet
  CHECK_THROWS_AS(t.backward(y), Error);  // loss must be scalar
  t.backward(loss);
  const Tensor<double> gx = t.grad(x);
  CHECK(gx[0] == doctest::Approx(6.0));  // d/dx sum(x^2) = 2x
  CHECK(gx[1] == doctest::Approx(-2.0));
  CHECK_THROWS_AS(t.backward(loss), Error);  // second backward without re-record

  // Leaves never touched by the loss read back as zero gradients.
  Tape<double> t2(true);
  Var<double> a = t2.leaf(Tensor<double>::ones({3}), true);
  Var<double> b = t2.leaf(Tensor<double>::ones({3}), true);
  t2.backward(vops::sum_all(a));
  CHECK(ops::max_abs(t2.grad(b)) == 0.0);
  CHECK(t2.grad(b).same_shape(b.value()));
}

TEST_CASE("tape: gradients from multiple uses accumulate") {
  Tape<double> t(true);
  Var<double> x = t.leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  Var<double> y = vops::add(x, x);          // dy/dx = 2
  Var<double> z = vops::add(y, x);          // dz/dx = 3
  t.backward(vops::sum_all(z));
  CHECK(t.grad(x)[0] == doctest::Approx(3.0));
  CHECK(t.grad(x)[1] == doctest::Approx(3.0));
}

TEST_CASE("tape: non-recording mode computes identical values without grads") {
  Rng rng(1);
  const auto xin = rand_tensor<double>({1, 3, 4, 4}, rng);
  const auto w = rand_tensor<double>({3, 3, 3, 3}, rng);
  const auto b = rand_tensor<double>({3}, rng);

  auto run = [&](bool recording) {
    Tape<double> t(recording);
    Var<double> y = vops::conv2d(t.leaf(xin, recording), t.leaf(w, recording),
                                 t.leaf(b, recording));
    return vops::silu(y).value();
  };
  CHECK(bitwise_equal(run(true), run(false)));

  Tape<double> t(false);
  Var<double> s = vops::sum_all(t.leaf(xin, true));
  CHECK_THROWS_AS(t.backward(s), Error);  // backward needs a recording tape
}

TEST_CASE("tape: constants prune gradient plumbing but leaves keep it") {
  Tape<double> t(true);
  Var<double> c = t.constant(Tensor<double>::ones({2}));
  Var<double> x = t.leaf(Tensor<double>::ones({2}), true);
  Var<double> y = vops::mul(c, x);
  t.backward(vops::sum_all(y));
  CHECK(t.grad(x)[0] == doctest::Approx(1.0));
  CHECK(ops::max_abs(t.grad(c)) == 0.0);  // constant: no gradient ever
}

TEST_CASE("vops: hand-checked derivative chains") {
  // d/dx mean(silu(2x)) at a few points, against the analytic derivative.
  Tape<double> t(true);
  const Tensor<double> xv({3}, {-1.5, 0.25, 2.0});
  Var<double> x = t.leaf(xv, true);
  t.backward(vops::mean_all(vops::silu(vops::scale(x, 2.0))));
  const Tensor<double> g = t.grad(x);
  for (int64_t i = 0; i < 3; ++i) {
    const double u = 2.0 * xv[i];
    const double s = 1.0 / (1.0 + std::exp(-u));
    const double dsilu = s + u * s * (1.0 - s);
    CHECK(g[i] == doctest::Approx(2.0 * dsilu / 3.0).epsilon(1e-12));
  }

  // reciprocal: d/dx (1/x) = -1/x^2.
  Tape<double> t2(true);
  Var<double> z = t2.leaf(Tensor<double>({2}, {2.0, -4.0}), true);
  t2.backward(vops::sum_all(vops::reciprocal(z)));
  CHECK(t2.grad(z)[0] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(t2.grad(z)[1] == doctest::Approx(-1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("vops: scale_by routes the gain gradient through <g, x>") {
  Tape<double> t(true);
  const Tensor<double> xv({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Var<double> x = t.leaf(xv, true);
  Var<double> s = t.leaf(Tensor<double>({1}, {0.5}), true);
  Var<double> y = vops::scale_by(x, s);
  CHECK(y.value()[3] == doctest::Approx(2.0));
  t.backward(vops::sum_all(y));
  CHECK(t.grad(s)[0] == doctest::Approx(1.0 + 2.0 + 3.0 + 4.0));  // <1, x>
  CHECK(t.grad(x)[2] == doctest::Approx(0.5));
}

TEST_CASE("vops: straight_through forwards hard and backprops soft") {
  Tape<double> t(true);
  const Tensor<double> soft_v({3}, {0.2, 0.5, 0.3});
  const Tensor<double> hard_v({3}, {0.0, 1.0, 0.0});
  Var<double> soft = t.leaf(soft_v, true);
  Var<double> out = vops::straight_through(hard_v, soft);
  CHECK(bitwise_equal(out.value(), hard_v));  // forward: the hard tensor

  Var<double> wsum = vops::sum_all(vops::mul(out, t.constant(Tensor<double>({3}, {1.0, 2.0, 3.0}))));
  t.backward(wsum);
  const Tensor<double> g = t.grad(soft);  // gradient as if out == soft (identity)
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(2.0));
  CHECK(g[2] == doctest::Approx(3.0));

  Tape<double> t2(true);
  Var<double> s2 = t2.leaf(soft_v, true);
  CHECK_THROWS_AS(vops::straight_through(Tensor<double>::ones({2}), s2), Error);
}

TEST_CASE("vops: shape-moving ops route gradients to the right slots") {
  Rng rng(3);
  const auto xv = rand_tensor<double>({1, 2, 3, 4}, rng);

  // narrow: only the selected slice receives gradient.
  Tape<double> t(true);
  Var<double> x = t.leaf(xv, true);
  t.backward(vops::sum_all(vops::narrow(x, 3, 1, 2)));
  const Tensor<double> g = t.grad(x);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t xx = 0; xx < 4; ++xx)
        CHECK(g.at(0, c, y, xx) == ((xx == 1 || xx == 2) ? 1.0 : 0.0));

  // concat splits the upstream gradient back to its pieces.
  Tape<double> t2(true);
  Var<double> a = t2.leaf(Tensor<double>::ones({1, 1, 2, 2}), true);
  Var<double> b = t2.leaf(Tensor<double>::ones({1, 3, 2, 2}), true);
  Var<double> cat = vops::concat<double>({a, b}, 1);
  REQUIRE(cat.shape() == Shape{1, 4, 2, 2});
  t2.backward(vops::sum_all(vops::scale(cat, 2.0)));
  CHECK(ops::max_abs(ops::add_scalar(t2.grad(a), -2.0)) == 0.0);
  CHECK(ops::max_abs(ops::add_scalar(t2.grad(b), -2.0)) == 0.0);

  // permute/reshape/roll are pure relabelings: gradient of sum is all ones.
  Tape<double> t3(true);
  Var<double> p = t3.leaf(xv, true);
  Var<double> moved = vops::roll2d(vops::reshape(vops::permute(p, {0, 2, 1, 3}), {1, 2, 3, 4}),
                                   1, 1);
  t3.backward(vops::sum_all(moved));
  CHECK(ops::max_abs(ops::add_scalar(t3.grad(p), -1.0)) == 0.0);
}

TEST_CASE("vops: softmax gradient is orthogonal to the ones vector") {
  // Rows of the softmax Jacobian sum to zero, so for any upstream gradient
  // the input gradient of each row sums to ~0.
  Rng rng(4);
  Tape<double> t(true);
  Var<double> x = t.leaf(rand_tensor<double>({5, 6}, rng, -3.0, 3.0), true);
  Var<double> y = vops::softmax_last(x);
  Var<double> w = t.constant(rand_tensor<double>({5, 6}, rng));
  t.backward(vops::sum_all(vops::mul(y, w)));
  const Tensor<double> g = t.grad(x);
  for (int64_t r = 0; r < 5; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 6; ++c) s += g.at(r, c);
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("grad_check: API behaviour") {
  // A correct scalar function passes with tiny error.
  auto f = [](Tape<double>& t, Var<double> x) {
    return vops::mean_all(vops::silu(x));
    (void)t;
  };
  Rng rng(5);
  const auto x = rand_tensor<double>({3, 3}, rng);
  const GradCheckReport rep = grad_check<double>(f, x, 1e-5);
  CHECK(rep.ok(1e-6));
  CHECK(rep.coords_checked == 9);

  // Coordinate subsetting touches exactly max_coords coordinates.
  const GradCheckReport sub = grad_check<double>(f, x, 1e-5, 4, 77);
  CHECK(sub.coords_checked == 4);

  // Non-scalar outputs are rejected.
  auto fbad = [](Tape<double>& t, Var<double> x) {
    (void)t;
    return x;
  };
  CHECK_THROWS_AS(grad_check<double>(fbad, x, 1e-5), Error);
}

TEST_CASE("tape: clear releases nodes for reuse") {
  Tape<double> t(true);
  Var<double> x = t.leaf(Tensor<double>::ones({4}), true);
  t.backward(vops::sum_all(x));
  t.clear();
  CHECK(t.size() == 0);
  Var<double> y = t.leaf(Tensor<double>::full({2}, 3.0), true);
  t.backward(vops::mean_all(y));
  CHECK(t.grad(y)[0] == doctest::Approx(0.5));
}
