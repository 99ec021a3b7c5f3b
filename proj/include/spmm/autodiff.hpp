#pragma once
// Tape-based reverse-mode automatic differentiation.
//
// A Tape owns a flat list of nodes in insertion order; each node stores its
// value, an optional gradient buffer, the ids of its inputs, and a backward
// closure that reads the upstream gradient and accumulates into the inputs'
// buffers.  Var is a cheap (tape pointer, node id) handle.  backward() walks
// the tape once in reverse insertion order, which is a valid topological
// order by construction; gradients from multiple uses of a node sum.
//
// A non-recording tape evaluates values only: ops push value-only nodes with
// no closures and no saved state, so the same block code serves training and
// inference.  Backward closures must not record new nodes — they call the
// plain tensor kernels from ops.hpp.

#include <functional>
#include <vector>

#include "spmm/ops.hpp"
#include "spmm/tensor.hpp"

namespace spmm {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;
  bool defined() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  struct Node;
  using BackFn = std::function<void(Tape&, const Node&)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int32_t> inputs;
    BackFn backward;
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }
  // Records a computed node.  On a non-recording tape, inputs and the
  // backward closure are dropped; on a recording tape the node requires a
  // gradient iff any input does (closures below pure constants are pruned).
  Var<T> record(Tensor<T> value, std::vector<int32_t> inputs, BackFn fn);

  const Tensor<T>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  // Accumulates g into the gradient buffer of node `id` (allocating on first
  // touch).  No-op for nodes that do not require a gradient.
  void accumulate(int32_t id, const Tensor<T>& g);

  // Runs reverse-mode accumulation from a scalar loss.  Errors: non-scalar
  // loss, non-recording tape, or a second call without re-recording.
  void backward(Var<T> loss);
  bool backward_run() const { return backward_run_; }

  // Gradient of a node after backward(); zero tensor if the node was never
  // reached (e.g. an unreachable leaf).
  Tensor<T> grad(Var<T> v) const;

  // Drops every node (values, gradients, and saved closure state).
  void clear();

 private:
  std::vector<Node> nodes_;
  bool recording_;
  bool backward_run_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!defined()) throw Error("Var: use of an undefined variable");
  return tape->value(id);
}

// ----- recorded operations ---------------------------------------------------
// Same contracts as the kernels in ops.hpp, lifted onto the tape.

namespace vops {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> abs(Var<T> a);

template <typename T> Var<T> silu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);

template <typename T> Var<T> sum_all(Var<T> a);
template <typename T> Var<T> mean_all(Var<T> a);
template <typename T> Var<T> spatial_mean(Var<T> x);
template <typename T> Var<T> scale_channels(Var<T> x, Var<T> s);
// y = x * s[0] with a one-element gain tensor; the gain gradient is <g, x>.
template <typename T> Var<T> scale_by(Var<T> x, Var<T> s);
template <typename T> Var<T> reciprocal(Var<T> x);

template <typename T> Var<T> softmax_last(Var<T> x);
template <typename T>
Var<T> layer_norm_chw(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ops::Pad pad = ops::Pad::same, int groups = 1);
template <typename T>
Var<T> conv2d_nobias(Var<T> x, Var<T> w, ops::Pad pad = ops::Pad::same, int groups = 1);
template <typename T> Var<T> avg_pool2d(Var<T> x, int s);
template <typename T> Var<T> upsample_nearest(Var<T> x, int s);
template <typename T> Var<T> pixel_shuffle(Var<T> x, int r);
template <typename T> Var<T> pixel_unshuffle(Var<T> x, int r);

template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> linear_nobias(Var<T> x, Var<T> w);
template <typename T> Var<T> bmm(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose_last(Var<T> x);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> permute(Var<T> x, std::vector<int> axes);
template <typename T> Var<T> roll2d(Var<T> x, int dy, int dx);
template <typename T> Var<T> pad_reflect_br(Var<T> x, int pb, int pr);
template <typename T> Var<T> crop2d(Var<T> x, int64_t h, int64_t w);
template <typename T> Var<T> narrow(Var<T> x, int axis, int64_t start, int64_t len);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);

template <typename T> std::pair<Var<T>, Var<T>> dft2(Var<T> x);

// Identity-gradient estimator: forwards `hard`, backpropagates to `soft`
// unchanged.  `hard` and soft must agree in shape.
template <typename T> Var<T> straight_through(const Tensor<T>& hard, Var<T> soft);

}  // namespace vops

// ----- finite-difference gradient checking -----------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;   // max over checked coordinates
  int64_t worst_coord = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  int64_t coords_checked = 0;
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central differences (f(x+eps*e) - f(x-eps*e)) / (2*eps) per coordinate
// against reverse-mode gradients; relative error uses the denominator
// max(1, |analytic|, |numeric|).  When 0 <= max_coords < numel(x), a seeded
// random subset of coordinates is checked (the full sweep is quadratic in
// model size and the report is a max over checked coordinates either way).
// f must be deterministic per call and produce finite values, else an Error
// is thrown.
template <typename T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f, const Tensor<T>& x,
                           T eps, int64_t max_coords = -1, uint64_t seed = 0);

}  // namespace spmm
