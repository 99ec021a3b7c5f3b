#include "spmm/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "spmm/rng.hpp"

namespace spmm {

// ----- Tape ------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<int32_t> inputs, BackFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    bool rg = false;
    for (int32_t i : inputs) rg = rg || nodes_[static_cast<size_t>(i)].requires_grad;
    if (rg) {
      n.requires_grad = true;
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::accumulate(int32_t id, const Tensor<T>& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  check_same_shape(n.grad, g, "accumulate");
  for (int64_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!recording_) throw Error("backward: tape is not recording");
  if (backward_run_) throw Error("backward: already run on this tape; re-record the graph");
  if (loss.tape != this) throw Error("backward: loss lives on a different tape");
  const Node& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value.numel() != 1)
    throw Error("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
  if (!ln.requires_grad)
    throw Error("backward: loss does not depend on any leaf with requires_grad");
  backward_run_ = true;
  accumulate(loss.id, Tensor<T>::ones(ln.value.shape()));
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, n);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  if (v.tape != this) throw Error("grad: variable lives on a different tape");
  if (!backward_run_) throw Error("grad: backward has not been run");
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!n.has_grad) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::clear() {
  nodes_.clear();
  backward_run_ = false;
}

// ----- op helpers ------------------------------------------------------------

namespace vops {
namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.defined()) throw Error("vops: undefined variable");
  return *a.tape;
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw Error("vops: operands live on different tapes");
}

}  // namespace

// ----- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::add(a.value(), b.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id, b.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate(n.inputs[1], n.grad);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::sub(a.value(), b.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id, b.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate(n.inputs[1], ops::scale(n.grad, T(-1)));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::mul(a.value(), b.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id, b.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::mul(n.grad, t.value(n.inputs[1])));
    t.accumulate(n.inputs[1], ops::mul(n.grad, t.value(n.inputs[0])));
  });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::scale(a.value(), s);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id}, [s](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::scale(n.grad, s));
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::add_scalar(a.value(), s);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], n.grad);
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::abs(a.value());
  if (!t.recording()) return t.constant(std::move(y));
  // Subgradient 0 at the kink.
  return t.record(std::move(y), {a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::mul(n.grad, ops::sign(t.value(n.inputs[0]))));
  });
}

#define SPMM_UNARY_VOP(NAME)                                                                  \
  template <typename T>                                                                       \
  Var<T> NAME(Var<T> a) {                                                                     \
    Tape<T>& t = tape_of(a);                                                                  \
    Tensor<T> y = ops::NAME(a.value());                                                       \
    if (!t.recording()) return t.constant(std::move(y));                                      \
    return t.record(std::move(y), {a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {   \
      t.accumulate(n.inputs[0], ops::NAME##_grad(t.value(n.inputs[0]), n.grad));              \
    });                                                                                       \
  }

SPMM_UNARY_VOP(silu)
SPMM_UNARY_VOP(sigmoid)
SPMM_UNARY_VOP(softplus)
SPMM_UNARY_VOP(relu)
#undef SPMM_UNARY_VOP

// ----- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = tape_of(a);
  Tensor<T> y = Tensor<T>::scalar(ops::sum_all(a.value()));
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], Tensor<T>::full(t.value(n.inputs[0]).shape(), n.grad[0]));
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  Tape<T>& t = tape_of(a);
  Tensor<T> y = Tensor<T>::scalar(ops::mean_all(a.value()));
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const Tensor<T>& x = t.value(n.inputs[0]);
    t.accumulate(n.inputs[0],
                 Tensor<T>::full(x.shape(), n.grad[0] / static_cast<T>(x.numel())));
  });
}

template <typename T>
Var<T> spatial_mean(Var<T> x) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::spatial_mean(x.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::spatial_mean_grad(n.grad, t.value(n.inputs[0]).shape()));
  });
}

template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> s) {
  same_tape(x, s);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::scale_channels(x.value(), s.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, s.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const Tensor<T>& xv = t.value(n.inputs[0]);
    const Tensor<T>& sv = t.value(n.inputs[1]);
    t.accumulate(n.inputs[0], ops::scale_channels(n.grad, sv));
    const int64_t BC = sv.numel(), HW = xv.dim(2) * xv.dim(3);
    Tensor<T> gs(sv.shape());
    for (int64_t bc = 0; bc < BC; ++bc) {
      T acc = T(0);
      for (int64_t i = 0; i < HW; ++i) acc += n.grad[bc * HW + i] * xv[bc * HW + i];
      gs[bc] = acc;
    }
    t.accumulate(n.inputs[1], gs);
  });
}

template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s) {
  same_tape(x, s);
  Tape<T>& t = tape_of(x);
  if (s.value().numel() != 1)
    throw Error("scale_by: gain must hold a single element, got " + shape_str(s.value().shape()));
  Tensor<T> y = ops::scale(x.value(), s.value()[0]);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, s.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const Tensor<T>& xv = t.value(n.inputs[0]);
    const Tensor<T>& sv = t.value(n.inputs[1]);
    t.accumulate(n.inputs[0], ops::scale(n.grad, sv[0]));
    T acc = T(0);
    for (int64_t i = 0; i < xv.numel(); ++i) acc += n.grad[i] * xv[i];
    t.accumulate(n.inputs[1], Tensor<T>::full(sv.shape(), acc));
  });
}

template <typename T>
Var<T> reciprocal(Var<T> x) {
  Tape<T>& t = tape_of(x);
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y[i] = T(1) / xv[i];
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    Tensor<T> gx(n.value.shape());
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = -n.grad[i] * n.value[i] * n.value[i];
    t.accumulate(n.inputs[0], gx);
  });
}

// ----- softmax / layer norm --------------------------------------------------

template <typename T>
Var<T> softmax_last(Var<T> x) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::softmax_last(x.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::softmax_last_backward(n.value, n.grad));
  });
}

template <typename T>
Var<T> layer_norm_chw(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::layer_norm_chw(x.value(), gamma.value(), beta.value(), eps);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, gamma.id, beta.id},
                  [eps](Tape<T>& t, const typename Tape<T>::Node& n) {
                    Tensor<T> gx, gg, gb;
                    ops::layer_norm_chw_backward(t.value(n.inputs[0]), t.value(n.inputs[1]), eps,
                                                 n.grad, gx, gg, gb);
                    t.accumulate(n.inputs[0], gx);
                    t.accumulate(n.inputs[1], gg);
                    t.accumulate(n.inputs[2], gb);
                  });
}

// ----- convolution / resampling ----------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ops::Pad pad, int groups) {
  same_tape(x, w);
  same_tape(x, b);
  Tape<T>& t = tape_of(x);
  const Tensor<T>& bv = b.value();
  Tensor<T> y = ops::conv2d(x.value(), w.value(), &bv, pad, groups);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, w.id, b.id},
                  [pad, groups](Tape<T>& t, const typename Tape<T>::Node& n) {
                    const Tensor<T>& xv = t.value(n.inputs[0]);
                    const Tensor<T>& wv = t.value(n.inputs[1]);
                    t.accumulate(n.inputs[0],
                                 ops::conv2d_grad_input(n.grad, wv, xv.shape(), pad, groups));
                    t.accumulate(n.inputs[1],
                                 ops::conv2d_grad_weight(n.grad, xv, wv.shape(), pad, groups));
                    t.accumulate(n.inputs[2], ops::conv2d_grad_bias(n.grad));
                  });
}

template <typename T>
Var<T> conv2d_nobias(Var<T> x, Var<T> w, ops::Pad pad, int groups) {
  same_tape(x, w);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::conv2d<T>(x.value(), w.value(), nullptr, pad, groups);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, w.id},
                  [pad, groups](Tape<T>& t, const typename Tape<T>::Node& n) {
                    const Tensor<T>& xv = t.value(n.inputs[0]);
                    const Tensor<T>& wv = t.value(n.inputs[1]);
                    t.accumulate(n.inputs[0],
                                 ops::conv2d_grad_input(n.grad, wv, xv.shape(), pad, groups));
                    t.accumulate(n.inputs[1],
                                 ops::conv2d_grad_weight(n.grad, xv, wv.shape(), pad, groups));
                  });
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, int s) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::avg_pool2d(x.value(), s);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [s](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::avg_pool2d_grad(n.grad, s));
  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, int s) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::upsample_nearest(x.value(), s);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [s](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::upsample_nearest_grad(n.grad, s));
  });
}

template <typename T>
Var<T> pixel_shuffle(Var<T> x, int r) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::pixel_shuffle(x.value(), r);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [r](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::pixel_unshuffle(n.grad, r));
  });
}

template <typename T>
Var<T> pixel_unshuffle(Var<T> x, int r) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::pixel_unshuffle(x.value(), r);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [r](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::pixel_shuffle(n.grad, r));
  });
}

// ----- linear / matmul -------------------------------------------------------

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  same_tape(x, w);
  same_tape(x, b);
  Tape<T>& t = tape_of(x);
  const Tensor<T>& bv = b.value();
  Tensor<T> y = ops::linear(x.value(), w.value(), &bv);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, w.id, b.id},
                  [](Tape<T>& t, const typename Tape<T>::Node& n) {
                    const Tensor<T>& xv = t.value(n.inputs[0]);
                    const Tensor<T>& wv = t.value(n.inputs[1]);
                    t.accumulate(n.inputs[0], ops::linear_grad_input(n.grad, wv, xv.shape()));
                    t.accumulate(n.inputs[1], ops::linear_grad_weight(n.grad, xv, wv.shape()));
                    t.accumulate(n.inputs[2], ops::linear_grad_bias(n.grad));
                  });
}

template <typename T>
Var<T> linear_nobias(Var<T> x, Var<T> w) {
  same_tape(x, w);
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::linear<T>(x.value(), w.value(), nullptr);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id, w.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const Tensor<T>& xv = t.value(n.inputs[0]);
    const Tensor<T>& wv = t.value(n.inputs[1]);
    t.accumulate(n.inputs[0], ops::linear_grad_input(n.grad, wv, xv.shape()));
    t.accumulate(n.inputs[1], ops::linear_grad_weight(n.grad, xv, wv.shape()));
  });
}

template <typename T>
Var<T> bmm(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& t = tape_of(a);
  Tensor<T> y = ops::bmm(a.value(), b.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {a.id, b.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    const Tensor<T>& av = t.value(n.inputs[0]);
    const Tensor<T>& bv = t.value(n.inputs[1]);
    t.accumulate(n.inputs[0], ops::bmm(n.grad, ops::transpose_last(bv)));
    t.accumulate(n.inputs[1], ops::bmm(ops::transpose_last(av), n.grad));
  });
}

template <typename T>
Var<T> transpose_last(Var<T> x) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::transpose_last(x.value());
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::transpose_last(n.grad));
  });
}

// ----- index remapping -------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = x.value().reshape(shape);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], n.grad.reshape(t.value(n.inputs[0]).shape()));
  });
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> axes) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::permute(x.value(), axes);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id},
                  [axes](Tape<T>& t, const typename Tape<T>::Node& n) {
                    t.accumulate(n.inputs[0],
                                 ops::permute(n.grad, ops::inverse_permutation(axes)));
                  });
}

template <typename T>
Var<T> roll2d(Var<T> x, int dy, int dx) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::roll2d(x.value(), dy, dx);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [dy, dx](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::roll2d(n.grad, -dy, -dx));
  });
}

template <typename T>
Var<T> pad_reflect_br(Var<T> x, int pb, int pr) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::pad_reflect_br(x.value(), pb, pr);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::pad_reflect_br_grad(n.grad, t.value(n.inputs[0]).shape()));
  });
}

template <typename T>
Var<T> crop2d(Var<T> x, int64_t h, int64_t w) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::crop2d(x.value(), h, w);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::crop2d_grad(n.grad, t.value(n.inputs[0]).shape()));
  });
}

template <typename T>
Var<T> narrow(Var<T> x, int axis, int64_t start, int64_t len) {
  Tape<T>& t = tape_of(x);
  Tensor<T> y = ops::narrow(x.value(), axis, start, len);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {x.id},
                  [axis, start](Tape<T>& t, const typename Tape<T>::Node& n) {
                    t.accumulate(n.inputs[0],
                                 ops::narrow_grad(n.grad, t.value(n.inputs[0]).shape(), axis,
                                                  start));
                  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  Tape<T>& t = tape_of(xs[0]);
  std::vector<const Tensor<T>*> vals;
  std::vector<int32_t> ids;
  for (Var<T> v : xs) {
    same_tape(xs[0], v);
    vals.push_back(&v.value());
    ids.push_back(v.id);
  }
  int ax = axis < 0 ? axis + xs[0].value().rank() : axis;
  Tensor<T> y = ops::concat(vals, ax);
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), std::move(ids),
                  [ax](Tape<T>& t, const typename Tape<T>::Node& n) {
                    int64_t off = 0;
                    for (int32_t id : n.inputs) {
                      const int64_t d = t.value(id).dim(ax);
                      t.accumulate(id, ops::narrow(n.grad, ax, off, d));
                      off += d;
                    }
                  });
}

// ----- DFT -------------------------------------------------------------------

template <typename T>
std::pair<Var<T>, Var<T>> dft2(Var<T> x) {
  Tape<T>& t = tape_of(x);
  Tensor<T> re, im;
  ops::dft2(x.value(), re, im);
  if (!t.recording()) return {t.constant(std::move(re)), t.constant(std::move(im))};
  // Two nodes share the forward; each routes its own half of the adjoint.
  Var<T> vre = t.record(std::move(re), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::dft2_adjoint(n.grad, Tensor<T>(n.grad.shape())));
  });
  Var<T> vim = t.record(std::move(im), {x.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], ops::dft2_adjoint(Tensor<T>(n.grad.shape()), n.grad));
  });
  return {vre, vim};
}

// ----- straight-through ------------------------------------------------------

template <typename T>
Var<T> straight_through(const Tensor<T>& hard, Var<T> soft) {
  Tape<T>& t = tape_of(soft);
  check_same_shape(hard, soft.value(), "straight_through");
  Tensor<T> y = hard;
  if (!t.recording()) return t.constant(std::move(y));
  return t.record(std::move(y), {soft.id}, [](Tape<T>& t, const typename Tape<T>::Node& n) {
    t.accumulate(n.inputs[0], n.grad);
  });
}

// ----- explicit instantiation ------------------------------------------------

#define SPMM_INSTANTIATE_VOPS(T)                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> neg(Var<T>);                                                          \
  template Var<T> scale(Var<T>, T);                                                     \
  template Var<T> add_scalar(Var<T>, T);                                                \
  template Var<T> abs(Var<T>);                                                          \
  template Var<T> silu(Var<T>);                                                         \
  template Var<T> sigmoid(Var<T>);                                                      \
  template Var<T> softplus(Var<T>);                                                     \
  template Var<T> relu(Var<T>);                                                         \
  template Var<T> sum_all(Var<T>);                                                      \
  template Var<T> mean_all(Var<T>);                                                     \
  template Var<T> spatial_mean(Var<T>);                                                 \
  template Var<T> scale_channels(Var<T>, Var<T>);                                       \
  template Var<T> scale_by(Var<T>, Var<T>);                                             \
  template Var<T> reciprocal(Var<T>);                                                   \
  template Var<T> softmax_last(Var<T>);                                                 \
  template Var<T> layer_norm_chw(Var<T>, Var<T>, Var<T>, T);                            \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ops::Pad, int);                        \
  template Var<T> conv2d_nobias(Var<T>, Var<T>, ops::Pad, int);                         \
  template Var<T> avg_pool2d(Var<T>, int);                                              \
  template Var<T> upsample_nearest(Var<T>, int);                                        \
  template Var<T> pixel_shuffle(Var<T>, int);                                           \
  template Var<T> pixel_unshuffle(Var<T>, int);                                         \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                       \
  template Var<T> linear_nobias(Var<T>, Var<T>);                                        \
  template Var<T> bmm(Var<T>, Var<T>);                                                  \
  template Var<T> transpose_last(Var<T>);                                               \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> permute(Var<T>, std::vector<int>);                                    \
  template Var<T> roll2d(Var<T>, int, int);                                             \
  template Var<T> pad_reflect_br(Var<T>, int, int);                                     \
  template Var<T> crop2d(Var<T>, int64_t, int64_t);                                     \
  template Var<T> narrow(Var<T>, int, int64_t, int64_t);                                \
  template Var<T> concat(const std::vector<Var<T>>&, int);                              \
  template std::pair<Var<T>, Var<T>> dft2(Var<T>);                                      \
  template Var<T> straight_through(const Tensor<T>&, Var<T>);

SPMM_INSTANTIATE_VOPS(float)
SPMM_INSTANTIATE_VOPS(double)
#undef SPMM_INSTANTIATE_VOPS

}  // namespace vops

// ----- grad_check ------------------------------------------------------------

template <typename T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f, const Tensor<T>& x,
                           T eps, int64_t max_coords, uint64_t seed) {
  // Reverse-mode pass.
  Tape<T> tape(true);
  Var<T> vx = tape.leaf(x, true);
  Var<T> loss = f(tape, vx);
  if (loss.value().numel() != 1)
    throw Error("grad_check: f must return a scalar, got " + shape_str(loss.value().shape()));
  if (!std::isfinite(static_cast<double>(loss.value()[0])))
    throw Error("grad_check: f produced a non-finite value");
  tape.backward(loss);
  Tensor<T> analytic = tape.grad(vx);
  tape.clear();

  // Coordinate subset.
  const int64_t n = x.numel();
  std::vector<int64_t> coords;
  if (max_coords < 0 || max_coords >= n) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(seed ^ 0x9d2c5680u);
    std::vector<int64_t> all(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < max_coords; ++i) {
      const int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - i)));
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
      coords.push_back(all[static_cast<size_t>(i)]);
    }
  }

  auto eval = [&](const Tensor<T>& xp) -> double {
    Tape<T> t(false);
    Var<T> v = t.leaf(xp, false);
    Var<T> out = f(t, v);
    const double val = static_cast<double>(out.value()[0]);
    if (!std::isfinite(val)) throw Error("grad_check: f produced a non-finite value");
    return val;
  };

  GradCheckReport rep;
  Tensor<T> xp = x;
  for (int64_t c : coords) {
    const T saved = xp[c];
    xp[c] = saved + eps;
    const double fp = eval(xp);
    xp[c] = saved - eps;
    const double fm = eval(xp);
    xp[c] = saved;
    const double num = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double ana = static_cast<double>(analytic[c]);
    const double denom = std::max(1.0, std::max(std::fabs(ana), std::fabs(num)));
    const double rel = std::fabs(ana - num) / denom;
    ++rep.coords_checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = c;
      rep.analytic_at_worst = ana;
      rep.numeric_at_worst = num;
    }
  }
  return rep;
}

// ----- explicit instantiation ------------------------------------------------

template class Tape<float>;
template class Tape<double>;
template struct Var<float>;
template struct Var<double>;
template GradCheckReport grad_check(const std::function<Var<float>(Tape<float>&, Var<float>)>&,
                                    const Tensor<float>&, float, int64_t, uint64_t);
template GradCheckReport grad_check(const std::function<Var<double>(Tape<double>&, Var<double>)>&,
                                    const Tensor<double>&, double, int64_t, uint64_t);

}  // namespace spmm
