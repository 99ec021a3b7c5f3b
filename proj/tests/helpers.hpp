#pragma once
// Shared helpers for the unit tests: seeded random tensors and elementwise
// comparison utilities.

#include <algorithm>
#include <cmath>

#include "spmm/rng.hpp"
#include "spmm/tensor.hpp"

namespace spmm_test {

template <typename T>
spmm::Tensor<T> rand_tensor(spmm::Shape shape, spmm::Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  spmm::Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const spmm::Tensor<T>& a, const spmm::Tensor<T>& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const spmm::Tensor<T>& a, const spmm::Tensor<T>& b) {
  return a.same_shape(b) && a.vec() == b.vec();
}

}  // namespace spmm_test
