#pragma once
// Dense row-major tensors over 32- or 64-bit IEEE floats.
//
// The last axis is fastest-moving.  Shapes use int64 extents; an empty shape
// vector denotes a scalar (numel 1).  All library code is templated on the
// scalar type and explicitly instantiated for float and double; `spmm::real`
// is the build-selected default used by the CLI and the end-to-end paths.

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spmm {

#ifdef SPMM_REAL64
using real = double;
#else
using real = float;
#endif

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Row-major strides (in elements, not bytes).
inline Shape shape_strides(const Shape& s) {
  Shape st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), T(0)) {
    check_shape();
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw Error("tensor: data size " + std::to_string(data_.size()) +
                  " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank())
      throw Error("tensor: axis " + std::to_string(i) + " out of range for " + shape_str(shape_));
    return shape_[static_cast<size_t>(i)];
  }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-index access; argument count must equal rank.  Used outside hot
  // loops — kernels index with explicit stride arithmetic instead.
  template <typename... Ix>
  T& at(Ix... ix) {
    return data_[static_cast<size_t>(offset(ix...))];
  }
  template <typename... Ix>
  const T& at(Ix... ix) const {
    return data_[static_cast<size_t>(offset(ix...))];
  }

  template <typename... Ix>
  int64_t offset(Ix... ix) const {
    const int64_t idx[] = {static_cast<int64_t>(ix)...};
    constexpr int n = sizeof...(Ix);
    if (n != rank())
      throw Error("tensor: " + std::to_string(n) + " indices for rank " +
                  std::to_string(rank()) + " tensor " + shape_str(shape_));
    int64_t off = 0;
    for (int i = 0; i < n; ++i) {
      if (idx[i] < 0 || idx[i] >= shape_[static_cast<size_t>(i)])
        throw Error("tensor: index " + std::to_string(idx[i]) + " out of bounds on axis " +
                    std::to_string(i) + " of " + shape_str(shape_));
      off = off * shape_[static_cast<size_t>(i)] + idx[i];
    }
    return off;
  }

  Tensor reshape(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw Error("reshape: cannot view " + shape_str(shape_) + " (" + std::to_string(numel()) +
                  " elements) as " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void check_shape() const {
    for (size_t i = 0; i < shape_.size(); ++i)
      if (shape_[i] <= 0)
        throw Error("tensor: non-positive extent on axis " + std::to_string(i) + " of " +
                    shape_str(shape_));
  }
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

}  // namespace spmm
