#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "gnem/common.hpp"

namespace gnem {

/// Dense row-major tensor. Rank is dynamic but almost every operation in this
/// library works on rank-1/rank-2 views; there is no broadcasting beyond the
/// explicit row-wise primitives in autodiff.hpp.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }

  Tensor(std::vector<size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    GNEM_CHECK(data_.size() == numel_of(shape_), "tensor values/shape mismatch: ",
               data_.size(), " values for shape product ", numel_of(shape_));
  }

  /// 1-D tensor from listed values.
  static Tensor vec(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<size_t> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows/cols of a rank-1 or rank-2 view (rank-1 counts as a single row).
  size_t rows() const { return rank() <= 1 ? (numel() ? 1 : 0) : shape_[0]; }
  size_t cols() const { return rank() <= 1 ? numel() : numel() / shape_[0]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  T operator[](size_t i) const { return data_[i]; }
  T& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  T at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  T* row(size_t r) { return data_.data() + r * cols(); }
  const T* row(size_t r) const { return data_.data() + r * cols(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<size_t> shape) const {
    GNEM_CHECK(numel_of(shape) == numel(), "reshape changes element count: ", numel(),
               " -> ", numel_of(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) v[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(v));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  static size_t numel_of(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<size_t> shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Raw kernels. Matrix products map onto Eigen; everything else is a plain
// loop. All kernels are deterministic single-threaded.
// ---------------------------------------------------------------------------
namespace kernel {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

/// out[m,n] = a[m,k] * b[k,n], accumulate when acc is true.
template <typename T>
void gemm(const T* a, const T* b, T* out, size_t m, size_t k, size_t n, bool acc = false) {
  CMapM<T> A(a, m, k), B(b, k, n);
  MapM<T> O(out, m, n);
  if (acc)
    O.noalias() += A * B;
  else
    O.noalias() = A * B;
}

/// out[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* out, size_t m, size_t k, size_t n, bool acc = false) {
  CMapM<T> A(a, m, k), B(b, n, k);
  MapM<T> O(out, m, n);
  if (acc)
    O.noalias() += A * B.transpose();
  else
    O.noalias() = A * B.transpose();
}

/// out[k,n] = a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* out, size_t m, size_t k, size_t n, bool acc = false) {
  CMapM<T> A(a, m, k), B(b, m, n);
  MapM<T> O(out, k, n);
  if (acc)
    O.noalias() += A.transpose() * B;
  else
    O.noalias() = A.transpose() * B;
}

template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T squared_l2(const T* a, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += a[i] * a[i];
  return s;
}

template <typename T>
T squared_dist(const T* a, const T* b, size_t n) {
  T s = 0;
  for (size_t i = 0; i < n; ++i) {
    T d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Numerically stable softmax of one row in place.
template <typename T>
void softmax_row(T* x, size_t n) {
  T mx = x[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = 0;
  for (size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (size_t i = 0; i < n; ++i) x[i] /= sum;
}

/// log(softmax(x)) for one row, written to out.
template <typename T>
void log_softmax_row(const T* x, T* out, size_t n) {
  T mx = x[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = 0;
  for (size_t i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
  T lse = mx + std::log(sum);
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Exact GELU, x * Phi(x).
template <typename T>
T gelu(T x) {
  return x * T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  T phi = std::exp(-T(0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  T Phi = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  return Phi + x * phi;
}

template <typename T>
void l2_normalize_row(const T* x, T* out, size_t n, T eps = T(1e-12)) {
  T nrm = std::sqrt(squared_l2(x, n));
  T inv = T(1) / std::max(nrm, eps);
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * inv;
}

/// Cosine similarity with zero-vector guard (zero vector has similarity 0).
template <typename T>
double cosine(const T* a, const T* b, size_t n) {
  double num = 0, na = 0, nb = 0;
  for (size_t i = 0; i < n; ++i) {
    num += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na <= 0 || nb <= 0) return 0.0;
  return num / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace kernel
}  // namespace gnem
