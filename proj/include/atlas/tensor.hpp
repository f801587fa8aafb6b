#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "atlas/common.hpp"
#include "atlas/rng.hpp"

namespace atlas {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major tensor. The autodiff graph, the networks and the training
/// loops all run on this one type; T is float for training and double for
/// gradient checks and verification math.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    ATLAS_REQUIRE(int64_t(v.size()) == shape_numel(shape),
                  "tensor data length does not match shape " << shape_str(shape));
  }

  int64_t numel() const { return int64_t(v.size()); }
  int64_t dim(int i) const { return shape[size_t(i)]; }
  int rank() const { return int(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T val) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), val);
    return t;
  }
  static Tensor randn(Shape s, Rng& rng, T scale = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = T(rng.normal()) * scale;
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    ATLAS_REQUIRE(o.numel() == numel(), "tensor += shape mismatch");
    for (int64_t i = 0; i < numel(); ++i) v[size_t(i)] += o.v[size_t(i)];
    return *this;
  }
};

template <class T>
using EigenRowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<EigenRowMat<T>> as_matrix(Tensor<T>& t, int64_t rows, int64_t cols) {
  ATLAS_REQUIRE(rows * cols == t.numel(), "matrix view size mismatch");
  return Eigen::Map<EigenRowMat<T>>(t.data(), rows, cols);
}

template <class T>
Eigen::Map<const EigenRowMat<T>> as_matrix(const Tensor<T>& t, int64_t rows,
                                           int64_t cols) {
  ATLAS_REQUIRE(rows * cols == t.numel(), "matrix view size mismatch");
  return Eigen::Map<const EigenRowMat<T>>(t.data(), rows, cols);
}

}  // namespace atlas
