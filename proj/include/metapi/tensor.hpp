#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "metapi/error.hpp"

namespace metapi {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array. Rank-2 and higher tensors view as a matrix whose
// column count is the last extent; rank-1 tensors view as a single row.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("tensor extent must be positive: " + shape_string(shape_));
    }
    data_.assign(numel_of(shape_), fill);
  }
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != numel_of(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor from_matrix(const Mat<T>& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.mat() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.size() <= 1 ? 1 : numel() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  MatMap<T> mat() { return MatMap<T>(data_.data(), rows(), cols()); }
  ConstMatMap<T> mat() const { return ConstMatMap<T>(data_.data(), rows(), cols()); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  Shape shape_;
  Storage data_;
};

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <class Derived>
void check_finite(const Eigen::DenseBase<Derived>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite value in " + where);
}

template <class T>
void check_finite(const Tensor<T>& t, const std::string& where) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + where);
}

}  // namespace metapi
