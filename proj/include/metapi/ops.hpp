#pragma once

#include <cmath>

#include "metapi/tensor.hpp"

namespace metapi {

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// c = a * b for rank-2 tensors.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Accumulates da += dc * b^T and db += a^T * dc. Either output may be null.
template <class T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc, Tensor<T>* da,
                     Tensor<T>* db);

enum class Pointwise { add, mul, tanh, sigmoid, max };

// Unary ops (tanh, sigmoid) ignore y.
template <class T>
Tensor<T> elementwise(Pointwise op, const Tensor<T>& x, const Tensor<T>* y = nullptr);

// Chain rule for elementwise(op, x, y) == out. Accumulates into dx / dy.
// For max the gradient goes to the larger operand, x on ties.
template <class T>
void elementwise_backward(Pointwise op, const Tensor<T>& x, const Tensor<T>* y,
                          const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>* dx,
                          Tensor<T>* dy);

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <class Derived>
auto log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using T = typename Derived::Scalar;
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    const T lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

// Given y = log_softmax(z) and dy, returns dz = dy - softmax(z) * rowsum(dy).
template <class T>
Mat<T> log_softmax_backward(const Mat<T>& log_probs, const Mat<T>& dy);

inline double log_add_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace metapi
