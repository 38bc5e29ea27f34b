#include "metapi/ops.hpp"

namespace metapi {

namespace {

void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(std::string(what) + " must be rank 2, got " + shape_string(s));
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a.shape(), "matmul lhs");
  require_rank2(b.shape(), "matmul rhs");
  if (a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor<T> c({a.shape()[0], b.shape()[1]});
  c.mat().noalias() = a.mat() * b.mat();
  check_finite(c, "matmul");
  return c;
}

template <class T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc, Tensor<T>* da,
                     Tensor<T>* db) {
  if (dc.shape() != Shape{a.shape()[0], b.shape()[1]}) {
    throw DimensionError("matmul_backward: upstream gradient has shape " + shape_string(dc.shape()));
  }
  if (da) da->mat().noalias() += dc.mat() * b.mat().transpose();
  if (db) db->mat().noalias() += a.mat().transpose() * dc.mat();
}

template <class T>
Tensor<T> elementwise(Pointwise op, const Tensor<T>& x, const Tensor<T>* y) {
  Tensor<T> out(x.shape());
  auto xo = x.mat().array();
  auto o = out.mat().array();
  switch (op) {
    case Pointwise::tanh:
      o = xo.tanh();
      break;
    case Pointwise::sigmoid:
      o = T(1) / (T(1) + (-xo).exp());
      break;
    case Pointwise::add:
    case Pointwise::mul:
    case Pointwise::max: {
      if (!y) throw DimensionError("binary elementwise op needs two inputs");
      require_same(x, *y, "elementwise");
      auto yo = y->mat().array();
      if (op == Pointwise::add) o = xo + yo;
      if (op == Pointwise::mul) o = xo * yo;
      if (op == Pointwise::max) o = xo.max(yo);
      break;
    }
  }
  check_finite(out, "elementwise");
  return out;
}

template <class T>
void elementwise_backward(Pointwise op, const Tensor<T>& x, const Tensor<T>* y,
                          const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>* dx,
                          Tensor<T>* dy) {
  require_same(out, dout, "elementwise_backward");
  auto g = dout.mat().array();
  switch (op) {
    case Pointwise::tanh:
      if (dx) dx->mat().array() += g * (T(1) - out.mat().array().square());
      break;
    case Pointwise::sigmoid:
      if (dx) dx->mat().array() += g * out.mat().array() * (T(1) - out.mat().array());
      break;
    case Pointwise::add:
      if (dx) dx->mat().array() += g;
      if (dy) dy->mat().array() += g;
      break;
    case Pointwise::mul:
      if (dx) dx->mat().array() += g * y->mat().array();
      if (dy) dy->mat().array() += g * x.mat().array();
      break;
    case Pointwise::max: {
      auto first = (x.mat().array() >= y->mat().array()).template cast<T>();
      if (dx) dx->mat().array() += g * first;
      if (dy) dy->mat().array() += g * (T(1) - first);
      break;
    }
  }
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank2(x.shape(), "softmax_rows input");
  check_finite(x, "softmax_rows input");
  Tensor<T> out(x.shape());
  auto in = x.mat();
  auto o = out.mat();
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    o.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp();
    o.row(r) /= o.row(r).sum();
  }
  return out;
}

template <class T>
Mat<T> log_softmax_backward(const Mat<T>& log_probs, const Mat<T>& dy) {
  Mat<T> dz = dy;
  for (Eigen::Index r = 0; r < dz.rows(); ++r) {
    const T s = dy.row(r).sum();
    dz.row(r).array() -= log_probs.row(r).array().exp() * s;
  }
  return dz;
}

#define METAPI_INSTANTIATE(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template void matmul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                Tensor<T>*, Tensor<T>*);                                      \
  template Tensor<T> elementwise(Pointwise, const Tensor<T>&, const Tensor<T>*);              \
  template void elementwise_backward(Pointwise, const Tensor<T>&, const Tensor<T>*,           \
                                     const Tensor<T>&, const Tensor<T>&, Tensor<T>*,          \
                                     Tensor<T>*);                                             \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template Mat<T> log_softmax_backward(const Mat<T>&, const Mat<T>&);

METAPI_INSTANTIATE(float)
METAPI_INSTANTIATE(double)

#undef METAPI_INSTANTIATE

}  // namespace metapi
