#pragma once

#include <vector>

#include "metapi/param.hpp"

namespace metapi {

// SGD with Nesterov momentum in the Sutskever form:
//   v <- mu * v - lr * g
//   w <- w + mu * v - lr * g
template <class T>
class NesterovSgd {
 public:
  NesterovSgd(ParameterSet<T> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (auto* p : params_) velocity_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
  }

  void step() {
    const T lr = static_cast<T>(lr_);
    const T mu = static_cast<T>(momentum_);
    if (lr_ == 0.0) return;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i].grad.mat();
      auto& v = velocity_[i];
      v = mu * v - lr * g;
      params_[i].value.mat() += mu * v - lr * g;
      check_finite(params_[i].value, "parameter " + params_[i].name + " after update");
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  ParameterSet<T>& params() { return params_; }

 private:
  ParameterSet<T> params_;
  double lr_;
  double momentum_;
  std::vector<Mat<T>> velocity_;
};

// Rescales gradients so their global L2 norm is at most max_norm (<= 0
// disables). Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  const double norm = params.grad_norm();
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0 && norm > max_norm) params.scale_grad(static_cast<T>(max_norm / norm));
  return norm;
}

}  // namespace metapi
