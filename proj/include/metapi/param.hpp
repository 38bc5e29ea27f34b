#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "metapi/rng.hpp"
#include "metapi/tensor.hpp"

namespace metapi {

// A trainable tensor paired with its accumulated gradient.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn from the substream named
  // after this parameter.
  void init_uniform(const Rng& root, std::size_t fan_in) {
    Rng rng = root.substream(name);
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : value.storage()) v = static_cast<T>(rng.uniform(-r, r));
  }
};

// Non-owning view over the parameters of a model, in a fixed order.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(Param<T>& p) { params_.push_back(&p); }
  void add(const ParameterSet& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
  }

  std::size_t size() const { return params_.size(); }
  std::size_t coordinates() const {
    std::size_t n = 0;
    for (auto* p : params_) n += p->value.numel();
    return n;
  }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Param<T>* find(const std::string& name) {
    for (auto* p : params_) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.set_zero();
  }

  double grad_norm() const {
    double s = 0;
    for (auto* p : params_) s += p->grad.mat().template cast<double>().squaredNorm();
    return std::sqrt(s);
  }

  void scale_grad(T factor) {
    for (auto* p : params_) p->grad.mat() *= factor;
  }

 private:
  std::vector<Param<T>*> params_;
};

struct GradCheckReport {
  bool passed = true;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  double worst_error = 0;

  std::string describe() const;
};

// Compares analytic gradients against central differences on every
// coordinate. f(true) accumulates analytic gradients into the (zeroed)
// parameter grads and returns the loss; f(false) only returns the loss. The
// error measure is |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check(ParameterSet<double>& params, const std::function<double(bool)>& f,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace metapi
