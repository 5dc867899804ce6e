#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "scpl/tensor.hpp"

namespace scpl {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T h) {
  if (!(h > T{0})) throw Error("finite_diff_grad: step must be positive");
  Tensor<T> grad(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    x[i] = orig + h;
    const T fp = f(x);
    x[i] = orig - h;
    const T fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (T{2} * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b, T floor = T(1e-6)) {
  if (a.shape != b.shape) throw ShapeError("max_relative_error shape mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace scpl
