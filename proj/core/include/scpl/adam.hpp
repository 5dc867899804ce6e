#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "scpl/graph.hpp"

namespace scpl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed group of named parameters.
template <typename T>
class Adam {
 public:
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
  };

  Adam() = default;
  Adam(AdamConfig cfg, const ParamStore<T>& store, const std::vector<std::string>& names)
      : cfg_(cfg) {
    for (const auto& n : names) {
      const auto& p = store.get(n);
      moments_.emplace(n, Moments{Tensor<T>(p.shape), Tensor<T>(p.shape)});
    }
  }

  /// Applies one update using the gradients for this group's parameters; others are ignored.
  void step(ParamStore<T>& store, const Grads<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.lr / c1);
    const T sqrt_c2 = static_cast<T>(std::sqrt(c2));
    const T eps = static_cast<T>(cfg_.eps);
    for (auto& [name, mom] : moments_) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor<T>& g = it->second;
      Tensor<T>& p = store.get(name);
      for (std::size_t i = 0; i < p.size(); ++i) {
        mom.m[i] = b1 * mom.m[i] + (T{1} - b1) * g[i];
        mom.v[i] = b2 * mom.v[i] + (T{1} - b2) * g[i] * g[i];
        p[i] -= step_size * mom.m[i] / (std::sqrt(mom.v[i]) / sqrt_c2 + eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace scpl
