#pragma once

#include <numbers>
#include <span>
#include <vector>

#include "scpl/graph.hpp"

namespace scpl {

struct LogStdRange {
  double min = -10.0;
  double max = 2.0;
};

/// Added inside log(1 - tanh(u)^2 + eps) of the squashing correction.
inline constexpr double kSquashEps = 1e-6;

/// Diagonal Gaussian over actions, log_std clamped to a range at construction.
class DiagGaussian {
 public:
  DiagGaussian(std::vector<double> mean, std::vector<double> log_std, LogStdRange range = {});

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& log_std() const { return log_std_; }

  /// Log density of the (pre-squash) Gaussian at x.
  double log_density(std::span<const double> x) const;

 private:
  std::vector<double> mean_;
  std::vector<double> log_std_;
};

/// KL(p || q), closed form, summed over dimensions.
double diag_gaussian_kl(const DiagGaussian& p, const DiagGaussian& q);

struct SquashedSample {
  std::vector<double> action;
  double log_prob = 0.0;
};

/// action = tanh(mean + std * noise) with the change-of-variables log-density.
SquashedSample squashed_sample(const DiagGaussian& policy, std::span<const double> noise);

// ---- graph counterparts (batched, rows are samples) ----

template <typename T>
struct PolicyNodes {
  NodeId mean;
  NodeId log_std;
};

/// Splits a [B, 2A] head output into mean and a log_std squashed smoothly into `range`.
template <typename T>
PolicyNodes<T> policy_head(Graph<T>& g, NodeId raw, std::size_t action_dim, LogStdRange range) {
  PolicyNodes<T> out;
  out.mean = g.slice(raw, 1, 0, action_dim);
  NodeId t = g.tanh(g.slice(raw, 1, action_dim, 2 * action_dim));
  const T half_span = static_cast<T>(0.5 * (range.max - range.min));
  out.log_std = g.add_scalar(g.scale(t, half_span), static_cast<T>(range.min) + half_span);
  return out;
}

template <typename T>
struct SampleNodes {
  NodeId action;    // [B, A]
  NodeId log_prob;  // [B, 1]
};

/// Reparameterized tanh-squashed sample; `noise` is a [B, A] standard-normal node.
template <typename T>
SampleNodes<T> squashed_sample_nodes(Graph<T>& g, const PolicyNodes<T>& pol, NodeId noise) {
  NodeId u = g.add(pol.mean, g.mul(g.exp(pol.log_std), noise));
  NodeId a = g.tanh(u);
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  NodeId gauss = g.sub(g.scale(g.square(noise), T(-0.5)), pol.log_std);
  NodeId corr = g.log(g.add_scalar(g.scale(g.square(a), T(-1)), static_cast<T>(1.0 + kSquashEps)));
  NodeId logp = g.sub(g.sum_rows(g.add_scalar(gauss, -half_log_2pi)), g.sum_rows(corr));
  return {a, logp};
}

/// Per-row KL(p || q) of diagonal Gaussians, [B, 1].
template <typename T>
NodeId diag_gaussian_kl_nodes(Graph<T>& g, const PolicyNodes<T>& p, const PolicyNodes<T>& q) {
  // Variance ratio as exp(2 (ls_p - ls_q)) so identical inputs give exactly zero.
  NodeId dls = g.sub(q.log_std, p.log_std);
  NodeId var_ratio = g.exp(g.scale(dls, T(-2)));
  NodeId maha = g.mul(g.square(g.sub(p.mean, q.mean)), g.exp(g.scale(q.log_std, T(-2))));
  NodeId el = g.add_scalar(g.add(dls, g.scale(g.add(var_ratio, maha), T(0.5))), T(-0.5));
  return g.sum_rows(el);
}

}  // namespace scpl
