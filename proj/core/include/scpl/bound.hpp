#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "scpl/rng.hpp"
#include "scpl/tensor.hpp"

namespace scpl {

/// Finite MDP with state rewards r(s). transition(s, a) is a row over next states.
struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // [s][a][s']
  std::vector<double> reward;      // [s]
  double gamma = 0.9;
  std::vector<double> initial;     // [s]

  double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return transition[(s * n_actions + a) * n_states + s2];
  }
  void validate() const;
};

/// Row-stochastic [s][a] action probabilities.
struct PolicyTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;

  double operator()(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }
  void validate() const;
};

struct ExactValues {
  Eigen::VectorXd V;
  Eigen::MatrixXd Q;  // [s, a]
  Eigen::MatrixXd A;  // Q - V
  double eta = 0.0;
};

/// Direct linear solve of (I - gamma P_pi) V = r.
ExactValues exact_eval(const TabularMDP& mdp, const PolicyTable& pi);

/// Discounted state occupancy sum_t gamma^t Pr(s_t = s) from the initial distribution.
Eigen::VectorXd discounted_occupancy(const TabularMDP& mdp, const PolicyTable& pi);

struct Divergences {
  double tv_max = 0.0;
  double kl_max = 0.0;
};

/// Worst-case-over-states TV and KL(pi_o || pi_p).
Divergences divergences(const PolicyTable& pi_o, const PolicyTable& pi_p);

/// |eta(pi_o) - eta(pi_p) - E_{tau ~ pi_o}[sum_t gamma^t A_{pi_p}(s_t, a_t)]|, exactly.
double lemma1_residual(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p);

/// 2 eps gamma / (1 - gamma)^2
double bound_coefficient(double epsilon, double gamma);

struct BoundReport {
  double eta_o = 0, eta_p = 0;
  double lhs = 0;
  double alpha_tv = 0;
  double kl_max = 0;
  double epsilon = 0;
  double tv_bound = 0;
  double kl_bound = 0;
  double lemma1_residual = 0;
  /// max over states of |E_{a~pi_o} A_{pi_p}(s,a)| - 2 alpha max|A_{pi_p}|; <= 0 when the inequality holds.
  double lemma2_slack = 0;

  bool tv_ok = true;
  bool kl_ok = true;
  bool pinsker_ok = true;
  bool lemma2_ok = true;
  bool lemma1_ok = true;
  bool bounds_hold() const { return tv_ok && kl_ok; }
};

struct BoundOptions {
  double tolerance = 1e-9;
  /// Negative-control hook: subtracted from both bounds before comparing.
  double corrupt_offset = 0.0;
};

/// Fills every report field and flags; never throws on a violated inequality.
BoundReport evaluate_bounds(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p,
                            const BoundOptions& opts = {});

class BoundViolation : public Error {
 public:
  BoundViolation(const std::string& what, BoundReport report) : Error(what), report_(report) {}
  const BoundReport& report() const { return report_; }

 private:
  BoundReport report_;
};

/// evaluate_bounds, then throws BoundViolation if either bound is exceeded.
BoundReport theorem1_check(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p,
                           const BoundOptions& opts = {});

// ---- random instances ----

struct BoundInstance {
  TabularMDP mdp;
  PolicyTable pi_o;
  PolicyTable pi_p;
};

struct InstanceSpec {
  std::size_t max_states = 8;
  std::size_t max_actions = 4;
  double gamma = 0.9;
  bool identical_policies = false;
};

/// Dirichlet(1) transition rows, rewards U[-1,1], uniform initial distribution; pi_o a random
/// softmax and pi_p a perturbed copy with log-uniform perturbation scale.
BoundInstance random_instance(const InstanceSpec& spec, Rng& rng);

PolicyTable random_softmax_policy(std::size_t n_states, std::size_t n_actions, double scale, Rng& rng);

struct SuiteSummary {
  std::size_t instances = 0;
  std::size_t tv_violations = 0;
  std::size_t kl_violations = 0;
  std::size_t pinsker_violations = 0;
  std::size_t lemma1_violations = 0;
  std::size_t lemma2_violations = 0;
  double max_lemma1_residual = 0.0;
  bool clean() const {
    return tv_violations + kl_violations + pinsker_violations + lemma1_violations + lemma2_violations == 0;
  }
};

struct SuiteRow {
  std::size_t index = 0;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma = 0.0;
  BoundReport report;
};

/// Runs `count` instances, cycling through `gammas`; instance i uses rng stream mix_seed(seed, i).
std::vector<SuiteRow> run_bound_suite(std::size_t count, const std::vector<double>& gammas,
                                      std::uint64_t seed, const BoundOptions& opts = {},
                                      bool identical_policies = false);
SuiteSummary summarize(const std::vector<SuiteRow>& rows);

/// CSV with a header row; one line per instance.
std::string bound_csv_header();
std::string bound_csv_row(const SuiteRow& row);

}  // namespace scpl
