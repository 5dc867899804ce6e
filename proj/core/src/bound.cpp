#include "scpl/bound.hpp"

#include <Eigen/LU>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace scpl {

namespace {

constexpr double kStochTol = 1e-12;

void check_rows(const std::vector<double>& v, std::size_t rows, std::size_t len, const char* what) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double x = v[r * len + j];
      if (!(x >= 0.0) || !std::isfinite(x))
        throw Error(std::string(what) + ": negative or non-finite entry in row " + std::to_string(r));
      s += x;
    }
    if (std::abs(s - 1.0) > kStochTol)
      throw Error(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

Eigen::MatrixXd policy_transition(const TabularMDP& mdp, const PolicyTable& pi) {
  const std::size_t S = mdp.n_states;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a)
      for (std::size_t s2 = 0; s2 < S; ++s2) P(s, s2) += pi(s, a) * mdp.p(s, a, s2);
  return P;
}

void check_pair(const TabularMDP& mdp, const PolicyTable& pi) {
  mdp.validate();
  pi.validate();
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw ShapeError("policy table does not match the MDP's state/action counts");
}

Eigen::VectorXd solve(const Eigen::MatrixXd& M, const Eigen::VectorXd& b) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw NumericError("policy evaluation system is singular (gamma too close to 1?)");
  return lu.solve(b);
}

}  // namespace

void TabularMDP::validate() const {
  if (n_states == 0 || n_actions == 0) throw Error("MDP needs at least one state and action");
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("MDP discount must lie in (0, 1)");
  if (transition.size() != n_states * n_actions * n_states || reward.size() != n_states ||
      initial.size() != n_states)
    throw ShapeError("MDP arrays do not match n_states/n_actions");
  check_rows(transition, n_states * n_actions, n_states, "transition");
  check_rows(initial, 1, n_states, "initial distribution");
  for (double r : reward)
    if (!std::isfinite(r)) throw Error("MDP reward is not finite");
}

void PolicyTable::validate() const {
  if (probs.size() != n_states * n_actions) throw ShapeError("policy table has wrong size");
  check_rows(probs, n_states, n_actions, "policy");
}

ExactValues exact_eval(const TabularMDP& mdp, const PolicyTable& pi) {
  check_pair(mdp, pi);
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  const auto A = static_cast<Eigen::Index>(mdp.n_actions);
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(mdp.reward.data(), S);
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * policy_transition(mdp, pi);
  ExactValues out;
  out.V = solve(M, r);
  out.Q.resize(S, A);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) {
      double ev = 0.0;
      for (Eigen::Index s2 = 0; s2 < S; ++s2)
        ev += mdp.p(static_cast<std::size_t>(s), static_cast<std::size_t>(a), static_cast<std::size_t>(s2)) * out.V(s2);
      out.Q(s, a) = r(s) + mdp.gamma * ev;
    }
  out.A = out.Q.colwise() - out.V;
  out.eta = Eigen::Map<const Eigen::VectorXd>(mdp.initial.data(), S).dot(out.V);
  return out;
}

Eigen::VectorXd discounted_occupancy(const TabularMDP& mdp, const PolicyTable& pi) {
  check_pair(mdp, pi);
  const auto S = static_cast<Eigen::Index>(mdp.n_states);
  const Eigen::MatrixXd M =
      Eigen::MatrixXd::Identity(S, S) - mdp.gamma * policy_transition(mdp, pi).transpose();
  return solve(M, Eigen::Map<const Eigen::VectorXd>(mdp.initial.data(), S));
}

Divergences divergences(const PolicyTable& pi_o, const PolicyTable& pi_p) {
  pi_o.validate();
  pi_p.validate();
  if (pi_o.n_states != pi_p.n_states || pi_o.n_actions != pi_p.n_actions)
    throw ShapeError("policy tables differ in shape");
  Divergences d;
  for (std::size_t s = 0; s < pi_o.n_states; ++s) {
    double tv = 0.0, kl = 0.0;
    for (std::size_t a = 0; a < pi_o.n_actions; ++a) {
      const double p = pi_o(s, a), q = pi_p(s, a);
      tv += std::abs(p - q);
      if (p > 0.0) {
        if (q <= 0.0)
          throw Error("KL undefined: pi_p(" + std::to_string(a) + "|" + std::to_string(s) +
                      ") = 0 where pi_o is positive");
        kl += p * std::log(p / q);
      }
    }
    d.tv_max = std::max(d.tv_max, 0.5 * tv);
    d.kl_max = std::max(d.kl_max, std::max(0.0, kl));
  }
  return d;
}

double lemma1_residual(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p) {
  const auto eo = exact_eval(mdp, pi_o);
  const auto ep = exact_eval(mdp, pi_p);
  const Eigen::VectorXd d = discounted_occupancy(mdp, pi_o);
  double expected = 0.0;
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a)
      expected += d(static_cast<Eigen::Index>(s)) * pi_o(s, a) * ep.A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  return std::abs(eo.eta - ep.eta - expected);
}

double bound_coefficient(double epsilon, double gamma) {
  return 2.0 * epsilon * gamma / ((1.0 - gamma) * (1.0 - gamma));
}

BoundReport evaluate_bounds(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p,
                            const BoundOptions& opts) {
  const auto eo = exact_eval(mdp, pi_o);
  const auto ep = exact_eval(mdp, pi_p);
  const auto div = divergences(pi_o, pi_p);
  BoundReport r;
  r.eta_o = eo.eta;
  r.eta_p = ep.eta;
  r.lhs = eo.eta - ep.eta;
  r.alpha_tv = div.tv_max;
  r.kl_max = div.kl_max;
  r.epsilon = ep.A.cwiseAbs().maxCoeff();
  const double c = bound_coefficient(r.epsilon, mdp.gamma);
  r.tv_bound = c * r.alpha_tv * r.alpha_tv - opts.corrupt_offset;
  r.kl_bound = c * r.kl_max - opts.corrupt_offset;
  r.lemma1_residual = lemma1_residual(mdp, pi_o, pi_p);

  r.lemma2_slack = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    double e = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) e += pi_o(s, a) * ep.A(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    r.lemma2_slack = std::max(r.lemma2_slack, std::abs(e) - 2.0 * r.alpha_tv * r.epsilon);
  }
  r.tv_ok = r.lhs <= r.tv_bound + opts.tolerance;
  r.kl_ok = r.lhs <= r.kl_bound + opts.tolerance;
  r.pinsker_ok = r.alpha_tv * r.alpha_tv <= r.kl_max + opts.tolerance;
  r.lemma2_ok = r.lemma2_slack <= opts.tolerance;
  r.lemma1_ok = r.lemma1_residual < opts.tolerance;
  return r;
}

BoundReport theorem1_check(const TabularMDP& mdp, const PolicyTable& pi_o, const PolicyTable& pi_p,
                           const BoundOptions& opts) {
  BoundReport r = evaluate_bounds(mdp, pi_o, pi_p, opts);
  if (!r.bounds_hold()) {
    std::ostringstream os;
    os << std::setprecision(10) << "performance-difference bound violated: lhs=" << r.lhs
       << " tv_bound=" << r.tv_bound << " kl_bound=" << r.kl_bound;
    throw BoundViolation(os.str(), r);
  }
  return r;
}

PolicyTable random_softmax_policy(std::size_t n_states, std::size_t n_actions, double scale, Rng& rng) {
  PolicyTable pi{n_states, n_actions, std::vector<double>(n_states * n_actions)};
  for (std::size_t s = 0; s < n_states; ++s) {
    double z = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) z += pi.probs[s * n_actions + a] = std::exp(scale * rng.normal());
    for (std::size_t a = 0; a < n_actions; ++a) pi.probs[s * n_actions + a] /= z;
  }
  return pi;
}

BoundInstance random_instance(const InstanceSpec& spec, Rng& rng) {
  BoundInstance inst;
  auto& m = inst.mdp;
  m.n_states = 1 + rng.uniform_int(spec.max_states);
  m.n_actions = 1 + rng.uniform_int(spec.max_actions);
  m.gamma = spec.gamma;
  const std::size_t S = m.n_states, A = m.n_actions;
  m.transition.resize(S * A * S);
  for (std::size_t row = 0; row < S * A; ++row) {
    // Dirichlet(1, ..., 1) via normalized exponentials.
    double z = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      double u = rng.uniform();
      while (u <= 0.0) u = rng.uniform();
      z += m.transition[row * S + j] = -std::log(u);
    }
    for (std::size_t j = 0; j < S; ++j) m.transition[row * S + j] /= z;
  }
  m.reward.resize(S);
  for (auto& r : m.reward) r = rng.uniform(-1.0, 1.0);
  m.initial.assign(S, 1.0 / static_cast<double>(S));

  inst.pi_o = random_softmax_policy(S, A, 1.0, rng);
  inst.pi_p = inst.pi_o;
  if (!spec.identical_policies) {
    // Perturbation scale log-uniform in [1e-3, 3] sweeps near-identical to very different pairs.
    const double delta = std::exp(rng.uniform(std::log(1e-3), std::log(3.0)));
    for (std::size_t s = 0; s < S; ++s) {
      double z = 0.0;
      for (std::size_t a = 0; a < A; ++a) {
        double& p = inst.pi_p.probs[s * A + a];
        p = inst.pi_o.probs[s * A + a] * std::exp(delta * rng.normal());
        z += p;
      }
      for (std::size_t a = 0; a < A; ++a) inst.pi_p.probs[s * A + a] /= z;
    }
  }
  return inst;
}

std::vector<SuiteRow> run_bound_suite(std::size_t count, const std::vector<double>& gammas,
                                      std::uint64_t seed, const BoundOptions& opts,
                                      bool identical_policies) {
  if (gammas.empty()) throw Error("at least one discount factor is required");
  std::vector<SuiteRow> rows;
  rows.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    InstanceSpec spec;
    spec.gamma = gammas[i % gammas.size()];
    spec.identical_policies = identical_policies;
    auto inst = random_instance(spec, rng);
    SuiteRow row{i, inst.mdp.n_states, inst.mdp.n_actions, spec.gamma,
                 evaluate_bounds(inst.mdp, inst.pi_o, inst.pi_p, opts)};
    rows.push_back(row);
  }
  return rows;
}

SuiteSummary summarize(const std::vector<SuiteRow>& rows) {
  SuiteSummary s;
  s.instances = rows.size();
  for (const auto& row : rows) {
    const auto& r = row.report;
    s.tv_violations += !r.tv_ok;
    s.kl_violations += !r.kl_ok;
    s.pinsker_violations += !r.pinsker_ok;
    s.lemma1_violations += !r.lemma1_ok;
    s.lemma2_violations += !r.lemma2_ok;
    s.max_lemma1_residual = std::max(s.max_lemma1_residual, r.lemma1_residual);
  }
  return s;
}

std::string bound_csv_header() {
  return "instance,n_states,n_actions,gamma,eta_o,eta_p,lhs,abs_lhs,alpha_tv,kl_max,epsilon,"
         "tv_bound,kl_bound,lemma1_residual,lemma2_slack,tv_ok,kl_ok,pinsker_ok,lemma2_ok";
}

std::string bound_csv_row(const SuiteRow& row) {
  const auto& r = row.report;
  auto num = [](double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  };
  std::string out = std::to_string(row.index) + ',' + std::to_string(row.n_states) + ',' +
                    std::to_string(row.n_actions);
  for (double v : {row.gamma, r.eta_o, r.eta_p, r.lhs, std::abs(r.lhs), r.alpha_tv, r.kl_max,
                   r.epsilon, r.tv_bound, r.kl_bound, r.lemma1_residual, r.lemma2_slack})
    out += ',' + num(v);
  for (bool b : {r.tv_ok, r.kl_ok, r.pinsker_ok, r.lemma2_ok}) out += b ? ",1" : ",0";
  return out;
}

}  // namespace scpl
