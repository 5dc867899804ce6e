#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "scpl/bound.hpp"

using namespace scpl;

namespace {

TabularMDP make_mdp(std::size_t S, std::size_t A, double gamma) {
  TabularMDP m;
  m.n_states = S;
  m.n_actions = A;
  m.gamma = gamma;
  m.transition.assign(S * A * S, 0.0);
  m.reward.assign(S, 0.0);
  m.initial.assign(S, 0.0);
  return m;
}

void set_p(TabularMDP& m, std::size_t s, std::size_t a, std::size_t s2, double p) {
  m.transition[(s * m.n_actions + a) * m.n_states + s2] = p;
}

PolicyTable make_policy(std::size_t S, std::size_t A, std::vector<double> probs) {
  return PolicyTable{S, A, std::move(probs)};
}

BoundInstance instance(std::uint64_t seed, std::size_t max_states = 8, double gamma = 0.9) {
  Rng rng(seed);
  InstanceSpec spec;
  spec.max_states = max_states;
  spec.gamma = gamma;
  return random_instance(spec, rng);
}

// Two states: state 1 is absorbing with reward 1; in state 0 action 0 moves to state 1
// and action 1 stays. pi_p moves with probability q, pi_o with probability q_o.
BoundInstance two_state_instance(double q_p, double q_o) {
  BoundInstance inst;
  inst.mdp = make_mdp(2, 2, 0.5);
  set_p(inst.mdp, 0, 0, 1, 1.0);
  set_p(inst.mdp, 0, 1, 0, 1.0);
  set_p(inst.mdp, 1, 0, 1, 1.0);
  set_p(inst.mdp, 1, 1, 1, 1.0);
  inst.mdp.reward = {0.0, 1.0};
  inst.mdp.initial = {1.0, 0.0};
  inst.pi_p = make_policy(2, 2, {q_p, 1 - q_p, 0.5, 0.5});
  inst.pi_o = make_policy(2, 2, {q_o, 1 - q_o, 0.5, 0.5});
  return inst;
}

}  // namespace

TEST(TabularMDP, RejectsNonStochasticRows) {
  auto m = make_mdp(1, 1, 0.5);
  m.initial = {1.0};
  set_p(m, 0, 0, 0, 0.9);
  EXPECT_THROW(m.validate(), Error);
  set_p(m, 0, 0, 0, 1.0);
  EXPECT_NO_THROW(m.validate());
  m.gamma = 1.0;
  EXPECT_THROW(m.validate(), Error);
}

TEST(ExactEval, SingleStateGeometricSeries) {
  auto m = make_mdp(1, 1, 0.5);
  set_p(m, 0, 0, 0, 1.0);
  m.reward = {1.0};
  m.initial = {1.0};
  const auto v = exact_eval(m, make_policy(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(v.V(0), 2.0);
  EXPECT_DOUBLE_EQ(v.Q(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(v.A(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(v.eta, 2.0);
}

TEST(ExactEval, AdvantageCentersUnderOwnPolicy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = instance(seed);
    const auto v = exact_eval(inst.mdp, inst.pi_o);
    for (std::size_t s = 0; s < inst.mdp.n_states; ++s) {
      double e = 0.0;
      for (std::size_t a = 0; a < inst.mdp.n_actions; ++a) e += inst.pi_o(s, a) * v.A(s, a);
      EXPECT_NEAR(e, 0.0, 1e-12);
    }
  }
}

TEST(ExactEval, MatchesValueIteration) {
  Rng rng(77);
  auto m = make_mdp(6, 3, 0.9);
  for (std::size_t row = 0; row < 18; ++row) {
    double z = 0.0;
    for (std::size_t j = 0; j < 6; ++j) z += m.transition[row * 6 + j] = 0.05 + rng.uniform();
    for (std::size_t j = 0; j < 6; ++j) m.transition[row * 6 + j] /= z;
  }
  for (auto& r : m.reward) r = rng.uniform(-1, 1);
  m.initial.assign(6, 1.0 / 6);
  const auto pi = random_softmax_policy(6, 3, 1.0, rng);

  std::vector<double> V(6, 0.0);
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> next(6);
    for (std::size_t s = 0; s < 6; ++s) {
      double ev = 0.0;
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t s2 = 0; s2 < 6; ++s2) ev += pi(s, a) * m.p(s, a, s2) * V[s2];
      next[s] = m.reward[s] + m.gamma * ev;
    }
    V = next;
  }
  const auto v = exact_eval(m, pi);
  for (std::size_t s = 0; s < 6; ++s) EXPECT_NEAR(v.V(s), V[s], 1e-10);
}

TEST(Divergences, IdenticalPoliciesAreZero) {
  const auto inst = instance(3);
  const auto d = divergences(inst.pi_o, inst.pi_o);
  EXPECT_EQ(d.tv_max, 0.0);
  EXPECT_EQ(d.kl_max, 0.0);
}

TEST(Divergences, DeterministicVersusUniform) {
  const auto d = divergences(make_policy(1, 2, {1.0, 0.0}), make_policy(1, 2, {0.5, 0.5}));
  EXPECT_DOUBLE_EQ(d.tv_max, 0.5);
  EXPECT_DOUBLE_EQ(d.kl_max, std::log(2.0));
}

TEST(Divergences, SupportViolationNamesStateAndAction) {
  try {
    divergences(make_policy(2, 2, {0.5, 0.5, 0.3, 0.7}), make_policy(2, 2, {0.5, 0.5, 1.0, 0.0}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pi_p(1|1)"), std::string::npos) << e.what();
  }
}

TEST(Divergences, PinskerOnRandomPairs) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto inst = instance(seed);
    const auto d = divergences(inst.pi_o, inst.pi_p);
    EXPECT_LE(d.tv_max * d.tv_max, d.kl_max + 1e-12) << "seed " << seed;
  }
}

TEST(Lemma1, IdenticalPoliciesGiveZero) {
  const auto inst = instance(11);
  EXPECT_NEAR(lemma1_residual(inst.mdp, inst.pi_o, inst.pi_o), 0.0, 1e-14);
}

TEST(Lemma1, RandomFiveStateInstances) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    InstanceSpec spec;
    spec.max_states = 5;
    spec.gamma = seed % 2 ? 0.99 : 0.9;
    const auto inst = random_instance(spec, rng);
    EXPECT_LT(lemma1_residual(inst.mdp, inst.pi_o, inst.pi_p), 1e-9) << "seed " << seed;
  }
}

TEST(Lemma1, DeterministicChainByHand) {
  // States 0 -> 1 -> 2 with 2 absorbing (reward 1). Action 0 moves right, action 1 stays.
  auto m = make_mdp(3, 2, 0.5);
  set_p(m, 0, 0, 1, 1);
  set_p(m, 0, 1, 0, 1);
  set_p(m, 1, 0, 2, 1);
  set_p(m, 1, 1, 1, 1);
  set_p(m, 2, 0, 2, 1);
  set_p(m, 2, 1, 2, 1);
  m.reward = {0, 0, 1};
  m.initial = {1, 0, 0};
  const auto pi_p = make_policy(3, 2, {1, 0, 1, 0, 1, 0});
  const auto pi_o = make_policy(3, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});

  // V_p = (1/2, 1, 2), V_o = (2/9, 2/3, 2); occupancy of pi_o from state 0 is (4/3, 4/9, .).
  const auto vp = exact_eval(m, pi_p);
  const auto vo = exact_eval(m, pi_o);
  EXPECT_NEAR(vp.eta, 0.5, 1e-15);
  EXPECT_NEAR(vo.eta, 2.0 / 9.0, 1e-15);
  const auto d = discounted_occupancy(m, pi_o);
  EXPECT_NEAR(d(0), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(d(1), 4.0 / 9.0, 1e-15);

  // Right-hand side: 4/3 * 1/2 * (-1/4) + 4/9 * 1/2 * (-1/2) = -5/18 = eta_o - eta_p.
  double rhs = 0.0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t a = 0; a < 2; ++a) rhs += d(s) * pi_o(s, a) * vp.A(s, a);
  EXPECT_NEAR(rhs, -5.0 / 18.0, 1e-15);
  EXPECT_NEAR(vo.eta - vp.eta, -5.0 / 18.0, 1e-15);
  EXPECT_NEAR(lemma1_residual(m, pi_o, pi_p), 0.0, 1e-15);
}

TEST(Theorem1, ZeroDivergenceCase) {
  const auto inst = instance(5);
  const auto r = theorem1_check(inst.mdp, inst.pi_o, inst.pi_o);
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_EQ(r.alpha_tv, 0.0);
  EXPECT_EQ(r.tv_bound, 0.0);
  EXPECT_EQ(r.kl_bound, 0.0);
  EXPECT_TRUE(r.bounds_hold());
}

TEST(Theorem1, CorruptedBoundThrows) {
  const auto inst = instance(5);
  BoundOptions opts;
  opts.corrupt_offset = 1.0;
  EXPECT_THROW(theorem1_check(inst.mdp, inst.pi_o, inst.pi_o, opts), BoundViolation);
  try {
    theorem1_check(inst.mdp, inst.pi_o, inst.pi_o, opts);
  } catch (const BoundViolation& v) {
    EXPECT_FALSE(v.report().tv_ok);
    EXPECT_FALSE(v.report().kl_ok);
  }
}

TEST(Theorem1, ReportFieldsOnHandInstance) {
  // pi_p moves with probability 1/2, pi_o with 0.6.
  // eta = 2q / (1 + q): eta_p = 2/3, eta_o = 3/4. A_p(0, .) = +-1/3, alpha = 0.1.
  const auto inst = two_state_instance(0.5, 0.6);
  const auto r = evaluate_bounds(inst.mdp, inst.pi_o, inst.pi_p);
  EXPECT_NEAR(r.eta_p, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.eta_o, 0.75, 1e-15);
  EXPECT_NEAR(r.lhs, 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(r.alpha_tv, 0.1, 1e-15);
  EXPECT_NEAR(r.epsilon, 1.0 / 3.0, 1e-15);
  const double c = 2.0 * (1.0 / 3.0) * 0.5 / 0.25;
  EXPECT_NEAR(r.tv_bound, c * 0.01, 1e-15);
  EXPECT_NEAR(r.kl_bound, c * r.kl_max, 1e-15);
  EXPECT_TRUE(r.lemma1_ok);
  EXPECT_TRUE(r.lemma2_ok);  // tight here: |0.6/3 - 0.4/3| = 2 * 0.1 / 3
  EXPECT_TRUE(r.pinsker_ok);
}

TEST(Theorem1, FirstOrderGapIsReported) {
  // The quadratic-in-alpha bound cannot dominate a return gap that is linear in alpha.
  // With q_o = q_p + delta the gap is about 4 delta / 9 while the bound is 4 delta^2 / 3.
  for (double delta : {0.1, 0.01, 0.001}) {
    const auto inst = two_state_instance(0.5, 0.5 + delta);
    const auto r = evaluate_bounds(inst.mdp, inst.pi_o, inst.pi_p);
    EXPECT_GT(r.lhs, r.tv_bound) << delta;
    EXPECT_FALSE(r.tv_ok);
    EXPECT_THROW(theorem1_check(inst.mdp, inst.pi_o, inst.pi_p), BoundViolation);
  }
}

TEST(Theorem1, LemmaTwoAndPinskerOnSuite) {
  const auto rows = run_bound_suite(300, {0.9, 0.99}, 1);
  const auto s = summarize(rows);
  EXPECT_EQ(s.instances, 300u);
  EXPECT_EQ(s.lemma2_violations, 0u);
  EXPECT_EQ(s.pinsker_violations, 0u);
  EXPECT_EQ(s.lemma1_violations, 0u);
  EXPECT_LT(s.max_lemma1_residual, 1e-9);
}

TEST(Theorem1, SuiteIsSeedDeterministic) {
  const auto a = run_bound_suite(20, {0.9, 0.99}, 9);
  const auto b = run_bound_suite(20, {0.9, 0.99}, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(bound_csv_row(a[i]), bound_csv_row(b[i]));
  EXPECT_EQ(a[1].gamma, 0.99);
}

TEST(Theorem1, IdenticalSuiteRowIsZero) {
  const auto rows = run_bound_suite(1, {0.9}, 0, {}, true);
  const auto& r = rows[0].report;
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_EQ(r.alpha_tv, 0.0);
  EXPECT_EQ(r.kl_max, 0.0);
  EXPECT_EQ(r.tv_bound, 0.0);
  EXPECT_EQ(r.kl_bound, 0.0);
  EXPECT_TRUE(summarize(rows).clean());
}

TEST(BoundCoefficient, IncreasingInGamma) {
  double prev = 0.0;
  for (int i = 1; i < 1000; ++i) {
    const double g = i / 1000.0;
    const double c = bound_coefficient(0.7, g);
    EXPECT_GT(c, prev) << g;
    prev = c;
  }
}

TEST(BoundCsv, HeaderMatchesRowWidth) {
  const auto rows = run_bound_suite(1, {0.9}, 0);
  auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(commas(bound_csv_header()), commas(bound_csv_row(rows[0])));
}
