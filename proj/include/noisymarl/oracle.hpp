#pragma once

// Brute-force ground truth used by tests and diagnostics: exact expected
// returns by joint-action enumeration, marginal advantages, and a direct
// O(T^2) GAE reference. These deliberately share no code with the
// estimators they validate.

#include <functional>

#include "noisymarl/envs.hpp"

namespace noisymarl::oracle {

struct TabularPolicy {
  // One probability row per agent over that agent's actions.
  std::vector<std::vector<double>> rows;

  static TabularPolicy uniform(int n_agents, int n_actions) {
    TabularPolicy p;
    p.rows.assign(n_agents, std::vector<double>(n_actions, 1.0 / n_actions));
    return p;
  }

  void validate() const {
    for (const auto& row : rows) {
      double sum = 0.0;
      for (double v : row) {
        if (v < 0.0) fail("TabularPolicy", "negative probability");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-12) fail("TabularPolicy", "row does not sum to 1");
    }
  }
};

inline void check_enumerable(const envs::TeamGame& env) {
  double joint = std::pow(static_cast<double>(env.n_actions()), env.n_agents());
  if (joint > 1e4) fail("oracle", "environment too large to enumerate");
  if (env.horizon() != 1) fail("oracle", "only one-step games are enumerable here");
}

// Sum over joint actions of prod_i pi^i(a^i) * r(a).
inline double exact_expected_return(const envs::TeamGame& env, const TabularPolicy& pi) {
  check_enumerable(env);
  pi.validate();
  double total = 0.0;
  for (int a0 = 0; a0 < env.n_actions(); ++a0)
    for (int a1 = 0; a1 < env.n_actions(); ++a1)
      total += pi.rows[0][a0] * pi.rows[1][a1] * env.payoff(a0, a1);
  return total;
}

// E over the other agents' actions of [r + gamma*V(s') - V(s)], with the
// terminal next value fixed at 0. `value_fn` supplies V(s).
inline double marginal_advantage(const envs::TeamGame& env, const TabularPolicy& pi, int agent,
                                 int action,
                                 const std::function<double(const std::vector<double>&)>& value_fn,
                                 double gamma = 0.99) {
  (void)gamma;  // one-step games: the bootstrap term gamma*V(s') is 0.
  check_enumerable(env);
  pi.validate();
  if (agent < 0 || agent >= env.n_agents()) fail("marginal_advantage", "bad agent index");
  if (action < 0 || action >= env.n_actions()) fail("marginal_advantage", "bad action index");
  const double v = value_fn(env.state());
  const int other = 1 - agent;
  double total = 0.0;
  for (int b = 0; b < env.n_actions(); ++b) {
    const double r = agent == 0 ? env.payoff(action, b) : env.payoff(b, action);
    total += pi.rows[other][b] * (r - v);
  }
  return total;
}

// Direct summation A_t = sum_{l>=0} (gamma*lambda)^l delta_{t+l}, cut at
// episode ends; an independent route to the same estimator as the backward
// recursion in algos::compute_gae.
inline std::vector<double> reference_gae(const std::vector<double>& rewards,
                                         const std::vector<double>& values,
                                         const std::vector<char>& terminals, double gamma,
                                         double lambda) {
  const std::size_t steps = rewards.size();
  if (values.size() != steps + 1) fail("reference_gae", "values must have one bootstrap entry");
  if (terminals.size() != steps) fail("reference_gae", "terminal flags length mismatch");
  std::vector<double> adv(steps, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    double acc = 0.0;
    double w = 1.0;
    for (std::size_t l = t; l < steps; ++l) {
      const double nonterm = terminals[l] ? 0.0 : 1.0;
      const double delta = rewards[l] + gamma * values[l + 1] * nonterm - values[l];
      acc += w * delta;
      if (terminals[l]) break;
      w *= gamma * lambda;
    }
    adv[t] = acc;
  }
  return adv;
}

}  // namespace noisymarl::oracle
