#pragma once

// Desk-scale cooperative environments: two-player one-step team games over a
// 3x3 payoff table (the two non-monotonic matrices plus a decoupled bandit
// whose reward ignores agent one), and a vectorized auto-resetting runner.
//
// State is a constant zero vector (dim 4); each agent observes its one-hot
// id (dim 2). Actions are indexed from top to bottom / left to right.

#include <array>
#include <cstdint>

#include "noisymarl/rng.hpp"
#include "noisymarl/tensor.hpp"

namespace noisymarl::envs {

struct Transition {
  std::vector<double> state;
  std::vector<std::vector<double>> obs;
  std::vector<int> actions;
  double reward = 0.0;
  std::vector<double> next_state;
  std::vector<std::vector<double>> next_obs;
  bool terminal = false;
};

class TeamGame {
 public:
  static TeamGame matrix1() {
    return TeamGame("matrix1", {{{8, -12, -12}, {-12, 0, 0}, {-12, 0, 0}}});
  }
  static TeamGame matrix2() {
    return TeamGame("matrix2", {{{12, 0, 10}, {0, 10, 10}, {10, 10, 10}}});
  }
  // Reward depends only on agent two's action: r = [1, 0, -1][a2].
  static TeamGame decoupled_bandit() {
    return TeamGame("decoupled-bandit", {{{1, 0, -1}, {1, 0, -1}, {1, 0, -1}}});
  }

  static TeamGame by_name(const std::string& name) {
    if (name == "matrix1") return matrix1();
    if (name == "matrix2") return matrix2();
    if (name == "decoupled-bandit") return decoupled_bandit();
    fail("TeamGame::by_name", "unknown environment '" + name +
                                  "' (expected matrix1, matrix2 or decoupled-bandit)");
  }

  const std::string& name() const { return name_; }
  int n_agents() const { return 2; }
  int n_actions() const { return 3; }
  int state_dim() const { return 4; }
  int obs_dim() const { return 2; }
  int horizon() const { return 1; }
  double payoff(int a0, int a1) const { return payoff_[a0][a1]; }

  std::vector<double> state() const { return std::vector<double>(state_dim(), 0.0); }
  std::vector<std::vector<double>> observations() const {
    std::vector<std::vector<double>> obs(n_agents(), std::vector<double>(obs_dim(), 0.0));
    for (int i = 0; i < n_agents(); ++i) obs[i][i] = 1.0;
    return obs;
  }

  std::pair<std::vector<double>, std::vector<std::vector<double>>> reset(std::uint64_t seed) {
    rng_ = make_rng(seed, RngStream::kEnv);
    in_episode_ = true;
    return {state(), observations()};
  }

  Transition step(const std::vector<int>& joint) {
    if (!in_episode_) fail("TeamGame::step", "episode finished; call reset first");
    if (joint.size() != static_cast<std::size_t>(n_agents()))
      fail("TeamGame::step", "expected " + std::to_string(n_agents()) + " actions");
    for (int a : joint)
      if (a < 0 || a >= n_actions())
        fail("TeamGame::step", "action " + std::to_string(a) + " out of range [0," +
                                   std::to_string(n_actions() - 1) + "]");
    Transition tr;
    tr.state = state();
    tr.obs = observations();
    tr.actions = joint;
    tr.reward = payoff(joint[0], joint[1]);
    tr.next_state = state();
    tr.next_obs = observations();
    tr.terminal = true;
    in_episode_ = false;
    return tr;
  }

 private:
  TeamGame(std::string name, std::array<std::array<double, 3>, 3> payoff)
      : name_(std::move(name)), payoff_(payoff), rng_(make_rng(0, RngStream::kEnv)) {}

  std::string name_;
  std::array<std::array<double, 3>, 3> payoff_;
  std::mt19937_64 rng_;
  bool in_episode_ = false;
};

struct VecStep {
  std::vector<Transition> transitions;  // ordered by sub-environment index
  std::vector<char> episode_end;
};

// Steps all sub-environments with one call; sub-environment k is seeded
// base_seed + k, and finished episodes reset automatically.
class VecEnv {
 public:
  VecEnv(const std::string& env_name, int count, std::uint64_t base_seed) {
    if (count < 1) fail("VecEnv", "count must be >= 1");
    envs_.reserve(count);
    for (int k = 0; k < count; ++k) {
      envs_.push_back(TeamGame::by_name(env_name));
      auto [s, o] = envs_.back().reset(base_seed + static_cast<std::uint64_t>(k));
      states_.push_back(std::move(s));
      obs_.push_back(std::move(o));
    }
  }

  VecStep step(const std::vector<std::vector<int>>& joint_actions) {
    if (joint_actions.size() != envs_.size())
      fail("VecEnv::step", "expected " + std::to_string(envs_.size()) + " joint actions");
    VecStep out;
    out.transitions.reserve(envs_.size());
    out.episode_end.resize(envs_.size(), 0);
    for (std::size_t k = 0; k < envs_.size(); ++k) {
      Transition tr = envs_[k].step(joint_actions[k]);
      out.episode_end[k] = tr.terminal ? 1 : 0;
      if (tr.terminal) {
        auto [s, o] = envs_[k].reset(next_seed(k));
        states_[k] = std::move(s);
        obs_[k] = std::move(o);
      } else {
        states_[k] = tr.next_state;
        obs_[k] = tr.next_obs;
      }
      out.transitions.push_back(std::move(tr));
    }
    return out;
  }

  int count() const { return static_cast<int>(envs_.size()); }
  const TeamGame& env(int k) const { return envs_[k]; }
  const std::vector<double>& state(int k) const { return states_[k]; }
  const std::vector<std::vector<double>>& observations(int k) const { return obs_[k]; }

 private:
  std::uint64_t next_seed(std::size_t k) {
    return 0x9e3779b9u + static_cast<std::uint64_t>(k) + (++reset_counter_ << 8);
  }

  std::vector<TeamGame> envs_;
  std::vector<std::vector<double>> states_;
  std::vector<std::vector<std::vector<double>>> obs_;
  std::uint64_t reset_counter_ = 0;
};

}  // namespace noisymarl::envs
