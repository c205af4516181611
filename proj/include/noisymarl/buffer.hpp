#pragma once

// On-policy rollout storage indexed (timestep, env, agent), plus the
// frame-stacking helper for observations. Behavior log-probs and values are
// recorded at collection time and never recomputed; the buffer is discarded
// after each training iteration.

#include "noisymarl/tensor.hpp"

namespace noisymarl::trainer {

struct RolloutBuffer {
  int T = 0, E = 0, N = 0;
  int obs_in = 0;     // stacked observation width
  int state_dim = 0;
  int hidden_dim = 0;

  std::vector<double> states;     // [t][e][state_dim]
  std::vector<double> obs;        // [t][e][i][obs_in]
  std::vector<int> actions;       // [t][e][i]
  std::vector<double> logp;       // [t][e][i]
  std::vector<double> rewards;    // [t][e]
  std::vector<double> values;     // [t][e][i]
  std::vector<char> terminals;    // [t][e]
  std::vector<double> bootstrap;  // [e][i], forced 0 at terminal
  std::vector<double> h0;         // [e][i][hidden_dim], recurrent nets only

  void alloc(int t, int e, int n, int obs_width, int state_width, int hidden) {
    T = t;
    E = e;
    N = n;
    obs_in = obs_width;
    state_dim = state_width;
    hidden_dim = hidden;
    states.assign(static_cast<std::size_t>(T) * E * state_dim, 0.0);
    obs.assign(static_cast<std::size_t>(T) * E * N * obs_in, 0.0);
    actions.assign(static_cast<std::size_t>(T) * E * N, 0);
    logp.assign(static_cast<std::size_t>(T) * E * N, 0.0);
    rewards.assign(static_cast<std::size_t>(T) * E, 0.0);
    values.assign(static_cast<std::size_t>(T) * E * N, 0.0);
    terminals.assign(static_cast<std::size_t>(T) * E, 0);
    bootstrap.assign(static_cast<std::size_t>(E) * N, 0.0);
    h0.assign(static_cast<std::size_t>(E) * N * hidden_dim, 0.0);
  }

  std::size_t ea(int t, int e, int i) const {
    return (static_cast<std::size_t>(t) * E + e) * N + i;
  }
  std::size_t te(int t, int e) const { return static_cast<std::size_t>(t) * E + e; }
  double* obs_row(int t, int e, int i) { return &obs[ea(t, e, i) * obs_in]; }
  const double* obs_row(int t, int e, int i) const { return &obs[ea(t, e, i) * obs_in]; }
  double* state_row(int t, int e) { return &states[te(t, e) * state_dim]; }
  const double* state_row(int t, int e) const { return &states[te(t, e) * state_dim]; }
};

// Keeps the last k raw observations per (env, agent); slots are zero-padded
// at episode starts so the stacked width is constant.
class ObsStacker {
 public:
  ObsStacker(int envs, int agents, int obs_dim, int k)
      : E_(envs), N_(agents), obs_dim_(obs_dim), k_(k),
        buf_(static_cast<std::size_t>(envs) * agents * k * obs_dim, 0.0) {}

  void reset_slot(int e, int i) {
    std::fill_n(&buf_[slot(e, i)], static_cast<std::size_t>(k_) * obs_dim_, 0.0);
  }

  void push(int e, int i, const std::vector<double>& raw) {
    double* s = &buf_[slot(e, i)];
    std::copy(s + obs_dim_, s + static_cast<std::size_t>(k_) * obs_dim_, s);
    std::copy(raw.begin(), raw.end(), s + static_cast<std::size_t>(k_ - 1) * obs_dim_);
  }

  // Oldest frame first.
  const double* stacked(int e, int i) const { return &buf_[slot(e, i)]; }
  int width() const { return k_ * obs_dim_; }

 private:
  std::size_t slot(int e, int i) const {
    return (static_cast<std::size_t>(e) * N_ + i) * k_ * obs_dim_;
  }
  int E_, N_, obs_dim_, k_;
  std::vector<double> buf_;
};

struct MetricRow {
  long long step = 0;
  long long episodes = 0;
  std::string metric;
  double value = 0.0;
};

struct IterationMetrics {
  double train_return = 0.0;
  double policy_entropy = 0.0;
  double value_std_agents = 0.0;
  double loss_policy = 0.0;
  double loss_value = 0.0;
  double clip_fraction = 0.0;
  long long episodes_completed = 0;
  bool has_return = false;
};

}  // namespace noisymarl::trainer
