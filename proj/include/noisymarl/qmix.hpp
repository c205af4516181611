#pragma once

// Minimal QMIX baseline: shared utility network, monotonic mixer, uniform
// replay, epsilon-greedy behavior annealed linearly, TD updates against a
// periodically synced target copy.

#include "noisymarl/buffer.hpp"
#include "noisymarl/config.hpp"
#include "noisymarl/envs.hpp"

namespace noisymarl::trainer {

using autodiff::Tape;
using autodiff::Var;

class QmixTrainer {
 public:
  QmixTrainer(ExperimentConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        seed_(seed),
        venv_(cfg_.env, cfg_.num_envs, seed),
        opt_(cfg_.hp.lr),
        rng_action_(make_rng(seed, RngStream::kAction)),
        rng_replay_(make_rng(seed, RngStream::kReplay)),
        stacker_(cfg_.num_envs, venv_.env(0).n_agents(), venv_.env(0).obs_dim(),
                 cfg_.stacked_frames) {
    const envs::TeamGame& spec = venv_.env(0);
    N_ = spec.n_agents();
    A_ = spec.n_actions();
    S_ = spec.state_dim();
    obs_in_ = stacker_.width();

    auto rng_init = make_rng(seed, RngStream::kInit);
    online_ = std::make_unique<nets::QmixNets>(online_store_, obs_in_, N_, A_, S_,
                                               cfg_.hidden_dim, cfg_.mixer_embed, rng_init);
    auto rng_tgt = make_rng(seed, RngStream::kInit);
    target_ = std::make_unique<nets::QmixNets>(target_store_, obs_in_, N_, A_, S_,
                                               cfg_.hidden_dim, cfg_.mixer_embed, rng_tgt);
    target_store_.copy_values_from(online_store_);

    for (int e = 0; e < cfg_.num_envs; ++e)
      for (int i = 0; i < N_; ++i) stacker_.push(e, i, venv_.observations(e)[i]);
    running_return_.assign(cfg_.num_envs, 0.0);
  }

  double epsilon() const {
    const double frac =
        std::min(1.0, static_cast<double>(steps_) / static_cast<double>(cfg_.eps_anneal_steps));
    return cfg_.eps_start + (cfg_.eps_end - cfg_.eps_start) * frac;
  }

  // One vectorized environment step plus (when the replay holds a batch)
  // one TD update.
  IterationMetrics iterate() {
    IterationMetrics m;
    const int E = cfg_.num_envs;
    const double eps = epsilon();

    std::vector<double> qvals(static_cast<std::size_t>(E) * N_ * A_);
    std::vector<double> states(static_cast<std::size_t>(E) * S_);
    std::vector<double> obs(static_cast<std::size_t>(E) * N_ * obs_in_);
    {
      Tape t;
      std::vector<double> xin(static_cast<std::size_t>(E) * N_ * obs_in_);
      for (int e = 0; e < E; ++e) {
        const auto& st = venv_.state(e);
        std::copy(st.begin(), st.end(), &states[static_cast<std::size_t>(e) * S_]);
        for (int i = 0; i < N_; ++i)
          std::copy_n(stacker_.stacked(e, i), obs_in_,
                      &xin[(static_cast<std::size_t>(e) * N_ + i) * obs_in_]);
      }
      obs = xin;
      Var q = online_->agent_q(t, t.constant({E * N_, obs_in_}, std::move(xin)));
      qvals = t.data(q);
    }

    std::vector<std::vector<int>> joint(E, std::vector<int>(N_, 0));
    std::vector<int> actions(static_cast<std::size_t>(E) * N_);
    for (int e = 0; e < E; ++e)
      for (int i = 0; i < N_; ++i) {
        int a;
        if (draw_uniform(rng_action_) < eps)
          a = draw_int(rng_action_, A_);
        else
          a = nets::argmax_row(&qvals[(static_cast<std::size_t>(e) * N_ + i) * A_], A_);
        joint[e][i] = a;
        actions[static_cast<std::size_t>(e) * N_ + i] = a;
      }

    envs::VecStep step = venv_.step(joint);
    double return_sum = 0.0;
    long long completed = 0;
    for (int e = 0; e < E; ++e) {
      running_return_[e] += step.transitions[e].reward;
      if (step.episode_end[e]) {
        return_sum += running_return_[e];
        running_return_[e] = 0.0;
        ++completed;
        ++episodes_;
        for (int i = 0; i < N_; ++i) {
          stacker_.reset_slot(e, i);
          stacker_.push(e, i, venv_.observations(e)[i]);
        }
      } else {
        for (int i = 0; i < N_; ++i) stacker_.push(e, i, step.transitions[e].next_obs[i]);
      }
      push_replay(&states[static_cast<std::size_t>(e) * S_],
                  &obs[(static_cast<std::size_t>(e) * N_) * obs_in_],
                  &actions[static_cast<std::size_t>(e) * N_], step.transitions[e]);
    }
    steps_ += E;
    m.episodes_completed = completed;
    m.has_return = completed > 0;
    m.train_return = completed > 0 ? return_sum / completed : 0.0;

    if (replay_size_ >= cfg_.qmix_batch) m.loss_value = update();
    return m;
  }

  std::vector<MetricRow> run() {
    std::vector<MetricRow> rows;
    long long next_eval = cfg_.eval_every;
    while (steps_ < cfg_.total_steps) {
      IterationMetrics m = iterate();
      if (m.has_return) rows.push_back({steps_, episodes_, "train_return", m.train_return});
      rows.push_back({steps_, episodes_, "loss_value", m.loss_value});
      while (next_eval <= steps_) {
        rows.push_back({steps_, episodes_, "eval_return_mean", evaluate()});
        next_eval += cfg_.eval_every;
      }
    }
    return rows;
  }

  // Greedy decentralized execution: per-agent argmax of the utilities.
  double evaluate() const {
    envs::TeamGame env = envs::TeamGame::by_name(cfg_.env);
    double total = 0.0;
    for (int ep = 0; ep < cfg_.eval_episodes; ++ep) {
      auto [state, obs] = env.reset(static_cast<std::uint64_t>(ep));
      ObsStacker st(1, N_, env.obs_dim(), cfg_.stacked_frames);
      for (int i = 0; i < N_; ++i) st.push(0, i, obs[i]);
      double ret = 0.0;
      for (int h = 0; h < env.horizon(); ++h) {
        std::vector<int> joint(N_, 0);
        Tape t;
        std::vector<double> xin(static_cast<std::size_t>(N_) * obs_in_);
        for (int i = 0; i < N_; ++i) std::copy_n(st.stacked(0, i), obs_in_, &xin[i * obs_in_]);
        Var q = online_->agent_q(t, t.constant({N_, obs_in_}, std::move(xin)));
        for (int i = 0; i < N_; ++i)
          joint[i] = nets::argmax_row(&t.data(q)[static_cast<std::size_t>(i) * A_], A_);
        envs::Transition tr = env.step(joint);
        ret += tr.reward;
        if (tr.terminal) break;
        for (int i = 0; i < N_; ++i) st.push(0, i, tr.next_obs[i]);
      }
      total += ret;
    }
    return total / cfg_.eval_episodes;
  }

  void save_checkpoint(const std::string& path) const {
    save_params(online_store_, path);
  }
  void load_checkpoint(const std::string& path) {
    load_params(online_store_, path);
    target_store_.copy_values_from(online_store_);
  }

  const nets::QmixNets& online() const { return *online_; }
  ParamSet& params() { return online_store_; }
  long long steps() const { return steps_; }
  long long updates() const { return updates_; }

 private:
  void push_replay(const double* state, const double* obs_rows, const int* actions,
                   const envs::Transition& tr) {
    if (replay_.states.empty()) {
      const int cap = cfg_.qmix_buffer;
      replay_.states.assign(static_cast<std::size_t>(cap) * S_, 0.0);
      replay_.obs.assign(static_cast<std::size_t>(cap) * N_ * obs_in_, 0.0);
      replay_.actions.assign(static_cast<std::size_t>(cap) * N_, 0);
      replay_.rewards.assign(cap, 0.0);
      replay_.next_states.assign(static_cast<std::size_t>(cap) * S_, 0.0);
      replay_.next_obs.assign(static_cast<std::size_t>(cap) * N_ * obs_in_, 0.0);
      replay_.terminals.assign(cap, 0);
    }
    const int k = replay_head_;
    std::copy_n(state, S_, &replay_.states[static_cast<std::size_t>(k) * S_]);
    std::copy_n(obs_rows, static_cast<std::size_t>(N_) * obs_in_,
                &replay_.obs[static_cast<std::size_t>(k) * N_ * obs_in_]);
    std::copy_n(actions, N_, &replay_.actions[static_cast<std::size_t>(k) * N_]);
    replay_.rewards[k] = tr.reward;
    std::copy(tr.next_state.begin(), tr.next_state.end(),
              &replay_.next_states[static_cast<std::size_t>(k) * S_]);
    for (int i = 0; i < N_; ++i) {
      // Next observation stacked as the next step would see it.
      std::vector<double> frame(obs_in_, 0.0);
      std::copy_n(&replay_.obs[(static_cast<std::size_t>(k) * N_ + i) * obs_in_ +
                               venv_.env(0).obs_dim()],
                  obs_in_ - venv_.env(0).obs_dim(), frame.data());
      std::copy(tr.next_obs[i].begin(), tr.next_obs[i].end(),
                frame.data() + obs_in_ - venv_.env(0).obs_dim());
      std::copy(frame.begin(), frame.end(),
                &replay_.next_obs[(static_cast<std::size_t>(k) * N_ + i) * obs_in_]);
    }
    replay_.terminals[k] = tr.terminal ? 1 : 0;
    replay_head_ = (replay_head_ + 1) % cfg_.qmix_buffer;
    replay_size_ = std::min(replay_size_ + 1, cfg_.qmix_buffer);
  }

  double update() {
    algos::QmixBatch batch;
    batch.size = cfg_.qmix_batch;
    batch.n_agents = N_;
    batch.obs_dim = obs_in_;
    batch.state_dim = S_;
    batch.obs.resize(static_cast<std::size_t>(batch.size) * N_ * obs_in_);
    batch.actions.resize(static_cast<std::size_t>(batch.size) * N_);
    batch.states.resize(static_cast<std::size_t>(batch.size) * S_);
    batch.rewards.resize(batch.size);
    batch.next_obs.resize(static_cast<std::size_t>(batch.size) * N_ * obs_in_);
    batch.next_states.resize(static_cast<std::size_t>(batch.size) * S_);
    batch.terminals.resize(batch.size);
    for (int b = 0; b < batch.size; ++b) {
      const int k = draw_int(rng_replay_, replay_size_);
      std::copy_n(&replay_.states[static_cast<std::size_t>(k) * S_], S_,
                  &batch.states[static_cast<std::size_t>(b) * S_]);
      std::copy_n(&replay_.obs[static_cast<std::size_t>(k) * N_ * obs_in_],
                  static_cast<std::size_t>(N_) * obs_in_,
                  &batch.obs[static_cast<std::size_t>(b) * N_ * obs_in_]);
      std::copy_n(&replay_.actions[static_cast<std::size_t>(k) * N_], N_,
                  &batch.actions[static_cast<std::size_t>(b) * N_]);
      batch.rewards[b] = replay_.rewards[k];
      std::copy_n(&replay_.next_states[static_cast<std::size_t>(k) * S_], S_,
                  &batch.next_states[static_cast<std::size_t>(b) * S_]);
      std::copy_n(&replay_.next_obs[static_cast<std::size_t>(k) * N_ * obs_in_],
                  static_cast<std::size_t>(N_) * obs_in_,
                  &batch.next_obs[static_cast<std::size_t>(b) * N_ * obs_in_]);
      batch.terminals[b] = replay_.terminals[k];
    }

    Tape t;
    Var loss = algos::qmix_td_loss(t, *online_, *target_, batch, cfg_.hp.gamma);
    const double loss_v = t.value(loss);
    if (!std::isfinite(loss_v)) fail("qmix", "non-finite TD loss at step " + std::to_string(steps_));
    t.backward(loss);
    algos::clip_grad_norm(online_store_, 10.0);
    opt_.step(online_store_);
    online_store_.zero_grad();
    ++updates_;
    if (updates_ % cfg_.target_sync == 0) target_store_.copy_values_from(online_store_);
    return loss_v;
  }

  struct Replay {
    std::vector<double> states, obs, rewards, next_states, next_obs;
    std::vector<int> actions;
    std::vector<char> terminals;
  };

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  envs::VecEnv venv_;
  algos::Adam opt_;
  std::mt19937_64 rng_action_, rng_replay_;
  ObsStacker stacker_;
  ParamSet online_store_, target_store_;
  std::unique_ptr<nets::QmixNets> online_, target_;
  Replay replay_;
  int replay_head_ = 0, replay_size_ = 0;
  std::vector<double> running_return_;
  int N_ = 0, A_ = 0, S_ = 0, obs_in_ = 0;
  long long steps_ = 0, episodes_ = 0, updates_ = 0;
};

}  // namespace noisymarl::trainer
