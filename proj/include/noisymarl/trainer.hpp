#pragma once

// The experiment engine: rollout collection, epoch/minibatch PPO-family
// updates, the QMIX baseline, greedy evaluation, and multi-seed run
// orchestration with CSV metrics.
//
// All PPO-family variants share one update path. Values are always stored
// per (env, agent); the variants differ only in what feeds the critic
// (central state vs own observation, plus a per-agent noise vector or a
// zero pad) and in whether advantages are noise-mixed. That keeps the
// degeneracy contracts exact: na-mappo(alpha=0) and nv-mappo(sigma=0)
// reproduce vanilla mappo bit for bit under the same seed.

#include <memory>

#include "noisymarl/buffer.hpp"
#include "noisymarl/config.hpp"
#include "noisymarl/envs.hpp"

namespace noisymarl::trainer {

using autodiff::Tape;
using autodiff::Var;

namespace detail {

// Mirrors the tape's stable log-softmax so collection-time log-probs agree
// with training-time recomputation.
inline void row_log_softmax(const double* in, int n, double* out) {
  double mx = in[0];
  for (int c = 1; c < n; ++c) mx = std::max(mx, in[c]);
  double z = 0.0;
  for (int c = 0; c < n; ++c) z += std::exp(in[c] - mx);
  const double lz = std::log(z) + mx;
  for (int c = 0; c < n; ++c) out[c] = in[c] - lz;
}

}  // namespace detail

// Policy networks: shared across agents by default, optionally one per
// agent; MLP or single-layer GRU.
class PolicyHandle {
 public:
  PolicyHandle(const ExperimentConfig& cfg, int obs_in, int n_actions, int n_agents,
               std::mt19937_64& rng)
      : rnn_(cfg.network == "rnn"), owners_(cfg.per_agent_params ? n_agents : 1) {
    for (int o = 0; o < owners_; ++o) {
      const std::string prefix = owners_ == 1 ? "policy" : "policy" + std::to_string(o);
      if (rnn_)
        grus_.emplace_back(params_, prefix, obs_in, cfg.hidden_dim, n_actions, cfg.gain, rng);
      else
        mlps_.emplace_back(params_, prefix,
                           std::vector<int>{obs_in, cfg.hidden_dim, cfg.hidden_dim, n_actions},
                           nets::Act::kTanh, cfg.gain, rng);
    }
  }

  bool rnn() const { return rnn_; }
  int owners() const { return owners_; }
  int owner_of(int agent) const { return owners_ == 1 ? 0 : agent; }
  Var forward_mlp(Tape& t, int owner, Var rows) const { return mlps_[owner].forward(t, rows); }
  Var step_rnn(Tape& t, int owner, Var rows, Var h, Var* h_new) const {
    return grus_[owner].step(t, rows, h, h_new);
  }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  bool rnn_;
  int owners_;
  ParamSet params_;
  std::vector<nets::MlpNet> mlps_;
  std::vector<nets::GruPolicy> grus_;
};

// Critic networks (always MLP); input = basis (+ noise or zero pad).
class ValueHandle {
 public:
  ValueHandle(const ExperimentConfig& cfg, int in_dim, int n_agents, std::mt19937_64& rng)
      : owners_(cfg.per_agent_params ? n_agents : 1) {
    for (int o = 0; o < owners_; ++o) {
      const std::string prefix = owners_ == 1 ? "value" : "value" + std::to_string(o);
      mlps_.emplace_back(params_, prefix,
                         std::vector<int>{in_dim, cfg.hidden_dim, cfg.hidden_dim, 1},
                         nets::Act::kRelu, 1.0, rng, std::sqrt(2.0));
    }
  }
  int owners() const { return owners_; }
  int owner_of(int agent) const { return owners_ == 1 ? 0 : agent; }
  Var forward(Tape& t, int owner, Var rows) const { return mlps_[owner].forward(t, rows); }
  const nets::MlpNet& net(int owner) const { return mlps_[owner]; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  int owners_;
  ParamSet params_;
  std::vector<nets::MlpNet> mlps_;
};

struct CollectResult {
  RolloutBuffer buffer;
  double policy_entropy = 0.0;
  double value_std_agents = 0.0;
  double train_return = 0.0;
  long long episodes_completed = 0;
};

class PpoTrainer {
 public:
  PpoTrainer(ExperimentConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        seed_(seed),
        venv_(cfg_.env, cfg_.num_envs, seed),
        nv_(algo_is_nv(cfg_.algo)),
        na_(algo_is_na(cfg_.algo)),
        mapg_(algo_is_mapg(cfg_.algo)),
        central_(algo_uses_central_state(cfg_.algo)),
        bank_(venv_.env(0).n_agents(), cfg_.noise_dim, nv_ ? cfg_.sigma : 0.0,
              cfg_.shuffle_interval, seed),
        opt_policy_(cfg_.hp.lr),
        opt_value_(cfg_.hp.lr),
        rng_action_(make_rng(seed, RngStream::kAction)),
        rng_shuffle_(make_rng(seed, RngStream::kShuffle)),
        stacker_(cfg_.num_envs, venv_.env(0).n_agents(), venv_.env(0).obs_dim(),
                 cfg_.stacked_frames) {
    const envs::TeamGame& spec = venv_.env(0);
    N_ = spec.n_agents();
    A_ = spec.n_actions();
    S_ = spec.state_dim();
    obs_in_ = stacker_.width();
    extra_dim_ = nv_ ? cfg_.noise_dim : cfg_.value_input_pad;
    v_in_ = (central_ ? S_ : obs_in_) + extra_dim_;

    auto rng_init = make_rng(seed, RngStream::kInit);
    policy_ = std::make_unique<PolicyHandle>(cfg_, obs_in_, A_, N_, rng_init);
    value_ = std::make_unique<ValueHandle>(cfg_, v_in_, N_, rng_init);

    if (policy_->rnn()) hidden_.assign(static_cast<std::size_t>(cfg_.num_envs) * N_ * cfg_.hidden_dim, 0.0);
    for (int e = 0; e < cfg_.num_envs; ++e)
      for (int i = 0; i < N_; ++i) stacker_.push(e, i, venv_.observations(e)[i]);
    running_return_.assign(cfg_.num_envs, 0.0);
  }


  // --- rollout collection -------------------------------------------------

  CollectResult collect() {
    const int T = cfg_.buffer_length, E = cfg_.num_envs;
    CollectResult out;
    RolloutBuffer& buf = out.buffer;
    buf.alloc(T, E, N_, obs_in_, S_, policy_->rnn() ? cfg_.hidden_dim : 0);
    if (policy_->rnn()) buf.h0 = hidden_;

    double entropy_sum = 0.0, vstd_sum = 0.0, return_sum = 0.0;
    long long completed = 0;

    for (int t = 0; t < T; ++t) {
      for (int e = 0; e < E; ++e) {
        const auto& st = venv_.state(e);
        std::copy(st.begin(), st.end(), buf.state_row(t, e));
        for (int i = 0; i < N_; ++i)
          std::copy_n(stacker_.stacked(e, i), obs_in_, buf.obs_row(t, e, i));
      }

      std::vector<double> logits(static_cast<std::size_t>(E) * N_ * A_);
      forward_policy_rows(buf, t, &logits);

      std::vector<std::vector<int>> joint(E, std::vector<int>(N_, 0));
      std::vector<double> lsm(A_), probs(A_);
      for (int e = 0; e < E; ++e)
        for (int i = 0; i < N_; ++i) {
          const double* row = &logits[(static_cast<std::size_t>(e) * N_ + i) * A_];
          detail::row_log_softmax(row, A_, lsm.data());
          for (int a = 0; a < A_; ++a) probs[a] = std::exp(lsm[a]);
          const int a = sample_categorical(probs.data(), A_, draw_uniform(rng_action_));
          joint[e][i] = a;
          buf.actions[buf.ea(t, e, i)] = a;
          buf.logp[buf.ea(t, e, i)] = lsm[a];
          entropy_sum += algos::entropy_nats(probs.data(), A_);
        }

      forward_values_into(buf, t);
      for (int e = 0; e < E; ++e) {
        double m = 0.0;
        for (int i = 0; i < N_; ++i) m += buf.values[buf.ea(t, e, i)];
        m /= N_;
        double var = 0.0;
        for (int i = 0; i < N_; ++i) {
          const double d = buf.values[buf.ea(t, e, i)] - m;
          var += d * d;
        }
        vstd_sum += std::sqrt(var / N_);
      }

      envs::VecStep step = venv_.step(joint);
      for (int e = 0; e < E; ++e) {
        buf.rewards[buf.te(t, e)] = step.transitions[e].reward;
        buf.terminals[buf.te(t, e)] = step.episode_end[e];
        running_return_[e] += step.transitions[e].reward;
        if (step.episode_end[e]) {
          return_sum += running_return_[e];
          running_return_[e] = 0.0;
          ++completed;
          for (int i = 0; i < N_; ++i) {
            stacker_.reset_slot(e, i);
            stacker_.push(e, i, venv_.observations(e)[i]);
          }
          if (policy_->rnn())
            std::fill_n(&hidden_[(static_cast<std::size_t>(e) * N_) * cfg_.hidden_dim],
                        static_cast<std::size_t>(N_) * cfg_.hidden_dim, 0.0);
        } else {
          for (int i = 0; i < N_; ++i) stacker_.push(e, i, step.transitions[e].next_obs[i]);
        }
      }
    }

    fill_bootstrap(buf);

    steps_ += static_cast<long long>(T) * E;
    out.policy_entropy = entropy_sum / (static_cast<double>(T) * E * N_);
    out.value_std_agents = vstd_sum / (static_cast<double>(T) * E);
    out.episodes_completed = completed;
    out.train_return = completed > 0 ? return_sum / static_cast<double>(completed) : 0.0;
    return out;
  }

  // --- one training iteration over a full buffer --------------------------

  IterationMetrics train_iteration(const RolloutBuffer& buf) {
    const int T = buf.T, E = buf.E;
    const std::size_t rows_total = static_cast<std::size_t>(T) * E * N_;

    std::vector<double> adv(rows_total, 0.0), ret(rows_total, 0.0);
    compute_targets(buf, &adv, &ret);
    if (cfg_.value_norm) {
      vn_update(ret);
      const double m = vn_mean(), s = vn_std();
      for (double& t : ret) t = (t - m) / s;
    }
    algos::normalize_advantages(adv);
    if (na_) {
      if (cfg_.na_resample_per_iteration && iters_ > 0) bank_.resample_scalars();
      std::vector<double> scalars(N_);
      for (int i = 0; i < N_; ++i) scalars[i] = bank_.scalar_noise(i);
      algos::na_mix(adv, scalars, cfg_.hp.alpha);
    }
    last_advantages_ = adv;

    IterationMetrics m;
    std::vector<std::size_t> samples(static_cast<std::size_t>(T) * E);
    for (std::size_t s = 0; s < samples.size(); ++s) samples[s] = s;

    const int n_mb = cfg_.hp.minibatches;
    double lp_sum = 0.0, lv_sum = 0.0, cf_sum = 0.0;
    int mb_count = 0;

    for (int epoch = 0; epoch < cfg_.hp.epochs; ++epoch) {
      std::shuffle(samples.begin(), samples.end(), rng_shuffle_);
      for (int mb = 0; mb < n_mb; ++mb) {
        const std::size_t lo = samples.size() * mb / n_mb;
        const std::size_t hi = samples.size() * (mb + 1) / n_mb;
        if (lo == hi) continue;
        auto [lp, lv, cf] =
            update_minibatch(buf, adv, ret, std::vector<std::size_t>(samples.begin() + lo,
                                                                     samples.begin() + hi));
        lp_sum += lp;
        lv_sum += lv;
        cf_sum += cf;
        ++mb_count;
      }
    }
    ++iters_;
    m.loss_policy = lp_sum / mb_count;
    m.loss_value = lv_sum / mb_count;
    m.clip_fraction = cf_sum / mb_count;
    return m;
  }

  // Collect + train + noise-shuffle bookkeeping.
  IterationMetrics step_once() {
    CollectResult c = collect();
    IterationMetrics m = train_iteration(c.buffer);
    m.train_return = c.train_return;
    m.policy_entropy = c.policy_entropy;
    m.value_std_agents = c.value_std_agents;
    m.episodes_completed = c.episodes_completed;
    m.has_return = c.episodes_completed > 0;
    for (long long k = 0; k < c.episodes_completed; ++k) bank_.maybe_shuffle(++episodes_);
    return m;
  }

  // --- greedy evaluation (argmax, ties to the lowest action index) --------

  double evaluate() const {
    envs::TeamGame env = envs::TeamGame::by_name(cfg_.env);
    double total = 0.0;
    for (int ep = 0; ep < cfg_.eval_episodes; ++ep) total += play_greedy_episode(env, ep);
    return total / cfg_.eval_episodes;
  }

  std::vector<MetricRow> run() {
    std::vector<MetricRow> rows;
    long long next_eval = cfg_.eval_every;
    while (steps_ < cfg_.total_steps) {
      IterationMetrics m = step_once();
      if (m.has_return) rows.push_back({steps_, episodes_, "train_return", m.train_return});
      rows.push_back({steps_, episodes_, "policy_entropy", m.policy_entropy});
      rows.push_back({steps_, episodes_, "value_std_agents", m.value_std_agents});
      rows.push_back({steps_, episodes_, "loss_policy", m.loss_policy});
      rows.push_back({steps_, episodes_, "loss_value", m.loss_value});
      rows.push_back({steps_, episodes_, "clip_fraction", m.clip_fraction});
      while (next_eval <= steps_) {
        rows.push_back({steps_, episodes_, "eval_return_mean", evaluate()});
        next_eval += cfg_.eval_every;
      }
    }
    return rows;
  }

  void save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("save_checkpoint", "cannot open " + path);
    save_params(policy_->params(), os);
    save_params(value_->params(), os);
  }
  void load_checkpoint(const std::string& path) {
    load_params({&policy_->params(), &value_->params()}, path);
  }

  // Re-runs the policy over a recorded buffer (pre-update) and returns
  // log pi(a|obs) per entry; recurrent state is replayed from buf.h0.
  std::vector<double> recompute_logp(const RolloutBuffer& buf) {
    std::vector<double> saved_hidden = hidden_;
    if (policy_->rnn()) hidden_ = buf.h0;
    std::vector<double> out(buf.logp.size());
    std::vector<double> logits(static_cast<std::size_t>(buf.E) * N_ * A_);
    std::vector<double> lsm(A_);
    for (int t = 0; t < buf.T; ++t) {
      forward_policy_rows(buf, t, &logits);
      for (int e = 0; e < buf.E; ++e) {
        for (int i = 0; i < N_; ++i) {
          detail::row_log_softmax(&logits[(static_cast<std::size_t>(e) * N_ + i) * A_], A_,
                                  lsm.data());
          out[buf.ea(t, e, i)] = lsm[buf.actions[buf.ea(t, e, i)]];
        }
        if (policy_->rnn() && buf.terminals[buf.te(t, e)])
          std::fill_n(&hidden_[(static_cast<std::size_t>(e) * N_) * cfg_.hidden_dim],
                      static_cast<std::size_t>(N_) * cfg_.hidden_dim, 0.0);
      }
    }
    hidden_ = std::move(saved_hidden);
    return out;
  }

  ParamSet& policy_params() { return policy_->params(); }
  ParamSet& value_params() { return value_->params(); }
  const algos::NoiseBank& noise_bank() const { return bank_; }
  const std::vector<double>& last_advantages() const { return last_advantages_; }
  long long steps() const { return steps_; }
  long long episodes() const { return episodes_; }
  int n_agents() const { return N_; }

 private:
  // Running return-target normalization: the critic regresses normalized
  // targets and its outputs are denormalized wherever values enter
  // reward-scale computations (GAE, metrics). Running statistics are
  // recency-weighted debiased averages of the per-iteration target batches.
  double vn_mean() const {
    if (vn_count_ == 0.0) return 0.0;
    return vn_mean_acc_ / vn_count_;
  }
  double vn_std() const {
    if (vn_count_ == 0.0) return 1.0;
    const double m = vn_mean();
    const double var = std::max(0.0, vn_sq_acc_ / vn_count_ - m * m);
    return std::max(std::sqrt(var), 1e-6);
  }
  double denormalize_value(double v) const {
    if (!cfg_.value_norm) return v;
    return vn_mean() + vn_std() * v;
  }
  void vn_update(const std::vector<double>& targets) {
    if (!cfg_.value_norm) return;
    double m = 0.0, sq = 0.0;
    for (double t : targets) {
      m += t;
      sq += t * t;
    }
    m /= static_cast<double>(targets.size());
    sq /= static_cast<double>(targets.size());
    constexpr double kBeta = 0.99;
    vn_mean_acc_ = kBeta * vn_mean_acc_ + (1.0 - kBeta) * m;
    vn_sq_acc_ = kBeta * vn_sq_acc_ + (1.0 - kBeta) * sq;
    vn_count_ = kBeta * vn_count_ + (1.0 - kBeta);
  }

  // Policy logits for buffer row t, written into (E*N, A) row-major layout;
  // advances the recurrent hidden state.
  void forward_policy_rows(const RolloutBuffer& buf, int t, std::vector<double>* logits) {
    const int E = buf.E;
    Tape tape;
    for (int o = 0; o < policy_->owners(); ++o) {
      std::vector<std::pair<int, int>> rows;  // (e, i)
      for (int e = 0; e < E; ++e)
        for (int i = 0; i < N_; ++i)
          if (policy_->owner_of(i) == o) rows.emplace_back(e, i);
      std::vector<double> xin(rows.size() * obs_in_);
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(buf.obs_row(t, rows[r].first, rows[r].second), obs_in_, &xin[r * obs_in_]);
      Var x = tape.constant({static_cast<int>(rows.size()), obs_in_}, std::move(xin));
      Var out;
      if (policy_->rnn()) {
        std::vector<double> hin(rows.size() * cfg_.hidden_dim);
        for (std::size_t r = 0; r < rows.size(); ++r)
          std::copy_n(&hidden_[(static_cast<std::size_t>(rows[r].first) * N_ + rows[r].second) *
                               cfg_.hidden_dim],
                      cfg_.hidden_dim, &hin[r * cfg_.hidden_dim]);
        Var h = tape.constant({static_cast<int>(rows.size()), cfg_.hidden_dim}, std::move(hin));
        Var hn;
        out = policy_->step_rnn(tape, o, x, h, &hn);
        const auto& hd = tape.data(hn);
        for (std::size_t r = 0; r < rows.size(); ++r)
          std::copy_n(&hd[r * cfg_.hidden_dim], cfg_.hidden_dim,
                      &hidden_[(static_cast<std::size_t>(rows[r].first) * N_ + rows[r].second) *
                               cfg_.hidden_dim]);
      } else {
        out = policy_->forward_mlp(tape, o, x);
      }
      const auto& od = tape.data(out);
      for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(&od[r * A_], A_,
                    &(*logits)[(static_cast<std::size_t>(rows[r].first) * N_ + rows[r].second) * A_]);
    }
  }

  // Critic input for one (t, e, i): basis (state or own stacked obs) then
  // the agent's noise vector or zero pad, in that fixed order.
  void value_input_row(const RolloutBuffer& buf, int t, int e, int i, double* out) const {
    if (central_) {
      std::copy_n(buf.state_row(t, e), S_, out);
      write_extra(i, out + S_);
    } else {
      std::copy_n(buf.obs_row(t, e, i), obs_in_, out);
      write_extra(i, out + obs_in_);
    }
  }
  void write_extra(int i, double* out) const {
    if (nv_) {
      const auto& v = bank_.vec(i);
      std::copy(v.begin(), v.end(), out);
    } else {
      std::fill_n(out, extra_dim_, 0.0);
    }
  }

  void forward_values_into(RolloutBuffer& buf, int t) {
    const int E = buf.E;
    Tape tape;
    for (int o = 0; o < value_->owners(); ++o) {
      std::vector<std::pair<int, int>> rows;
      for (int e = 0; e < E; ++e)
        for (int i = 0; i < N_; ++i)
          if (value_->owner_of(i) == o) rows.emplace_back(e, i);
      std::vector<double> xin(rows.size() * v_in_);
      for (std::size_t r = 0; r < rows.size(); ++r)
        value_input_row(buf, t, rows[r].first, rows[r].second, &xin[r * v_in_]);
      Var v = value_->forward(tape, o, tape.constant({static_cast<int>(rows.size()), v_in_},
                                                     std::move(xin)));
      const auto& vd = tape.data(v);
      for (std::size_t r = 0; r < rows.size(); ++r)
        buf.values[buf.ea(t, rows[r].first, rows[r].second)] = denormalize_value(vd[r]);
    }
  }

  void fill_bootstrap(RolloutBuffer& buf) {
    const int T = buf.T, E = buf.E;
    std::vector<int> open;
    for (int e = 0; e < E; ++e)
      if (!buf.terminals[buf.te(T - 1, e)]) open.push_back(e);
    if (open.empty()) return;  // all episodes closed: bootstrap stays 0
    Tape tape;
    for (int o = 0; o < value_->owners(); ++o) {
      std::vector<std::pair<int, int>> rows;
      for (int e : open)
        for (int i = 0; i < N_; ++i)
          if (value_->owner_of(i) == o) rows.emplace_back(e, i);
      std::vector<double> xin(rows.size() * v_in_);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        double* out = &xin[r * v_in_];
        const int e = rows[r].first, i = rows[r].second;
        if (central_) {
          const auto& st = venv_.state(e);
          std::copy(st.begin(), st.end(), out);
          write_extra(i, out + S_);
        } else {
          std::copy_n(stacker_.stacked(e, i), obs_in_, out);
          write_extra(i, out + obs_in_);
        }
      }
      Var v = value_->forward(tape, o, tape.constant({static_cast<int>(rows.size()), v_in_},
                                                     std::move(xin)));
      const auto& vd = tape.data(v);
      for (std::size_t r = 0; r < rows.size(); ++r)
        buf.bootstrap[static_cast<std::size_t>(rows[r].first) * N_ + rows[r].second] =
            denormalize_value(vd[r]);
    }
  }

  void compute_targets(const RolloutBuffer& buf, std::vector<double>* adv,
                       std::vector<double>* ret) const {
    const int T = buf.T, E = buf.E;
    std::vector<double> r_series(T), v_series(T + 1);
    std::vector<char> t_series(T);
    for (int e = 0; e < E; ++e)
      for (int i = 0; i < N_; ++i) {
        for (int t = 0; t < T; ++t) {
          r_series[t] = buf.rewards[buf.te(t, e)];
          v_series[t] = buf.values[buf.ea(t, e, i)];
          t_series[t] = buf.terminals[buf.te(t, e)];
        }
        v_series[T] = buf.bootstrap[static_cast<std::size_t>(e) * N_ + i];
        std::vector<double> a =
            algos::compute_gae(r_series, v_series, t_series, cfg_.hp.gamma, cfg_.hp.gae_lambda);
        if (cfg_.return_mode == "gae") {
          for (int t = 0; t < T; ++t) {
            (*adv)[buf.ea(t, e, i)] = a[t];
            (*ret)[buf.ea(t, e, i)] = a[t] + v_series[t];
          }
        } else {
          double acc = v_series[T];
          std::vector<double> rr(T);
          for (int t = T - 1; t >= 0; --t) {
            acc = r_series[t] + cfg_.hp.gamma * (t_series[t] ? 0.0 : 1.0) * acc;
            rr[t] = acc;
          }
          for (int t = 0; t < T; ++t) {
            (*adv)[buf.ea(t, e, i)] = a[t];
            (*ret)[buf.ea(t, e, i)] = rr[t];
          }
        }
      }
  }

  // One minibatch update; returns (policy loss, value loss, clip fraction).
  std::tuple<double, double, double> update_minibatch(const RolloutBuffer& buf,
                                                      const std::vector<double>& adv,
                                                      const std::vector<double>& ret,
                                                      const std::vector<std::size_t>& mb) {
    const std::size_t M = mb.size() * N_;
    std::vector<std::size_t> flat(M);  // buffer (t,e,i) indices, sample-major agent-inner
    for (std::size_t s = 0; s < mb.size(); ++s)
      for (int i = 0; i < N_; ++i) flat[s * N_ + i] = mb[s] * N_ + i;

    Tape t;
    Var obj, ent, vl;
    std::vector<double> ratios;

    std::vector<double> old_v(M), adv_v(M), ret_v(M);
    std::vector<int> act_v(M);
    for (std::size_t r = 0; r < M; ++r) {
      old_v[r] = buf.logp[flat[r]];
      adv_v[r] = adv[flat[r]];
      ret_v[r] = ret[flat[r]];
      act_v[r] = buf.actions[flat[r]];
    }

    if (!policy_->rnn() && policy_->owners() == 1) {
      std::vector<double> xin(M * obs_in_);
      for (std::size_t r = 0; r < M; ++r)
        std::copy_n(&buf.obs[flat[r] * obs_in_], obs_in_, &xin[r * obs_in_]);
      Var logits = policy_->forward_mlp(t, 0, t.constant({static_cast<int>(M), obs_in_},
                                                         std::move(xin)));
      Var logp_new = t.gather(t.log_softmax(logits), act_v);
      Var logp_old = t.constant({static_cast<int>(M), 1}, old_v);
      Var advL = t.constant({static_cast<int>(M), 1}, adv_v);
      if (mapg_) {
        obj = algos::pg_objective(t, logp_new, advL);
      } else {
        obj = algos::ppo_clip_objective(t, logp_new, logp_old, advL, cfg_.hp.clip);
      }
      ent = algos::entropy_bonus(t, logits);
      const auto& ln = t.data(logp_new);
      ratios.resize(M);
      for (std::size_t r = 0; r < M; ++r) ratios[r] = std::exp(ln[r] - old_v[r]);
    } else {
      build_policy_pieces(t, buf, mb, flat, old_v, adv_v, act_v, &obj, &ent, &ratios);
    }

    if (value_->owners() == 1) {
      std::vector<double> xin(M * v_in_);
      for (std::size_t r = 0; r < M; ++r) {
        const std::size_t idx = flat[r];
        const int tt = static_cast<int>(idx / (static_cast<std::size_t>(buf.E) * N_));
        const int rem = static_cast<int>(idx % (static_cast<std::size_t>(buf.E) * N_));
        value_input_row(buf, tt, rem / N_, rem % N_, &xin[r * v_in_]);
      }
      Var v = value_->forward(t, 0, t.constant({static_cast<int>(M), v_in_}, std::move(xin)));
      vl = algos::value_loss(t, v, t.constant({static_cast<int>(M), 1}, ret_v));
    } else {
      vl = build_value_pieces(t, buf, flat, ret_v);
    }

    Var policy_term = t.neg(t.add(obj, t.scale(ent, cfg_.hp.entropy_coef)));
    Var total = t.add(policy_term, vl);
    const double total_v = t.value(total);
    if (!std::isfinite(total_v)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iters_ << ": objective " << t.value(obj)
         << ", entropy " << t.value(ent) << ", value loss " << t.value(vl);
      fail("train_iteration", os.str());
    }
    t.backward(total);

    algos::clip_grad_norm(policy_->params(), 10.0);
    algos::clip_grad_norm(value_->params(), 10.0);
    opt_policy_.step(policy_->params());
    opt_value_.step(value_->params());
    policy_->params().zero_grad();
    value_->params().zero_grad();

    return {t.value(policy_term), t.value(vl),
            mapg_ ? 0.0 : algos::clip_fraction(ratios, cfg_.hp.clip)};
  }

  // General path: recurrent nets walk episode chunks with truncated BPTT
  // (chunk = full episode); per-agent parameter sets contribute one piece
  // per owner. Objective/entropy are assembled as sums scaled by 1/M.
  void build_policy_pieces(Tape& t, const RolloutBuffer& buf, const std::vector<std::size_t>& mb,
                           const std::vector<std::size_t>& flat, const std::vector<double>& old_v,
                           const std::vector<double>& adv_v, const std::vector<int>& act_v,
                           Var* obj, Var* ent, std::vector<double>* ratios) {
    const std::size_t M = flat.size();
    std::vector<std::size_t> pos(buf.obs.size() / buf.obs_in, SIZE_MAX);
    for (std::size_t r = 0; r < M; ++r) pos[flat[r]] = r;

    Var surr_sum, ent_sum;
    ratios->assign(M, 1.0);

    auto add_piece = [&](Var logits, const std::vector<std::size_t>& rows) {
      std::vector<int> acts(rows.size());
      std::vector<double> old_p(rows.size()), adv_p(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        acts[r] = act_v[rows[r]];
        old_p[r] = old_v[rows[r]];
        adv_p[r] = adv_v[rows[r]];
      }
      Var logp_new = t.gather(t.log_softmax(logits), acts);
      Var advL = t.constant({static_cast<int>(rows.size()), 1}, adv_p);
      Var piece;
      if (mapg_) {
        piece = t.sum(t.mul(logp_new, advL));
      } else {
        Var oldL = t.constant({static_cast<int>(rows.size()), 1}, old_p);
        Var ratio = t.exp_(t.sub(logp_new, oldL));
        const auto& rd = t.data(ratio);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (!std::isfinite(rd[r])) fail("ppo_clip_objective", "non-finite ratio");
          (*ratios)[rows[r]] = rd[r];
        }
        Var clipped = t.mul(t.clip(ratio, 1.0 - cfg_.hp.clip, 1.0 + cfg_.hp.clip), advL);
        piece = t.sum(t.minimum(t.mul(ratio, advL), clipped));
      }
      Var ent_piece = t.neg(t.sum(t.mul(t.softmax(logits), t.log_softmax(logits))));
      surr_sum = surr_sum.valid() ? t.add(surr_sum, piece) : piece;
      ent_sum = ent_sum.valid() ? t.add(ent_sum, ent_piece) : ent_piece;
    };

    if (!policy_->rnn()) {
      for (int o = 0; o < policy_->owners(); ++o) {
        std::vector<std::size_t> rows;
        std::vector<std::size_t> bidx;
        for (std::size_t r = 0; r < M; ++r)
          if (policy_->owner_of(static_cast<int>(flat[r] % N_)) == o) {
            rows.push_back(r);
            bidx.push_back(flat[r]);
          }
        if (rows.empty()) continue;
        std::vector<double> xin(rows.size() * obs_in_);
        for (std::size_t r = 0; r < rows.size(); ++r)
          std::copy_n(&buf.obs[bidx[r] * obs_in_], obs_in_, &xin[r * obs_in_]);
        add_piece(policy_->forward_mlp(
                      t, o, t.constant({static_cast<int>(rows.size()), obs_in_}, std::move(xin))),
                  rows);
      }
    } else {
      // Episode chunks inside the minibatch samples, walked in time order.
      for (std::size_t s : mb) {
        const int e = static_cast<int>(s % buf.E);
        const int t0 = static_cast<int>(s / buf.E);
        // A chunk is owned by its first sample; skip continuation steps.
        if (t0 > 0 && !buf.terminals[buf.te(t0 - 1, e)]) continue;
        for (int o = 0; o < policy_->owners(); ++o) {
          std::vector<int> agents;
          for (int i = 0; i < N_; ++i)
            if (policy_->owner_of(i) == o) agents.push_back(i);
          std::vector<double> hin(agents.size() * cfg_.hidden_dim, 0.0);
          if (t0 == 0)
            for (std::size_t r = 0; r < agents.size(); ++r)
              std::copy_n(&buf.h0[(static_cast<std::size_t>(e) * N_ + agents[r]) * cfg_.hidden_dim],
                          cfg_.hidden_dim, &hin[r * cfg_.hidden_dim]);
          Var h = t.constant({static_cast<int>(agents.size()), cfg_.hidden_dim}, std::move(hin));
          for (int tt = t0; tt < buf.T; ++tt) {
            std::vector<double> xin(agents.size() * obs_in_);
            std::vector<std::size_t> rows;
            for (std::size_t r = 0; r < agents.size(); ++r) {
              std::copy_n(buf.obs_row(tt, e, agents[r]), obs_in_, &xin[r * obs_in_]);
              const std::size_t p = pos[buf.ea(tt, e, agents[r])];
              if (p == SIZE_MAX) fail("train_iteration", "recurrent chunk crosses minibatches");
              rows.push_back(p);
            }
            Var hn;
            Var logits = policy_->step_rnn(
                t, o, t.constant({static_cast<int>(agents.size()), obs_in_}, std::move(xin)), h,
                &hn);
            h = hn;
            add_piece(logits, rows);
            if (buf.terminals[buf.te(tt, e)]) break;
          }
        }
      }
    }
    *obj = t.scale(surr_sum, 1.0 / static_cast<double>(M));
    *ent = t.scale(ent_sum, 1.0 / static_cast<double>(M));
  }

  Var build_value_pieces(Tape& t, const RolloutBuffer& buf, const std::vector<std::size_t>& flat,
                         const std::vector<double>& ret_v) {
    Var vsum;
    const std::size_t M = flat.size();
    for (int o = 0; o < value_->owners(); ++o) {
      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < M; ++r)
        if (value_->owner_of(static_cast<int>(flat[r] % N_)) == o) rows.push_back(r);
      if (rows.empty()) continue;
      std::vector<double> xin(rows.size() * v_in_), targets(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t idx = flat[rows[r]];
        const int tt = static_cast<int>(idx / (static_cast<std::size_t>(buf.E) * N_));
        const int rem = static_cast<int>(idx % (static_cast<std::size_t>(buf.E) * N_));
        value_input_row(buf, tt, rem / N_, rem % N_, &xin[r * v_in_]);
        targets[r] = ret_v[rows[r]];
      }
      Var v = value_->forward(
          t, o, t.constant({static_cast<int>(rows.size()), v_in_}, std::move(xin)));
      Var piece = t.sum(t.square(t.sub(v, t.constant({static_cast<int>(rows.size()), 1},
                                                     std::move(targets)))));
      vsum = vsum.valid() ? t.add(vsum, piece) : piece;
    }
    return t.scale(vsum, 1.0 / static_cast<double>(M));
  }

  double play_greedy_episode(envs::TeamGame& env, int episode_index) const {
    auto [state, obs] = env.reset(static_cast<std::uint64_t>(episode_index));
    ObsStacker st(1, N_, env.obs_dim(), cfg_.stacked_frames);
    for (int i = 0; i < N_; ++i) st.push(0, i, obs[i]);
    std::vector<double> hidden;
    if (policy_->rnn()) hidden.assign(static_cast<std::size_t>(N_) * cfg_.hidden_dim, 0.0);
    double ret = 0.0;
    for (int step = 0; step < env.horizon(); ++step) {
      std::vector<int> joint(N_, 0);
      Tape t;
      for (int i = 0; i < N_; ++i) {
        std::vector<double> xin(st.stacked(0, i), st.stacked(0, i) + obs_in_);
        Var x = t.constant({1, obs_in_}, std::move(xin));
        Var logits;
        if (policy_->rnn()) {
          Var h = t.constant({1, cfg_.hidden_dim},
                             std::vector<double>(hidden.begin() + i * cfg_.hidden_dim,
                                                 hidden.begin() + (i + 1) * cfg_.hidden_dim));
          Var hn;
          logits = policy_->step_rnn(t, policy_->owner_of(i), x, h, &hn);
          const auto& hd = t.data(hn);
          std::copy(hd.begin(), hd.end(), hidden.begin() + i * cfg_.hidden_dim);
        } else {
          logits = policy_->forward_mlp(t, policy_->owner_of(i), x);
        }
        joint[i] = nets::argmax_row(t.data(logits).data(), A_);
      }
      envs::Transition tr = env.step(joint);
      ret += tr.reward;
      if (tr.terminal) break;
      for (int i = 0; i < N_; ++i) st.push(0, i, tr.next_obs[i]);
    }
    return ret;
  }

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  envs::VecEnv venv_;
  bool nv_, na_, mapg_, central_;
  algos::NoiseBank bank_;
  algos::Adam opt_policy_, opt_value_;
  std::mt19937_64 rng_action_, rng_shuffle_;
  ObsStacker stacker_;
  std::unique_ptr<PolicyHandle> policy_;
  std::unique_ptr<ValueHandle> value_;
  std::vector<double> hidden_;
  std::vector<double> running_return_;
  std::vector<double> last_advantages_;
  int N_ = 0, A_ = 0, S_ = 0, obs_in_ = 0, v_in_ = 0, extra_dim_ = 0;
  long long steps_ = 0, episodes_ = 0, iters_ = 0;
  double vn_mean_acc_ = 0.0, vn_sq_acc_ = 0.0, vn_count_ = 0.0;
};

}  // namespace noisymarl::trainer
