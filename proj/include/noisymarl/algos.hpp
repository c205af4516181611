#pragma once

// Estimators and losses shared by the training variants: GAE(lambda),
// batch advantage normalization, the clipped surrogate with entropy bonus,
// value regression, the per-agent noise machinery, the QMIX TD loss, and a
// standard first/second-moment adaptive optimizer.

#include "noisymarl/nets.hpp"
#include "noisymarl/rng.hpp"

namespace noisymarl::algos {

using autodiff::Tape;
using autodiff::Var;

struct HyperParams {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double alpha = 0.05;
  double lr = 5e-4;
  int epochs = 10;
  int minibatches = 1;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) fail("HyperParams", "gamma must be in [0,1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("HyperParams", "lambda must be in [0,1]");
    if (!(clip > 0.0)) fail("HyperParams", "clip must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("HyperParams", "alpha must be in [0,1]");
    if (epochs < 1 || minibatches < 1) fail("HyperParams", "epochs/minibatches must be >= 1");
  }
};

// Per-agent noise: vectors x_i ~ N(0, sigma^2) for the noisy-value variants
// and unit-variance scalars for the noisy-advantage variant, both drawn once
// at run start. Shuffling permutes only the agent-to-vector assignment.
class NoiseBank {
 public:
  NoiseBank(int n_agents, int noise_dim, double sigma, long long shuffle_interval,
            std::uint64_t seed)
      : sigma_(sigma),
        interval_(shuffle_interval),
        rng_(make_rng(seed, RngStream::kNoise)),
        vecs_(n_agents, std::vector<double>(noise_dim)),
        scalars_(n_agents),
        perm_(n_agents) {
    for (auto& v : vecs_)
      for (double& x : v) x = sigma_ * draw_normal(rng_);
    for (double& x : scalars_) x = draw_normal(rng_);
    for (int i = 0; i < n_agents; ++i) perm_[i] = i;
  }

  const std::vector<double>& vec(int agent) const { return vecs_[perm_[agent]]; }
  double scalar_noise(int agent) const { return scalars_[perm_[agent]]; }

  int agents() const { return static_cast<int>(vecs_.size()); }
  int dim() const { return vecs_.empty() ? 0 : static_cast<int>(vecs_[0].size()); }
  double sigma() const { return sigma_; }
  long long interval() const { return interval_; }
  const std::vector<int>& permutation() const { return perm_; }

  // Shuffles exactly at nonzero multiples of the interval; an interval <= 0
  // means never (the fixed-noise default).
  void maybe_shuffle(long long episode_counter) {
    if (interval_ <= 0 || episode_counter <= 0) return;
    if (episode_counter % interval_ != 0) return;
    std::shuffle(perm_.begin(), perm_.end(), rng_);
  }

  void resample_scalars() {
    for (double& x : scalars_) x = draw_normal(rng_);
  }

 private:
  double sigma_;
  long long interval_;
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> vecs_;
  std::vector<double> scalars_;
  std::vector<int> perm_;
};

inline void shuffle_noise(NoiseBank& bank, long long episode_counter) {
  bank.maybe_shuffle(episode_counter);
}

// delta_t = r_t + gamma * v_{t+1} * (1 - term_t) - v_t
// A_t     = delta_t + gamma * lambda * (1 - term_t) * A_{t+1}, base 0.
inline std::vector<double> compute_gae(const std::vector<double>& rewards,
                                       const std::vector<double>& values,
                                       const std::vector<char>& terminals, double gamma,
                                       double lambda) {
  const std::size_t steps = rewards.size();
  if (values.size() != steps + 1)
    fail("compute_gae", "need one bootstrap value: got " + std::to_string(values.size()) +
                            " values for " + std::to_string(steps) + " rewards");
  if (terminals.size() != steps)
    fail("compute_gae", "terminal flags length " + std::to_string(terminals.size()) +
                            " != rewards length " + std::to_string(steps));
  std::vector<double> adv(steps, 0.0);
  double acc = 0.0;
  for (std::size_t t = steps; t-- > 0;) {
    const double nonterm = terminals[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t];
    acc = delta + gamma * lambda * nonterm * acc;
    adv[t] = acc;
  }
  return adv;
}

// In-place whole-batch normalization to mean 0, denominator std + 1e-8.
inline void normalize_advantages(std::vector<double>& batch) {
  if (batch.empty()) fail("normalize_advantages", "empty batch");
  double mean = 0.0;
  for (double v : batch) mean += v;
  mean /= static_cast<double>(batch.size());
  double var = 0.0;
  for (double v : batch) var += (v - mean) * (v - mean);
  var /= static_cast<double>(batch.size());
  const double denom = std::sqrt(var) + 1e-8;
  for (double& v : batch) v = (v - mean) / denom;
}

// A_b^i = (1 - alpha) * A_b + alpha * x^i, agent-inner layout.
inline void na_mix(std::vector<double>& advantages, const std::vector<double>& noise_scalars,
                   double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("na_mix", "alpha must be in [0,1]");
  const std::size_t n_agents = noise_scalars.size();
  if (n_agents == 0 || advantages.size() % n_agents != 0)
    fail("na_mix", "batch size not a multiple of agent count");
  for (std::size_t k = 0; k < advantages.size(); ++k)
    advantages[k] = (1.0 - alpha) * advantages[k] + alpha * noise_scalars[k % n_agents];
}

// Clipped-surrogate objective (to be maximized; the trainer negates it).
// Old log-probs and advantages must be constants recorded at collection.
inline Var ppo_clip_objective(Tape& t, Var logp_new, Var logp_old, Var advantages,
                              double epsilon) {
  if (!t.is_leaf(logp_old) || !t.is_leaf(advantages))
    fail("ppo_clip_objective", "old log-probs and advantages must be detached constants");
  Var ratio = t.exp_(t.sub(logp_new, logp_old));
  const auto& r = t.data(ratio);
  for (std::size_t i = 0; i < r.size(); ++i)
    if (!std::isfinite(r[i]))
      fail("ppo_clip_objective",
           "non-finite ratio at index " + std::to_string(i) + " (logp_new " +
               std::to_string(t.data(logp_new)[i]) + ", logp_old " +
               std::to_string(t.data(logp_old)[i]) + ")");
  Var surr = t.mul(ratio, advantages);
  Var clipped = t.mul(t.clip(ratio, 1.0 - epsilon, 1.0 + epsilon), advantages);
  return t.mean(t.minimum(surr, clipped));
}

inline double clip_fraction(const std::vector<double>& ratios, double epsilon) {
  std::size_t n = 0;
  for (double r : ratios)
    if (r < 1.0 - epsilon || r > 1.0 + epsilon) ++n;
  return ratios.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(ratios.size());
}

// Plain policy-gradient surrogate mean(log pi * A), the no-ratio baseline.
inline Var pg_objective(Tape& t, Var logp_new, Var advantages) {
  if (!t.is_leaf(advantages)) fail("pg_objective", "advantages must be detached constants");
  return t.mean(t.mul(logp_new, advantages));
}

// Mean Shannon entropy (nats) of the softmax distributions of a logits batch.
inline Var entropy_bonus(Tape& t, Var logits) {
  const int rows = t.shape(logits).size() == 2 ? t.shape(logits)[0] : 1;
  Var p = t.softmax(logits);
  Var lp = t.log_softmax(logits);
  return t.scale(t.neg(t.sum(t.mul(p, lp))), 1.0 / static_cast<double>(rows));
}

inline double entropy_nats(const double* probs, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

// Mean squared error against fixed return targets.
inline Var value_loss(Tape& t, Var values, Var returns) {
  if (!t.is_leaf(returns)) fail("value_loss", "returns must be detached constants");
  if (t.shape(values) != t.shape(returns))
    fail("value_loss",
         "shapes " + shape_str(t.shape(values)) + " vs " + shape_str(t.shape(returns)));
  return t.mean(t.square(t.sub(values, returns)));
}

struct QmixBatch {
  int size = 0;
  int n_agents = 0;
  int obs_dim = 0;
  int state_dim = 0;
  std::vector<double> obs;         // [b][agent][obs_dim]
  std::vector<int> actions;        // [b][agent]
  std::vector<double> states;      // [b][state_dim]
  std::vector<double> rewards;     // [b]
  std::vector<double> next_obs;    // [b][agent][obs_dim]
  std::vector<double> next_states; // [b][state_dim]
  std::vector<char> terminals;     // [b]
};

// One-step TD loss on Q_tot with a periodically synced target network:
// y = r + gamma * (1 - term) * Q_tot^target(s', argmax per-agent target Q).
inline Var qmix_td_loss(Tape& t, const nets::QmixNets& online, const nets::QmixNets& target,
                        const QmixBatch& batch, double gamma) {
  const int b = batch.size, n = batch.n_agents, od = batch.obs_dim;

  // Target side needs no gradients; evaluate on a scratch tape.
  std::vector<double> targets(b);
  {
    Tape scratch;
    std::vector<double> chosen(static_cast<std::size_t>(b) * n);
    for (int i = 0; i < n; ++i) {
      std::vector<double> rows(static_cast<std::size_t>(b) * od);
      for (int k = 0; k < b; ++k)
        std::copy_n(&batch.next_obs[(static_cast<std::size_t>(k) * n + i) * od], od,
                    &rows[static_cast<std::size_t>(k) * od]);
      Var q = target.agent_q(scratch, scratch.constant({b, od}, std::move(rows)));
      const auto& qd = scratch.data(q);
      const int actions_n = static_cast<int>(qd.size()) / b;
      for (int k = 0; k < b; ++k)
        chosen[static_cast<std::size_t>(k) * n + i] =
            qd[static_cast<std::size_t>(k) * actions_n +
               nets::argmax_row(&qd[static_cast<std::size_t>(k) * actions_n], actions_n)];
    }
    Var qtot = target.mix(scratch, scratch.constant({b, n}, std::move(chosen)),
                          scratch.constant({b, batch.state_dim}, batch.next_states));
    const auto& qt = scratch.data(qtot);
    for (int k = 0; k < b; ++k)
      targets[k] = batch.rewards[k] + gamma * (batch.terminals[k] ? 0.0 : 1.0) * qt[k];
  }

  Var q_cols;
  for (int i = 0; i < n; ++i) {
    std::vector<double> rows(static_cast<std::size_t>(b) * od);
    std::vector<int> acts(b);
    for (int k = 0; k < b; ++k) {
      std::copy_n(&batch.obs[(static_cast<std::size_t>(k) * n + i) * od], od,
                  &rows[static_cast<std::size_t>(k) * od]);
      acts[k] = batch.actions[static_cast<std::size_t>(k) * n + i];
    }
    Var q = online.agent_q(t, t.constant({b, od}, std::move(rows)));
    Var col = t.gather(q, std::move(acts));
    q_cols = i == 0 ? col : t.concat_cols(q_cols, col);
  }
  Var qtot = online.mix(t, q_cols, t.constant({b, batch.state_dim}, batch.states));
  Var y = t.constant({b, 1}, targets);
  return t.mean(t.square(t.sub(qtot, y)));
}

// Global-norm gradient clipping; returns the pre-clip norm.
inline double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.count(); ++i)
    for (double g : params[i].grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scl = max_norm / norm;
    for (std::size_t i = 0; i < params.count(); ++i)
      for (double& g : params[i].grad) g *= scl;
  }
  return norm;
}

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamSet& params) {
    if (m_.empty()) {
      m_.resize(params.count());
      v_.resize(params.count());
      for (std::size_t i = 0; i < params.count(); ++i) {
        m_[i].assign(params[i].value.size(), 0.0);
        v_[i].assign(params[i].value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.count(); ++i) {
      Parameter& p = params[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * g;
        v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * g * g;
        p.value.data[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace noisymarl::algos
