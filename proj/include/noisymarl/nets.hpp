#pragma once

// Network definitions: MLP policies/critics, a single-layer GRU policy, and
// the QMIX utility + monotonic mixing networks. All weight matrices are
// orthogonally initialized with zero biases; the policy output layer is
// scaled by `gain`.

#include "noisymarl/gradcheck.hpp"
#include "noisymarl/rng.hpp"
#include "noisymarl/tape.hpp"

namespace noisymarl::nets {

using autodiff::Tape;
using autodiff::Var;

enum class Act { kTanh, kRelu };

inline Tensor orthogonal_tensor(int in, int out, double gain, std::mt19937_64& rng) {
  auto m = orthogonal_matrix(in, out, rng);
  if (gain != 1.0)
    for (double& v : m) v *= gain;
  return Tensor({in, out}, std::move(m));
}

// y = x @ W + b, bias broadcast over rows through a ones column.
inline Var affine(Tape& t, Var x, Parameter& w, Parameter& b) {
  Var rows = t.ones({t.shape(x)[0], 1});
  return t.add(t.matmul(x, t.param(w)), t.matmul(rows, t.param(b)));
}

// Fully connected net; widths = {in, hidden..., out}. With widths {in, out}
// it degenerates to a single affine map (used by the QMIX hypernetworks).
class MlpNet {
 public:
  MlpNet(ParamSet& store, std::string prefix, std::vector<int> widths, Act hidden,
         double out_gain, std::mt19937_64& rng, double hidden_gain = 1.0)
      : widths_(std::move(widths)), hidden_(hidden) {
    if (widths_.size() < 2) fail("MlpNet", "need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const bool last = l + 2 == widths_.size();
      const double gain = last ? out_gain : hidden_gain;
      ws_.push_back(&store.add(prefix + "/l" + std::to_string(l) + "/w",
                               orthogonal_tensor(widths_[l], widths_[l + 1], gain, rng)));
      bs_.push_back(&store.add(prefix + "/l" + std::to_string(l) + "/b",
                               Tensor::zeros({1, widths_[l + 1]})));
    }
  }

  Var forward(Tape& t, Var x) const {
    if (t.shape(x).size() != 2 || t.shape(x)[1] != widths_.front())
      fail("MlpNet::forward",
           "input " + shape_str(t.shape(x)) + ", expected (*, " +
               std::to_string(widths_.front()) + ")");
    Var h = x;
    for (std::size_t l = 0; l < ws_.size(); ++l) {
      h = affine(t, h, *ws_[l], *bs_[l]);
      if (l + 1 < ws_.size()) h = hidden_ == Act::kTanh ? t.tanh_(h) : t.relu(h);
    }
    return h;
  }

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }

 private:
  std::vector<int> widths_;
  Act hidden_;
  std::vector<Parameter*> ws_, bs_;
};

// One fc embed layer, a single GRU layer, one output fc. Hidden state is
// carried by the caller as plain data and reset to zeros at episode starts.
class GruPolicy {
 public:
  GruPolicy(ParamSet& store, std::string prefix, int in, int hidden, int out,
            double out_gain, std::mt19937_64& rng)
      : in_(in), hidden_(hidden), out_(out) {
    auto w = [&](const std::string& name, int r, int c, double gain = 1.0) {
      return &store.add(prefix + "/" + name, orthogonal_tensor(r, c, gain, rng));
    };
    auto b = [&](const std::string& name, int c) {
      return &store.add(prefix + "/" + name, Tensor::zeros({1, c}));
    };
    embed_w_ = w("embed/w", in, hidden);
    embed_b_ = b("embed/b", hidden);
    wxr_ = w("gru/wxr", hidden, hidden);
    whr_ = w("gru/whr", hidden, hidden);
    br_ = b("gru/br", hidden);
    wxz_ = w("gru/wxz", hidden, hidden);
    whz_ = w("gru/whz", hidden, hidden);
    bz_ = b("gru/bz", hidden);
    wxn_ = w("gru/wxn", hidden, hidden);
    whn_ = w("gru/whn", hidden, hidden);
    bxn_ = b("gru/bxn", hidden);
    bhn_ = b("gru/bhn", hidden);
    out_w_ = w("out/w", hidden, out, out_gain);
    out_b_ = b("out/b", out);
  }

  // x: (B, in), h: (B, hidden) -> logits (B, out); h_new written through.
  Var step(Tape& t, Var x, Var h, Var* h_new) const {
    if (t.shape(x)[1] != in_) fail("GruPolicy::step", "input " + shape_str(t.shape(x)));
    Var e = t.tanh_(affine(t, x, *embed_w_, *embed_b_));
    Var rows = t.ones({t.shape(x)[0], 1});
    auto gate = [&](Parameter& wx, Parameter& wh, Parameter& bgate) {
      return t.add(t.add(t.matmul(e, t.param(wx)), t.matmul(h, t.param(wh))),
                   t.matmul(rows, t.param(bgate)));
    };
    Var r = t.sigmoid(gate(*wxr_, *whr_, *br_));
    Var z = t.sigmoid(gate(*wxz_, *whz_, *bz_));
    Var cand_h = t.add(t.matmul(h, t.param(*whn_)), t.matmul(rows, t.param(*bhn_)));
    Var n = t.tanh_(t.add(t.add(t.matmul(e, t.param(*wxn_)), t.matmul(rows, t.param(*bxn_))),
                          t.mul(r, cand_h)));
    Var one_minus_z = t.sub(t.ones(t.shape(z)), z);
    Var h2 = t.add(t.mul(one_minus_z, n), t.mul(z, h));
    if (h_new) *h_new = h2;
    return t.add(t.matmul(h2, t.param(*out_w_)), t.matmul(rows, t.param(*out_b_)));
  }

  int in_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }
  int out_dim() const { return out_; }

 private:
  int in_, hidden_, out_;
  Parameter *embed_w_, *embed_b_;
  Parameter *wxr_, *whr_, *br_, *wxz_, *whz_, *bz_, *wxn_, *whn_, *bxn_, *bhn_;
  Parameter *out_w_, *out_b_;
};

// Centralized critic taking concat(state, noise); the concatenation order is
// fixed as (state, noise).
inline double value_forward_noisy(const MlpNet& net, const std::vector<double>& state,
                                  const std::vector<double>& noise) {
  if (static_cast<int>(state.size() + noise.size()) != net.in_dim())
    fail("value_forward_noisy",
         "state " + std::to_string(state.size()) + " + noise " + std::to_string(noise.size()) +
             " != input dim " + std::to_string(net.in_dim()));
  Tape t;
  Var s = t.constant({1, static_cast<int>(state.size())}, state);
  Var x = t.constant({1, static_cast<int>(noise.size())}, noise);
  Var v = net.forward(t, t.concat_cols(s, x));
  return t.value(v);
}

// Per-agent utility network plus the monotonic mixer. The mixing weights are
// produced by single-layer state-conditioned hypernetworks and passed
// through |.|, so dQ_tot/dQ_i >= 0 for every parameter value.
class QmixNets {
 public:
  QmixNets(ParamSet& store, int obs_dim, int n_agents, int n_actions, int state_dim,
           int hidden, int embed, std::mt19937_64& rng)
      : n_agents_(n_agents),
        embed_(embed),
        agent_(store, "qmix/agent", {obs_dim, hidden, n_actions}, Act::kRelu, 1.0, rng),
        hyper_w1_(store, "qmix/hyper_w1", {state_dim, n_agents * embed}, Act::kRelu, 1.0, rng),
        hyper_b1_(store, "qmix/hyper_b1", {state_dim, embed}, Act::kRelu, 1.0, rng),
        hyper_w2_(store, "qmix/hyper_w2", {state_dim, embed}, Act::kRelu, 1.0, rng),
        hyper_b2_(store, "qmix/hyper_b2", {state_dim, 1}, Act::kRelu, 1.0, rng) {}

  Var agent_q(Tape& t, Var obs_rows) const { return agent_.forward(t, obs_rows); }

  // q: (B, N) chosen-action utilities, state: (B, S) -> Q_tot (B, 1).
  Var mix(Tape& t, Var q, Var state) const {
    const int batch = t.shape(q)[0];
    if (t.shape(q)[1] != n_agents_) fail("QmixNets::mix", "utilities " + shape_str(t.shape(q)));

    Var w1 = t.abs_(hyper_w1_.forward(t, state));  // (B, N*E)
    // Replicate q across the embedding axis and reduce per embedding index
    // with constant 0/1 matrices, keeping everything batched.
    std::vector<double> rep(static_cast<std::size_t>(n_agents_) * n_agents_ * embed_, 0.0);
    for (int i = 0; i < n_agents_; ++i)
      for (int e = 0; e < embed_; ++e) rep[i * (n_agents_ * embed_) + i * embed_ + e] = 1.0;
    Var q_rep = t.matmul(q, t.constant({n_agents_, n_agents_ * embed_}, std::move(rep)));
    std::vector<double> red(static_cast<std::size_t>(n_agents_) * embed_ * embed_, 0.0);
    for (int i = 0; i < n_agents_; ++i)
      for (int e = 0; e < embed_; ++e) red[(i * embed_ + e) * embed_ + e] = 1.0;
    Var pre = t.matmul(t.mul(w1, q_rep), t.constant({n_agents_ * embed_, embed_}, std::move(red)));

    Var hidden = t.elu(t.add(pre, hyper_b1_.forward(t, state)));
    Var w2 = t.abs_(hyper_w2_.forward(t, state));  // (B, E)
    Var contrib = t.matmul(t.mul(hidden, w2), t.ones({embed_, 1}));
    (void)batch;
    return t.add(contrib, hyper_b2_.forward(t, state));
  }

  int n_agents() const { return n_agents_; }

 private:
  int n_agents_, embed_;
  MlpNet agent_, hyper_w1_, hyper_b1_, hyper_w2_, hyper_b2_;
};

// Q_tot for one sample from chosen-action utilities.
inline double qmix_forward(const QmixNets& nets, const std::vector<double>& utilities,
                           const std::vector<double>& state) {
  Tape t;
  Var q = t.constant({1, static_cast<int>(utilities.size())}, utilities);
  Var s = t.constant({1, static_cast<int>(state.size())}, state);
  return t.value(nets.mix(t, q, s));
}

inline int argmax_row(const double* row, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

}  // namespace noisymarl::nets
