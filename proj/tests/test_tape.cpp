#include <catch2/catch_amalgamated.hpp>

#include "noisymarl/gradcheck.hpp"
#include "noisymarl/rng.hpp"
#include "noisymarl/tape.hpp"

using namespace noisymarl;
using autodiff::Tape;
using autodiff::Var;

namespace {

// Values away from relu/clip/min kinks by at least this margin, so central
// differences at h=1e-5 stay valid.
constexpr double kKinkMargin = 1e-3;

double nudged(double v, double kink) {
  if (std::abs(v - kink) < kKinkMargin) return v + (v >= kink ? 2.0 * kKinkMargin : -2.0 * kKinkMargin);
  return v;
}

std::vector<double> random_vec(std::mt19937_64& g, std::size_t n, double lo = -2.0,
                               double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = d(g);
  return out;
}

}  // namespace

TEST_CASE("matmul forward") {
  Tape t;
  Var a = t.constant({2, 2}, {1, 2, 3, 4});
  Var b = t.constant({2, 1}, {1, 1});
  Var c = t.matmul(a, b);
  CHECK(t.shape(c) == Shape{2, 1});
  CHECK(t.data(c) == std::vector<double>{3, 7});
}

TEST_CASE("clip clamps and zeroes the boundary gradient") {
  Tape t;
  ParamSet params;
  Parameter& w = params.add("w", Tensor::scalar(1.3));
  Var y = t.clip(t.param(w), 0.8, 1.2);
  CHECK(t.data(y)[0] == 1.2);
  t.backward(t.sum(y));
  CHECK(w.grad[0] == 0.0);
}

TEST_CASE("softmax of constant logits is uniform") {
  Tape t;
  Var y = t.softmax(t.constant({3}, {0, 0, 0}));
  for (double v : t.data(y)) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("backward of sum of squares") {
  ParamSet params;
  Parameter& w = params.add("w", Tensor({2}, {1, 2}));
  Tape t;
  t.backward(t.sum(t.square(t.param(w))));
  CHECK(w.grad == std::vector<double>{2, 4});
}

TEST_CASE("mean gradient spreads evenly") {
  ParamSet params;
  Parameter& x = params.add("x", Tensor({4}, {1, 2, 3, 4}));
  Tape t;
  t.backward(t.mean(t.param(x)));
  for (double g : x.grad) CHECK(g == 0.25);
}

TEST_CASE("gather selects and scatter-adds") {
  ParamSet params;
  Parameter& x = params.add("x", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Tape t;
  Var y = t.gather(t.param(x), {2, 0});
  CHECK(t.data(y) == std::vector<double>{3, 4});
  t.backward(t.sum(y));
  CHECK(x.grad == std::vector<double>{0, 0, 1, 1, 0, 0});
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  Var v = t.constant({2}, {1, 2});
  CHECK_THROWS_WITH(t.backward(v), Catch::Matchers::ContainsSubstring("scalar"));
}

TEST_CASE("shape mismatch names the op") {
  Tape t;
  Var a = t.constant({2}, {1, 2});
  Var b = t.constant({3}, {1, 2, 3});
  CHECK_THROWS_WITH(t.add(a, b), Catch::Matchers::ContainsSubstring("add"));
  CHECK_THROWS_WITH(t.matmul(a, b), Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("minimum ties route gradient to the first input") {
  ParamSet params;
  Parameter& a = params.add("a", Tensor::scalar(0.7));
  Parameter& b = params.add("b", Tensor::scalar(0.7));
  Tape t;
  t.backward(t.sum(t.minimum(t.param(a), t.param(b))));
  CHECK(a.grad[0] == 1.0);
  CHECK(b.grad[0] == 0.0);
}

TEST_CASE("every primitive matches central differences over 100 seeds") {
  const double h = 1e-5, tol = 1e-4;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = make_rng(seed, RngStream::kInit);

    // matmul + add + tanh chain
    {
      ParamSet p;
      Parameter& w = p.add("w", Tensor({3, 2}, random_vec(g, 6)));
      Parameter& b = p.add("b", Tensor({1, 2}, random_vec(g, 2)));
      Tensor x({2, 3}, random_vec(g, 6));
      auto build = [&](Tape& t) {
        Var h1 = t.tanh_(t.add(t.matmul(t.constant(x), t.param(w)),
                               t.matmul(t.ones({2, 1}), t.param(b))));
        return t.mean(t.square(h1));
      };
      auto rep = autodiff::finite_difference_check(p, build, h, tol);
      INFO("matmul/add/tanh seed " << seed << " err " << rep.max_rel_err);
      CHECK(rep.pass);
    }
    // sub, mul, neg, square, sum
    {
      ParamSet p;
      Parameter& a = p.add("a", Tensor({4}, random_vec(g, 4)));
      Parameter& b = p.add("b", Tensor({4}, random_vec(g, 4)));
      auto build = [&](Tape& t) {
        Var d = t.mul(t.sub(t.param(a), t.param(b)), t.neg(t.param(b)));
        return t.sum(t.square(d));
      };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // exp, log (positive inputs), mean
    {
      ParamSet p;
      Parameter& a = p.add("a", Tensor({5}, random_vec(g, 5, 0.2, 2.0)));
      auto build = [&](Tape& t) {
        return t.mean(t.add(t.exp_(t.scale(t.param(a), 0.3)), t.log_(t.param(a))));
      };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // relu away from the kink
    {
      ParamSet p;
      auto vals = random_vec(g, 6);
      for (double& v : vals) v = nudged(v, 0.0);
      Parameter& a = p.add("a", Tensor({6}, vals));
      auto build = [&](Tape& t) { return t.mean(t.square(t.relu(t.param(a)))); };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // clip away from both boundaries
    {
      ParamSet p;
      auto vals = random_vec(g, 6);
      for (double& v : vals) v = nudged(nudged(v, -0.5), 0.5);
      Parameter& a = p.add("a", Tensor({6}, vals));
      auto build = [&](Tape& t) { return t.mean(t.square(t.clip(t.param(a), -0.5, 0.5))); };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // minimum away from ties
    {
      ParamSet p;
      auto av = random_vec(g, 6);
      auto bv = random_vec(g, 6);
      for (std::size_t i = 0; i < av.size(); ++i) av[i] = nudged(av[i], bv[i]);
      Parameter& a = p.add("a", Tensor({6}, av));
      Parameter& b = p.add("b", Tensor({6}, bv));
      auto build = [&](Tape& t) {
        return t.mean(t.square(t.minimum(t.param(a), t.param(b))));
      };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // softmax, log-softmax, gather
    {
      ParamSet p;
      Parameter& a = p.add("a", Tensor({3, 4}, random_vec(g, 12)));
      std::vector<int> idx = {draw_int(g, 4), draw_int(g, 4), draw_int(g, 4)};
      auto build = [&](Tape& t) {
        Var lp = t.log_softmax(t.param(a));
        Var probs = t.softmax(t.param(a));
        return t.add(t.mean(t.gather(lp, idx)), t.mean(t.square(probs)));
      };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
    // concat-last-axis and broadcast-scalar
    {
      ParamSet p;
      Parameter& a = p.add("a", Tensor({2, 2}, random_vec(g, 4)));
      Parameter& b = p.add("b", Tensor({2, 3}, random_vec(g, 6)));
      Parameter& s = p.add("s", Tensor::scalar(random_vec(g, 1)[0]));
      auto build = [&](Tape& t) {
        Var cat = t.concat_cols(t.param(a), t.param(b));
        Var scaled = t.mul(cat, t.broadcast_scalar(t.param(s), t.shape(cat)));
        return t.mean(t.square(scaled));
      };
      CHECK(autodiff::finite_difference_check(p, build, h, tol).pass);
    }
  }
}

TEST_CASE("two-layer tanh MLP gradient matches finite differences") {
  auto g = make_rng(7, RngStream::kInit);
  ParamSet p;
  Parameter& w1 = p.add("w1", Tensor({4, 8}, random_vec(g, 32, -0.5, 0.5)));
  Parameter& b1 = p.add("b1", Tensor({1, 8}, random_vec(g, 8, -0.1, 0.1)));
  Parameter& w2 = p.add("w2", Tensor({8, 1}, random_vec(g, 8, -0.5, 0.5)));
  Parameter& b2 = p.add("b2", Tensor({1, 1}, random_vec(g, 1, -0.1, 0.1)));
  Tensor x({3, 4}, random_vec(g, 12));
  auto build = [&](Tape& t) {
    Var rows = t.ones({3, 1});
    Var h1 = t.tanh_(t.add(t.matmul(t.constant(x), t.param(w1)), t.matmul(rows, t.param(b1))));
    Var out = t.add(t.matmul(h1, t.param(w2)), t.matmul(rows, t.param(b2)));
    return t.mean(t.square(out));
  };
  auto rep = autodiff::finite_difference_check(p, build, 1e-5, 1e-4);
  INFO("max rel err " << rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("finite_difference_check on w^2 at w=3") {
  ParamSet p;
  Parameter& w = p.add("w", Tensor::scalar(3.0));
  auto build = [&](Tape& t) { return t.sum(t.square(t.param(w))); };
  auto rep = autodiff::finite_difference_check(p, build, 1e-5, 1e-6);
  CHECK(rep.pass);
  CHECK(w.grad[0] == Catch::Approx(6.0).margin(1e-9));
}

TEST_CASE("finite_difference_check rejects non-finite values") {
  ParamSet p;
  Parameter& w = p.add("w", Tensor::scalar(-1.0));
  auto build = [&](Tape& t) { return t.sum(t.log_(t.param(w))); };
  CHECK_THROWS_WITH(autodiff::finite_difference_check(p, build, 1e-5, 1e-4),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("backward is linear in the loss") {
  auto g = make_rng(11, RngStream::kInit);
  ParamSet p;
  Parameter& w = p.add("w", Tensor({3, 3}, random_vec(g, 9)));
  Tensor x({2, 3}, random_vec(g, 6));

  auto build1 = [&](Tape& t) { return t.mean(t.square(t.matmul(t.constant(x), t.param(w)))); };
  auto build2 = [&](Tape& t) { return t.sum(t.tanh_(t.matmul(t.constant(x), t.param(w)))); };

  p.zero_grad();
  {
    Tape t;
    t.backward(t.add(build1(t), build2(t)));
  }
  std::vector<double> combined = w.grad;

  p.zero_grad();
  {
    Tape t;
    t.backward(build1(t));
  }
  {
    Tape t;
    t.backward(build2(t));
  }
  for (std::size_t i = 0; i < combined.size(); ++i)
    CHECK(combined[i] == Catch::Approx(w.grad[i]).margin(1e-12));
}

TEST_CASE("unreachable parameters receive zero gradient") {
  ParamSet p;
  Parameter& used = p.add("used", Tensor::scalar(2.0));
  Parameter& unused = p.add("unused", Tensor::scalar(5.0));
  Tape t;
  Var a = t.param(used);
  t.param(unused);  // placed on the tape but not part of the loss
  t.backward(t.square(a));
  CHECK(used.grad[0] == 4.0);
  CHECK(unused.grad[0] == 0.0);
}

TEST_CASE("forward+backward is bit-identical across reruns") {
  auto run = [](std::uint64_t seed) {
    auto g = make_rng(seed, RngStream::kInit);
    ParamSet p;
    Parameter& w = p.add("w", Tensor({4, 4}, random_vec(g, 16)));
    Tensor x({4, 4}, random_vec(g, 16));
    Tape t;
    Var loss = t.mean(t.square(t.tanh_(t.matmul(t.constant(x), t.param(w)))));
    t.backward(loss);
    auto out = w.grad;
    out.push_back(t.value(loss));
    return out;
  };
  auto a = run(42);
  auto b = run(42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    // bitwise, not approximate
    CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
  }
}
