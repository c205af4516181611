#include <catch2/catch_amalgamated.hpp>

#include "noisymarl/envs.hpp"

using namespace noisymarl;
using envs::TeamGame;
using envs::VecEnv;

TEST_CASE("payoff tables match the game definitions") {
  TeamGame m1 = TeamGame::matrix1();
  CHECK(m1.payoff(0, 0) == 8);
  CHECK(m1.payoff(0, 1) == -12);
  CHECK(m1.payoff(1, 0) == -12);
  CHECK(m1.payoff(1, 1) == 0);

  TeamGame m2 = TeamGame::matrix2();
  CHECK(m2.payoff(0, 0) == 12);
  CHECK(m2.payoff(2, 2) == 10);
  CHECK(m2.payoff(0, 1) == 0);
}

TEST_CASE("matrix1 payoff is symmetric") {
  TeamGame m1 = TeamGame::matrix1();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(m1.payoff(i, j) == m1.payoff(j, i));
}

TEST_CASE("joint-action maxima are unique and at (0,0)") {
  TeamGame m1 = TeamGame::matrix1();
  TeamGame m2 = TeamGame::matrix2();
  int count1 = 0, count2 = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(m1.payoff(i, j) <= 8);
      CHECK(m2.payoff(i, j) <= 12);
      if (m1.payoff(i, j) == 8) ++count1;
      if (m2.payoff(i, j) == 12) ++count2;
    }
  CHECK(count1 == 1);
  CHECK(count2 == 1);
  CHECK(m1.payoff(0, 0) == 8);
  CHECK(m2.payoff(0, 0) == 12);
}

TEST_CASE("decoupled bandit ignores agent one") {
  TeamGame db = TeamGame::decoupled_bandit();
  for (int a2 = 0; a2 < 3; ++a2)
    for (int a1 = 0; a1 < 3; ++a1) CHECK(db.payoff(a1, a2) == db.payoff(0, a2));
  CHECK(db.payoff(0, 0) == 1);
  CHECK(db.payoff(0, 1) == 0);
  CHECK(db.payoff(0, 2) == -1);
}

TEST_CASE("reset returns the constant state and one-hot observations") {
  TeamGame env = TeamGame::matrix1();
  auto [state, obs] = env.reset(3);
  CHECK(state == std::vector<double>{0, 0, 0, 0});
  REQUIRE(obs.size() == 2);
  CHECK(obs[0] == std::vector<double>{1, 0});
  CHECK(obs[1] == std::vector<double>{0, 1});

  auto [s2, o2] = TeamGame::matrix1().reset(3);
  CHECK(o2 == obs);

  // reset mid-episode discards the running episode
  env.reset(4);
  env.reset(5);
  CHECK_NOTHROW(env.step({0, 0}));
}

TEST_CASE("step rewards follow the payoff tables") {
  TeamGame env = TeamGame::matrix1();
  env.reset(0);
  CHECK(env.step({0, 0}).reward == 8);
  env.reset(0);
  CHECK(env.step({0, 1}).reward == -12);

  TeamGame env2 = TeamGame::matrix2();
  env2.reset(0);
  CHECK(env2.step({0, 0}).reward == 12);
  env2.reset(0);
  CHECK(env2.step({2, 2}).reward == 10);
}

TEST_CASE("step validates actions and episode state") {
  TeamGame env = TeamGame::matrix1();
  env.reset(0);
  CHECK_THROWS_WITH(env.step({3, 0}), Catch::Matchers::ContainsSubstring("out of range"));
  CHECK_NOTHROW(env.step({1, 2}));
  CHECK_THROWS_WITH(env.step({0, 0}), Catch::Matchers::ContainsSubstring("reset"));
  CHECK_THROWS(TeamGame::by_name("nope"));
}

TEST_CASE("vectorized stepping is ordered, auto-resets and flags boundaries") {
  VecEnv venv("matrix1", 32, 7);
  CHECK(venv.count() == 32);
  std::vector<std::vector<int>> joint(32, {0, 0});
  for (int step = 0; step < 3; ++step) {
    envs::VecStep out = venv.step(joint);
    REQUIRE(out.transitions.size() == 32);
    for (int k = 0; k < 32; ++k) {
      CHECK(out.transitions[k].reward == 8);   // identical actions, identical rewards
      CHECK(out.episode_end[k] == 1);          // horizon-1: boundary every step
    }
  }
  // total transitions per rollout = count * length
  int total = 0;
  for (int t = 0; t < 5; ++t) total += static_cast<int>(venv.step(joint).transitions.size());
  CHECK(total == 32 * 5);
}
