#include "disagree/envs.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <set>

using namespace disagree;

namespace {

EnvOptions opts(const std::string& name, std::uint64_t seed = 17) {
  EnvOptions o;
  o.name = name;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(MakeEnv, NoisyPairsDefaults) {
  const auto env = make_env(opts("noisy-pairs"));
  EXPECT_EQ(env->descriptor().d_obs, 16);
  EXPECT_EQ(env->descriptor().action_count, 2);
  EXPECT_EQ(env->descriptor().horizon, 1);
}

TEST(MakeEnv, GridObservationIsPositionPlusTv) {
  const auto env = make_env(opts("noisy-tv-grid"));
  EXPECT_EQ(env->descriptor().d_obs, 8 * 8 + 8);
  EXPECT_EQ(env->descriptor().action_count, 5);
  EXPECT_EQ(env->descriptor().horizon, 128);
}

TEST(MakeEnv, TouchTableActionCountIsFactorProduct) {
  const auto env = make_env(opts("touch-table"));
  EXPECT_EQ(env->descriptor().action_count, 16 * 16 * 4 * 2);
  EXPECT_EQ(env->descriptor().horizon, 1);
}

TEST(MakeEnv, UnknownNameListsKnownNames) {
  try {
    make_env(opts("pong"));
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    for (const auto& n : known_env_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST(Env, RejectsStepAfterDoneAndBadActions) {
  auto env = make_env(opts("noisy-pairs"));
  EXPECT_THROW(env->step(Action{0}), std::logic_error);  // before reset
  env->reset();
  EXPECT_THROW(env->step(Action{2}), std::out_of_range);
  env->step(Action{1});
  EXPECT_TRUE(env->done());
  EXPECT_THROW(env->step(Action{0}), std::logic_error);
}

TEST(Env, SameSeedSameStream) {
  for (const auto& name : known_env_names()) {
    auto a = make_env(opts(name, 5));
    auto b = make_env(opts(name, 5));
    EXPECT_EQ(a->reset(), b->reset()) << name;
    for (int i = 0; i < 50; ++i) {
      const Action act{i % a->descriptor().action_count};
      ASSERT_TRUE(a->step(act) == b->step(act)) << name;
      if (a->done()) {
        ASSERT_EQ(a->reset(), b->reset());
      }
    }
  }
}

TEST(Env, DifferentSeedsDiffer) {
  auto a = make_env(opts("noisy-pairs", 1));
  auto b = make_env(opts("noisy-pairs", 2));
  EXPECT_NE(a->reset(), b->reset());
}

TEST(NoisyPairs, ResetClassesAreBalanced) {
  NoisyPairs env(opts("noisy-pairs"));
  int ones = 0;
  for (int i = 0; i < 10000; ++i) {
    env.reset();
    ones += env.current_class();
  }
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.05);
}

TEST(NoisyPairs, ClassZeroTransitionsToClassZero) {
  NoisyPairs env(opts("noisy-pairs"));
  int seen = 0;
  for (int i = 0; i < 200; ++i) {
    env.reset();
    if (env.current_class() != 0) continue;
    const Transition t = env.step(Action{i % 2});
    EXPECT_EQ(*t.info.value(kStateClass), "0");
    EXPECT_EQ(*t.info.value(kNextClass), "0");
    EXPECT_EQ(env.classify(t.next_obs), 0);
    ++seen;
  }
  EXPECT_GT(seen, 50);
}

TEST(NoisyPairs, ClassOneJumpsUniformlyToTwoThroughNine) {
  NoisyPairs env(opts("noisy-pairs"));
  std::vector<int> counts(10, 0);
  int n = 0;
  while (n < 10000) {
    env.reset();
    if (env.current_class() != 1) continue;
    const Transition t = env.step(Action{0});
    EXPECT_EQ(*t.info.value(kStateClass), "1");
    ++counts[static_cast<std::size_t>(std::stoi(*t.info.value(kNextClass)))];
    ++n;
  }
  EXPECT_EQ(counts[0] + counts[1], 0);
  double tv = 0.0;
  for (int c = 2; c < 10; ++c) tv += 0.5 * std::abs(counts[static_cast<std::size_t>(c)] / 10000.0 - 0.125);
  EXPECT_LE(tv, 0.05);
}

TEST(NoisyPairs, ActionIsIgnored) {
  NoisyPairs a(opts("noisy-pairs"));
  NoisyPairs b(opts("noisy-pairs"));
  a.reset();
  b.reset();
  EXPECT_EQ(a.step(Action{0}).next_obs, b.step(Action{1}).next_obs);
}

TEST(NoisyTvGrid, FixedStartIsCellZero) {
  EnvOptions o = opts("noisy-tv-grid");
  o.fixed_start = true;
  NoisyTvGrid env(o);
  for (int i = 0; i < 5; ++i) {
    const Observation x = env.reset();
    EXPECT_EQ(x(0), 1.0);
    EXPECT_EQ(x.sum(), 1.0);
  }
}

TEST(NoisyTvGrid, RandomStartNeverOnGoal) {
  NoisyTvGrid env(opts("noisy-tv-grid"));
  std::set<int> cells;
  for (int i = 0; i < 2000; ++i) {
    env.reset();
    EXPECT_FALSE(env.row() == env.goal_row() && env.col() == env.goal_col());
    cells.insert(env.row() * env.size() + env.col());
  }
  EXPECT_EQ(cells.size(), 63u);
}

TEST(NoisyTvGrid, MovingRightAtWallKeepsPosition) {
  NoisyTvGrid env(opts("noisy-tv-grid"));
  env.reset();
  env.set_position(3, 7);
  const Transition t = env.step(Action{NoisyTvGrid::kRight});
  EXPECT_EQ(env.row(), 3);
  EXPECT_EQ(env.col(), 7);
  EXPECT_EQ(t.next_obs(3 * 8 + 7), 1.0);
}

TEST(NoisyTvGrid, GoalGivesSparseRewardAndEndsEpisode) {
  NoisyTvGrid env(opts("noisy-tv-grid"));
  env.reset();
  env.set_position(7, 6);
  const Transition t = env.step(Action{NoisyTvGrid::kRight});
  EXPECT_EQ(t.extrinsic, 1.0);
  EXPECT_TRUE(t.done);
}

TEST(NoisyTvGrid, EpisodeEndsAtHorizon) {
  EnvOptions o = opts("noisy-tv-grid");
  o.fixed_start = true;
  NoisyTvGrid env(o);
  env.reset();
  int steps = 0;
  while (!env.done()) {
    env.step(Action{NoisyTvGrid::kUp});
    ++steps;
  }
  EXPECT_EQ(steps, 128);
}

TEST(NoisyTvGrid, TvIsFreshNoiseWhileOn) {
  NoisyTvGrid env(opts("noisy-tv-grid"));
  env.reset();
  const Transition on = env.step(Action{NoisyTvGrid::kToggle});
  ASSERT_TRUE(env.tv_on());
  const auto tv1 = on.next_obs.tail(8);
  EXPECT_GT(tv1.sum(), 0.0);
  EXPECT_LE(tv1.maxCoeff(), 1.0);
  EXPECT_GE(tv1.minCoeff(), 0.0);
  const Transition stay = env.step(Action{NoisyTvGrid::kUp});
  EXPECT_NE(stay.next_obs.tail(8), tv1);
  const Transition off = env.step(Action{NoisyTvGrid::kToggle});
  EXPECT_TRUE(off.next_obs.tail(8).isZero(0.0));
}

TEST(NoisyTvGrid, TvAbsentVariantNeverShowsNoise) {
  EnvOptions o = opts("noisy-tv-grid");
  o.tv = false;
  NoisyTvGrid env(o);
  env.reset();
  for (int i = 0; i < 20; ++i) {
    const Transition t = env.step(Action{NoisyTvGrid::kToggle});
    EXPECT_TRUE(t.next_obs.tail(8).isZero(0.0));
  }
}

TEST(StickyChain, NoStickinessMovesAsChosen) {
  EnvOptions o = opts("sticky-chain");
  o.p_sticky = 0.0;
  StickyChain env(o);
  env.reset();
  for (int i = 0; i < 5; ++i) env.step(Action{StickyChain::kRight});
  EXPECT_EQ(env.position(), 5);
  env.step(Action{StickyChain::kLeft});
  EXPECT_EQ(env.position(), 4);
}

TEST(StickyChain, FullStickinessRepeatsFirstAction) {
  EnvOptions o = opts("sticky-chain");
  o.p_sticky = 1.0;
  StickyChain env(o);
  env.reset();
  env.step(Action{StickyChain::kRight});
  for (int i = 0; i < 4; ++i) env.step(Action{StickyChain::kLeft});
  EXPECT_EQ(env.position(), 5);
}

TEST(StickyChain, RepeatRateMatchesProbability) {
  StickyChain env(opts("sticky-chain"));
  CounterRng choose(3, "chooser");
  int disagreements = 0, sticky = 0;
  env.reset();
  for (int i = 0; i < 20000; ++i) {
    const int prev = env.previous_action();
    const int a = static_cast<int>(choose.uniform_int(2));
    const Transition t = env.step(Action{a});
    if (prev >= 0 && prev != a) {
      ++disagreements;
      if (t.info.has("sticky")) ++sticky;
    }
    if (env.done()) env.reset();
  }
  EXPECT_NEAR(static_cast<double>(sticky) / disagreements, 0.25, 0.02);
}

TEST(StickyChain, FarEndIsTerminalWithReward) {
  EnvOptions o = opts("sticky-chain");
  o.p_sticky = 0.0;
  StickyChain env(o);
  env.reset();
  Transition t;
  for (int i = 0; i < 31; ++i) t = env.step(Action{StickyChain::kRight});
  EXPECT_TRUE(t.done);
  EXPECT_EQ(t.extrinsic, 1.0);
  EXPECT_EQ(env.position(), 31);
}

TEST(TouchTable, DecodeEncodeAreInverse) {
  TouchTable env(opts("touch-table"));
  for (int a = 0; a < env.descriptor().action_count; ++a) {
    const auto d = env.decode(a);
    ASSERT_EQ(env.encode(d.x, d.y, d.orientation, d.mode), a);
  }
}

TEST(TouchTable, TouchMovesObjectToNeighbour) {
  TouchTable env(opts("touch-table"));
  const auto obj = env.layout().front();
  const Observation before = env.reset();
  const Transition t = env.step(Action{env.encode(obj.x, obj.y, 0, obj.type)});
  EXPECT_TRUE(t.info.has(kTouchedObject));
  const auto moved = env.objects().front();
  EXPECT_LE(std::abs(moved.x - obj.x), 1);
  EXPECT_LE(std::abs(moved.y - obj.y), 1);
  EXPECT_FALSE(moved.x == obj.x && moved.y == obj.y);
  EXPECT_NE(t.next_obs, before);
  EXPECT_EQ(env.reset(), before);  // layout restored
}

TEST(TouchTable, WrongModeOrFarCellIsNoOp) {
  TouchTable env(opts("touch-table"));
  const auto obj = env.layout().front();
  const Observation before = env.reset();
  const int wrong_mode = 1 - obj.type;
  Transition t = env.step(Action{env.encode(obj.x, obj.y, 2, wrong_mode)});
  EXPECT_FALSE(t.info.has(kTouchedObject));
  EXPECT_EQ(t.next_obs, before);
  env.reset();
  const int far_x = obj.x >= 8 ? 0 : 15;
  t = env.step(Action{env.encode(far_x, obj.y, 0, obj.type)});
  EXPECT_FALSE(t.info.has(kTouchedObject));
}

// Oracle: brute-force count of touching actions against the fixed layout.
TEST(TouchTable, UniformPolicyRateMatchesEnumeration) {
  TouchTable env(opts("touch-table", 23));
  int touching = 0;
  for (int x = 0; x < 16; ++x)
    for (int y = 0; y < 16; ++y)
      for (int o = 0; o < 4; ++o)
        for (int m = 0; m < 2; ++m)
          for (const auto& obj : env.layout())
            if (std::max(std::abs(obj.x - x), std::abs(obj.y - y)) <= 1 && obj.type == m) {
              ++touching;
              break;
            }
  const double expected = touching / 2048.0;
  CounterRng pick(1, "uniform");
  int touched = 0;
  for (int i = 0; i < 100000; ++i) {
    env.reset();
    touched += env.step(Action{static_cast<int>(pick.uniform_int(2048))}).info.has(kTouchedObject);
  }
  EXPECT_NEAR(touched / 100000.0, expected, 0.2 * expected);
}

TEST(SelfTest, AllEnvironmentsPass) {
  for (const auto& name : known_env_names()) {
    for (const SelfTestResult& r : env_self_test(opts(name, 31))) {
      EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    }
  }
}

TEST(TouchTable, LayoutFollowsLayoutSeedOnly) {
  EnvOptions a = opts("touch-table", 1), b = opts("touch-table", 2);
  const auto first = TouchTable(a).layout().front();
  const auto second = TouchTable(b).layout().front();
  EXPECT_TRUE(first.x == second.x && first.y == second.y && first.type == second.type);
  bool differs = false;
  for (std::uint64_t s = 1; s <= 8 && !differs; ++s) {
    b.layout_seed = s;
    const auto other = TouchTable(b).layout().front();
    differs = other.x != first.x || other.y != first.y || other.type != first.type;
  }
  EXPECT_TRUE(differs);
}
