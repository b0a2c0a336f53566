#include "disagree/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace disagree;

namespace {

RunConfig small_rl(const std::string& env) {
  RunConfig c;
  c.env.name = env;
  c.total_steps = 512;
  c.rollout = 128;
  c.eval_every = 2;
  c.eval_episodes = 2;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("disagree_" + name)).string();
}

bool same_params(const PolicyNet& a, const PolicyNet& b) {
  if (a.tensor_count() != b.tensor_count()) return false;
  for (std::size_t i = 0; i < a.tensor_count(); ++i) {
    if (a.tensor(i) != b.tensor(i)) return false;
  }
  return true;
}

RunLog metric_log(const std::vector<double>& steps, const std::vector<double>& values) {
  RunLog log;
  log.columns = {"step", "m", RunLog::kWallClock};
  for (std::size_t i = 0; i < steps.size(); ++i) log.append({steps[i], values[i], 0.0});
  return log;
}

}  // namespace

// --- config ----------------------------------------------------------------

TEST(Config, ParsesCommentsAndOverrides) {
  std::istringstream in("# comment\nenv = sticky-chain  # trailing\n\nseed=7\npolicy.hidden = 32,16\n");
  RunConfig c = parse_config(in);
  EXPECT_EQ(c.env.name, "sticky-chain");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.policy_hidden, (std::vector<int>{32, 16}));
  apply_override(c, "ensemble.k=3");
  EXPECT_EQ(c.ensemble.k, 3);
}

TEST(Config, UnknownKeyAndBadValueThrow) {
  RunConfig c;
  EXPECT_THROW(apply_override(c, "ensemble.kk=3"), std::invalid_argument);
  EXPECT_THROW(apply_override(c, "seed=abc"), std::invalid_argument);
  EXPECT_THROW(apply_override(c, "novalue"), std::invalid_argument);
}

TEST(Config, ValidateNamesOffendingKey) {
  RunConfig c;
  c.ensemble.k = 1;
  try {
    c.validate();
    FAIL() << "k = 1 accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("ensemble.k"), std::string::npos);
  }
  c = RunConfig{};
  c.optimizer = "differentiable";
  c.reward = "pred-error";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.action_code = "factored";
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, EntriesRoundTripThroughParser) {
  RunConfig c = small_rl("touch-table");
  c.policy_lr = 0.123456789012345;
  c.explore_relaxation = "soft";
  std::ostringstream out;
  for (const auto& [k, v] : config_entries(c)) out << k << " = " << v << '\n';
  std::istringstream in(out.str());
  const RunConfig back = parse_config(in);
  EXPECT_EQ(config_entries(back), config_entries(c));
}

TEST(Config, AutoEncoderFollowsEnvironment) {
  RunConfig c;
  for (const auto& [env, kind] : std::vector<std::pair<std::string, EncoderKind>>{
           {"noisy-pairs", EncoderKind::RandomNet},
           {"touch-table", EncoderKind::RandomNet},
           {"noisy-tv-grid", EncoderKind::Identity},
           {"sticky-chain", EncoderKind::Identity}}) {
    c.env.name = env;
    EXPECT_EQ(c.encoder_kind(), kind) << env;
  }
  c.encoder = "identity";
  c.env.name = "touch-table";
  EXPECT_EQ(c.encoder_kind(), EncoderKind::Identity);
}

// --- run log -----------------------------------------------------------------

TEST(RunLog, AppendRejectsNonIncreasingStep) {
  RunLog log = metric_log({1, 2}, {0, 0});
  EXPECT_THROW(log.append({2, 0, 0}), std::logic_error);
  EXPECT_THROW(log.append({3, 0}), std::invalid_argument);
}

TEST(RunLog, CsvRoundTripIsExact) {
  RunLog log = metric_log({1, 2, 3}, {0.1, std::nan(""), 1.0 / 3.0});
  std::stringstream ss;
  write_csv(ss, log);
  const RunLog back = read_csv(ss);
  ASSERT_EQ(back.columns, log.columns);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(back.rows[0][1], 0.1);
  EXPECT_TRUE(std::isnan(back.rows[1][1]));
  EXPECT_EQ(back.rows[2][1], 1.0 / 3.0);
}

TEST(RunLog, GitBlobHashMatchesGit) {
  const std::string path = temp_path("hello.txt");
  std::ofstream(path) << "hello\n";
  EXPECT_EQ(git_blob_hash(path), "ce013625030ba8dba906f756967f9e9ca394464a");
  std::filesystem::remove(path);
}

TEST(RunLog, SidecarReloadsAsConfig) {
  const RunConfig c = small_rl("sticky-chain");
  const std::string csv = temp_path("sidecar.csv");
  const std::string bin = temp_path("sidecar.bin");
  std::ofstream(bin) << "binary";
  write_sidecar(csv, c, bin);
  const RunConfig back = load_config(csv + ".meta");
  EXPECT_EQ(config_entries(back), config_entries(c));
  std::ifstream meta(csv + ".meta");
  const std::string text((std::istreambuf_iterator<char>(meta)), {});
  EXPECT_NE(text.find(git_blob_hash(bin)), std::string::npos);
  std::filesystem::remove(csv + ".meta");
  std::filesystem::remove(bin);
}

// --- runs --------------------------------------------------------------------

TEST(Run, ZeroStepsGivesEmptyLog) {
  RunConfig c = small_rl("noisy-pairs");
  c.total_steps = 0;
  const RunResult r = run_experiment(c);
  EXPECT_TRUE(r.log.rows.empty());
  EXPECT_FALSE(r.log.columns.empty());
}

TEST(Run, SameSeedGivesIdenticalLog) {
  for (const std::string opt : {"ppo", "reinforce", "differentiable", "combined"}) {
    RunConfig c = small_rl("noisy-tv-grid");
    c.optimizer = opt;
    const RunResult a = run_experiment(c);
    const RunResult b = run_experiment(c);
    EXPECT_EQ(csv_without_wall_clock(a.log), csv_without_wall_clock(b.log)) << opt;
    EXPECT_TRUE(same_params(a.policy, b.policy)) << opt;
  }
}

TEST(Run, DifferentSeedsDiffer) {
  RunConfig c = small_rl("noisy-tv-grid");
  const RunResult a = run_experiment(c);
  c.seed = 2;
  const RunResult b = run_experiment(c);
  EXPECT_NE(csv_without_wall_clock(a.log), csv_without_wall_clock(b.log));
}

TEST(Run, OneRowPerRoundWithEvalOnSchedule) {
  const RunConfig c = small_rl("noisy-tv-grid");
  const RunResult r = run_experiment(c);
  ASSERT_EQ(r.log.rows.size(), 4u);
  const auto steps = r.log.column("step");
  const auto ret = r.log.column("eval_return");
  EXPECT_EQ(steps, (std::vector<double>{128, 256, 384, 512}));
  EXPECT_TRUE(std::isnan(ret[0]));
  EXPECT_FALSE(std::isnan(ret[1]));
  EXPECT_TRUE(std::isnan(ret[2]));
  EXPECT_FALSE(std::isnan(ret[3]));
  EXPECT_EQ(r.log.columns.back(), RunLog::kWallClock);
}

TEST(Run, WarmupLeavesPolicyUntouched) {
  RunConfig c = small_rl("sticky-chain");
  c.eval_episodes = 0;
  c.policy_warmup_steps = c.total_steps;
  const RunResult r = run_experiment(c);
  const PolicyNet fresh = make_policy(r.encoder.feat_dim(), r.policy.action_count(), c.policy_hidden,
                                      stream_key(c.seed, "policy"));
  EXPECT_TRUE(same_params(r.policy, fresh));
}

TEST(Run, NoiseCollapseFloorIsNoiseDim) {
  RunConfig c;
  c.experiment = "noise-collapse";
  c.total_steps = 200;
  c.rollout = 1;
  c.noise_log_every = 50;
  const RunResult r = run_experiment(c);
  ASSERT_EQ(r.log.rows.size(), 4u);
  for (double f : r.log.column("noise_floor")) EXPECT_EQ(f, c.noise_dim);
}

// --- evaluation ----------------------------------------------------------------

TEST(Eval, DoesNotTouchPolicyOrEncoder) {
  const RunConfig c = small_rl("noisy-tv-grid");
  const RunResult r = run_experiment(c);
  const PolicyNet before = r.policy;
  const EvalSummary a = eval_policy(r.policy, r.encoder, c.env, 5, 99);
  EXPECT_TRUE(same_params(before, r.policy));
  const EvalSummary b = eval_policy(r.policy, r.encoder, c.env, 5, 99);
  EXPECT_EQ(a, b);
  EXPECT_EQ(eval_policy(r.policy, r.encoder, c.env, 5, 99, EvalMode::Sample),
            eval_policy(r.policy, r.encoder, c.env, 5, 99, EvalMode::Sample));
}

TEST(Eval, ShortestPathReachesGoalEveryTime) {
  EnvOptions opts{.name = "noisy-tv-grid"};
  // Observation: one-hot cell, then TV noise.
  const int n = opts.grid_size;
  const ActionFn greedy = [n](const Observation& o) {
    Index cell = 0;
    o.head(n * n).maxCoeff(&cell);
    const int row = static_cast<int>(cell) / n;
    return row < n - 1 ? NoisyTvGrid::kDown : NoisyTvGrid::kRight;
  };
  const EvalSummary s = eval_policy(greedy, opts, 20, 3);
  EXPECT_EQ(s.goal_rate, 1.0);
  EXPECT_EQ(s.mean_return, 1.0);
  EXPECT_EQ(s.episodes, 20);
}

// Oracle: a standalone simulation of the uniform random walk on the grid,
// sharing no code with the environment.
TEST(Eval, UniformWalkGoalRateMatchesIndependentSimulation) {
  const int n = 4, horizon = 24, episodes = 4000;
  EnvOptions opts{.name = "noisy-tv-grid", .horizon = horizon, .grid_size = n};
  CounterRng pick(5, "uniform-actions");
  const EvalSummary s = eval_policy([&](const Observation&) { return static_cast<int>(pick.uniform_int(5)); },
                                    opts, episodes, 11);

  CounterRng sim(6, "oracle");
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    const int cell = static_cast<int>(sim.uniform_int(n * n - 1));
    int r = cell / n, c = cell % n;
    for (int t = 0; t < horizon; ++t) {
      switch (sim.uniform_int(5)) {
        case 0: r = std::max(0, r - 1); break;
        case 1: r = std::min(n - 1, r + 1); break;
        case 2: c = std::max(0, c - 1); break;
        case 3: c = std::min(n - 1, c + 1); break;
        default: break;
      }
      if (r == n - 1 && c == n - 1) {
        ++hits;
        break;
      }
    }
  }
  const double p = static_cast<double>(hits) / episodes;
  const double se = std::sqrt(2.0 * p * (1.0 - p) / episodes);
  EXPECT_NEAR(s.goal_rate, p, 4.0 * se);
}

TEST(Eval, TouchTableUsesTrainingLayout) {
  RunConfig c = small_rl("touch-table");
  c.seed = 9;
  TouchTable table(c.env);
  const auto obj = table.layout().front();
  const int touch = table.encode(obj.x, obj.y, 0, obj.type);
  const EvalSummary s = eval_policy([touch](const Observation&) { return touch; }, c.env, 10, 12345);
  EXPECT_EQ(s.interaction_rate, 1.0);
}

// --- comparison ---------------------------------------------------------------

TEST(Compare, SelfComparisonHasNoSpread) {
  const RunLog log = metric_log({10, 20, 30}, {1, 2, 4});
  const Comparison cmp = compare_runs({{"a", log}, {"a", log}}, "m", 2);
  for (const auto& p : cmp.curve) EXPECT_EQ(p.stderr_, 0.0);
  ASSERT_EQ(cmp.final_window.size(), 1u);
  EXPECT_DOUBLE_EQ(cmp.final_window[0].mean, 3.0);
}

TEST(Compare, WindowOnePassesValuesThrough) {
  const RunLog log = metric_log({10, 20, 30}, {1, 2, 4});
  const Comparison cmp = compare_runs({{"a", log}}, "m", 1);
  ASSERT_EQ(cmp.curve.size(), 3u);
  EXPECT_EQ(cmp.curve[0].mean, 1.0);
  EXPECT_EQ(cmp.curve[1].mean, 2.0);
  EXPECT_EQ(cmp.curve[2].mean, 4.0);
  EXPECT_EQ(cmp.final_window[0].mean, 4.0);
}

TEST(Compare, StandardErrorMatchesTextbook) {
  const RunLog a = metric_log({1, 2}, {1, 1});
  const RunLog b = metric_log({1, 2}, {2, 3});
  const RunLog c = metric_log({1, 2}, {6, 8});
  const Comparison cmp = compare_runs({{"x", a}, {"x", b}, {"x", c}}, "m", 1);
  // Final values 1, 3, 8: mean 4, sample sd sqrt(13), stderr sqrt(13 / 3).
  EXPECT_DOUBLE_EQ(cmp.final_window[0].mean, 4.0);
  EXPECT_NEAR(cmp.final_window[0].stderr_, std::sqrt(13.0 / 3.0), 1e-12);
  EXPECT_EQ(cmp.final_window[0].n, 3);
}

TEST(Compare, InterpolatesOntoFirstGridAndKeepsGroupOrder) {
  const RunLog a = metric_log({0, 10}, {0, 10});
  const RunLog b = metric_log({0, 5, 20}, {0, 50, 200});
  const Comparison cmp = compare_runs({{"late", a}, {"early", b}}, "m", 1);
  ASSERT_EQ(cmp.final_window.size(), 2u);
  EXPECT_EQ(cmp.final_window[0].label, "late");
  EXPECT_DOUBLE_EQ(cmp.final_window[1].mean, 100.0);
}

TEST(Compare, RejectsEmptyInput) {
  EXPECT_THROW(compare_runs({}, "m", 1), std::invalid_argument);
  EXPECT_THROW(compare_runs({{"a", metric_log({1}, {1})}}, "missing", 1), std::invalid_argument);
}

TEST(Compare, TrailingMean) {
  EXPECT_EQ(trailing_mean({1, 2, 3, 4}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5}));
}

// --- checkpoints -----------------------------------------------------------------

TEST(Checkpoint, RoundTripRestoresPolicyAndEncoder) {
  const RunConfig c = small_rl("noisy-pairs");
  const RunResult r = run_experiment(c);
  const std::string path = temp_path("ckpt.bin");
  save_checkpoint(path, r.policy, r.encoder);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(same_params(back.policy, r.policy));
  const Observation o = Observation::LinSpaced(r.encoder.in_dim(), -1.0, 1.0);
  EXPECT_EQ(back.encoder.encode(o), r.encoder.encode(o));
  EXPECT_EQ(eval_policy(back.policy, back.encoder, c.env, 3, 4), eval_policy(r.policy, r.encoder, c.env, 3, 4));
  std::filesystem::remove(path);
}
