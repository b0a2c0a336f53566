#include "disagree/checks.hpp"
#include "disagree/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace disagree;

namespace {

int run_command(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  const RunResult result = run_experiment(cfg);
  save_csv(out, result.log);
  write_sidecar(out, cfg, "/proc/self/exe");
  if (cfg.experiment == "rl") save_checkpoint(out + ".ckpt", result.policy, result.encoder);
  std::cerr << "wrote " << result.log.rows.size() << " rows to " << out << '\n';
  return 0;
}

int eval_command(const std::string& checkpoint, const std::vector<std::string>& overrides, const std::string& env,
                 int episodes, std::uint64_t seed, bool sample) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg;
  cfg.env.name = env;
  for (const auto& o : overrides) apply_override(cfg, o);
  const EvalSummary s = eval_policy(ck.policy, ck.encoder, cfg.env, episodes, seed,
                                    sample ? EvalMode::Sample : EvalMode::Greedy);
  std::printf("episodes,steps,mean_return,goal_rate,interaction_rate\n%d,%ld,%.17g,%.17g,%.17g\n", s.episodes,
              s.steps, s.mean_return, s.goal_rate, s.interaction_rate);
  return 0;
}

int compare_command(const std::string& metric, int window, const std::vector<std::string>& files,
                    const std::vector<std::string>& labels) {
  if (!labels.empty() && labels.size() != files.size()) {
    throw std::invalid_argument("--label must be given once per log or not at all");
  }
  std::vector<LabeledLog> logs;
  for (std::size_t i = 0; i < files.size(); ++i) {
    logs.push_back({labels.empty() ? files[i] : labels[i], load_csv(files[i])});
  }
  write_comparison(std::cout, compare_runs(logs, metric, window));
  return 0;
}

int report(const std::vector<CheckOutcome>& outcomes) {
  int failed = 0;
  for (const auto& o : outcomes) {
    std::printf("%s  %s: %s\n", o.passed ? "PASS" : "FAIL", o.name.c_str(), o.detail.c_str());
    failed += o.passed ? 0 : 1;
  }
  std::printf("%zu checks, %d failed\n", outcomes.size(), failed);
  return failed == 0 ? 0 : 1;
}

int selftest_command(std::uint64_t seed) {
  std::vector<CheckOutcome> all = environment_checks(seed);
  for (auto& o : gradient_checks(seed)) all.push_back(std::move(o));
  all.push_back(variance_oracle_check(1000, seed));
  return report(all);
}

int oracle_variance_command(int k, int dim, int rows, std::uint64_t seed) {
  if (k < 2 || dim < 1 || rows < 1) throw std::invalid_argument("need k >= 2, dim >= 1, rows >= 1");
  const auto preds = random_predictions(k, rows, dim, seed, 0);
  const Vector fast = disagreement_reward(preds);
  std::printf("row,brute_force,disagreement_reward,abs_diff\n");
  for (int r = 0; r < rows; ++r) {
    std::vector<std::vector<double>> members;
    for (const auto& p : preds) members.emplace_back(p.row(r).data(), p.row(r).data() + dim);
    const double slow = brute_force_variance(members);
    std::printf("%d,%.17g,%.17g,%.3g\n", r, slow, fast(r), std::abs(slow - fast(r)));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble-disagreement exploration experiments"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, env = "noisy-tv-grid", metric;
  std::vector<std::string> overrides, files, labels;
  int episodes = 10, window = 1, k = 5, dim = 8, rows = 1;
  std::uint64_t seed = 1;
  bool sample = false;

  auto* run = app.add_subcommand("run", "Run one experiment and write its metric log");
  run->add_option("--config", config_path, "key = value config file");
  run->add_option("--set", overrides, "key=value override (repeatable)");
  run->add_option("--out", out, "CSV log path; <out>.meta and <out>.ckpt are written alongside")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a saved policy");
  eval->add_option("--checkpoint", checkpoint, "checkpoint written by run")->required();
  eval->add_option("--env", env, "environment name");
  eval->add_option("--set", overrides, "env.* override (repeatable)");
  eval->add_option("--episodes", episodes, "episode count")->check(CLI::NonNegativeNumber);
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_flag("--sample", sample, "sample actions instead of taking the argmax");

  auto* compare = app.add_subcommand("compare", "Smoothed curves and final-window means across logs");
  compare->add_option("--metric", metric, "column to compare")->required();
  compare->add_option("--window", window, "smoothing and final window, in log rows")->check(CLI::PositiveNumber);
  compare->add_option("--label", labels, "group label per log (repeatable); defaults to the file name");
  compare->add_option("logs", files, "CSV logs")->required();

  auto* selftest = app.add_subcommand("selftest", "Environment self-tests, gradient checks and the variance oracle");
  selftest->add_option("--seed", seed, "seed");

  auto* oracle = app.add_subcommand("oracle", "Cross-checks against brute-force computations");
  oracle->require_subcommand(1);
  auto* variance = oracle->add_subcommand("variance", "Print brute-force ensemble variance next to the library value");
  variance->add_option("k", k, "ensemble size")->required();
  variance->add_option("dim", dim, "prediction dimension")->required();
  variance->add_option("--rows", rows, "inputs to draw");
  variance->add_option("--seed", seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(config_path, overrides, out);
    if (*eval) return eval_command(checkpoint, overrides, env, episodes, seed, sample);
    if (*compare) return compare_command(metric, window, files, labels);
    if (*selftest) return selftest_command(seed);
    if (*variance) return oracle_variance_command(k, dim, rows, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
