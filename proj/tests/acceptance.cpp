// Runs the acceptance experiments from the shipped presets and prints one
// PASS/FAIL line per criterion. Exit status is the number of failures.

#include "disagree/checks.hpp"
#include "disagree/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

using namespace disagree;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string preset_dir = DISAGREE_PRESET_DIR;

RunConfig preset(const std::string& name, const std::vector<std::string>& overrides = {}) {
  RunConfig c = load_config(preset_dir + "/" + name);
  for (const auto& o : overrides) apply_override(c, o);
  c.validate();
  return c;
}

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string list(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) s += (s.empty() ? "" : " ") + (std::isinf(x) ? std::string(">budget") : fmt("%.0f", x));
  return "[" + s + "]";
}

double last(const RunLog& log, const std::string& col) { return log.column(col).back(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Mean class-1 / class-0 intrinsic reward over the final 1k steps.
double class_ratio(const RunLog& log, int rollout) {
  const auto steps = log.column("step");
  const auto c0 = log.column("intrinsic_class0");
  const auto c1 = log.column("intrinsic_class1");
  const double from = steps.back() - 1000.0;
  double s0 = 0, s1 = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] - rollout < from) continue;
    s0 += c0[i];
    s1 += c1[i];
  }
  return s1 / s0;
}

Verdict a1() {
  const RunConfig d = preset("a1-noisy-pairs.cfg");
  const RunConfig p = preset("a1-noisy-pairs.cfg", {"reward=pred-error"});
  const double rd = class_ratio(run_experiment(d).log, d.rollout);
  const double rp = class_ratio(run_experiment(p).log, p.rollout);
  return {rd >= 0.5 && rd <= 2.0 && rp > 3.0,
          fmt("class-1/class-0 reward ratio: disagreement %.3f (need [0.5, 2]), pred-error %.3f (need > 3)", rd, rp)};
}

// Mean of `col` over the rows within `half` rows of the first row at or after `step`.
double window_at(const RunLog& log, const std::string& col, double step, int half) {
  const auto steps = log.column("step");
  const auto v = log.column(col);
  const auto it = std::lower_bound(steps.begin(), steps.end(), step);
  if (it == steps.end()) return std::nan("");
  const long i = it - steps.begin();
  const long lo = std::max(0L, i - half), hi = std::min<long>(static_cast<long>(v.size()) - 1, i + half);
  double s = 0;
  for (long j = lo; j <= hi; ++j) s += v[static_cast<std::size_t>(j)];
  return s / static_cast<double>(hi - lo + 1);
}

Verdict a2() {
  const RunConfig c = preset("a2-noise-collapse.cfg");
  const RunLog log = run_experiment(c).log;
  const auto steps = log.column("step");
  const auto loss = log.column("ensemble_loss");
  // Plateau: first row whose 5-row trailing mean loss is within 2% of the final one.
  const auto smooth = trailing_mean(loss, 5);
  const double final_loss = smooth.back();
  double plateau = steps.back();
  for (std::size_t i = 4; i < smooth.size(); ++i) {
    if (std::abs(smooth[i] - final_loss) <= 0.02 * final_loss) {
      plateau = steps[i];
      break;
    }
  }
  const double t = plateau + 2000.0;
  const double t2 = 2.0 * t;
  if (t2 > steps.back()) {
    return {false, fmt("plateau at step %.0f leaves 2T = %.0f beyond the %.0f-step run", plateau, t2, steps.back())};
  }
  const double dis_t = window_at(log, "disagreement", t, 2);
  const double dis_2t = window_at(log, "disagreement", t2, 2);
  const double err_2t = window_at(log, "pred_error", t2, 2);
  const double floor = c.noise_dim;
  return {dis_2t < dis_t && err_2t > 0.8 * floor,
          fmt("plateau %.0f, T %.0f: disagreement %.5g -> %.5g at 2T; pred-error at 2T %.3f vs 0.8 x floor %.3f",
              plateau, t, dis_t, dis_2t, err_2t, 0.8 * floor)};
}

Verdict a3() {
  double rate[2][2] = {};  // [tv][reward: 0 disagreement, 1 pred-error]
  const int seeds = 5;
  for (int tv = 0; tv < 2; ++tv) {
    for (int r = 0; r < 2; ++r) {
      for (int s = 1; s <= seeds; ++s) {
        const RunConfig c = preset("a3-noisy-tv-grid.cfg", {std::string("env.tv=") + (tv ? "true" : "false"),
                                                            r ? "reward=pred-error" : "reward=disagreement",
                                                            "seed=" + std::to_string(s)});
        rate[tv][r] += last(run_experiment(c).log, "eval_goal_rate") / seeds;
      }
    }
  }
  const bool off_ok = rate[0][0] >= 0.7 && rate[0][1] >= 0.7;
  const bool on_ok = rate[1][0] - rate[1][1] >= 0.2;
  return {off_ok && on_ok, fmt("goal rate TV off: disagreement %.2f, pred-error %.2f (need >= 0.7); "
                               "TV on: disagreement %.2f, pred-error %.2f (need gap >= 0.2)",
                               rate[0][0], rate[0][1], rate[1][0], rate[1][1])};
}

Verdict a4() {
  const CheckOutcome o = variance_oracle_check(1000, 1, 1e-10);
  return {o.passed, o.detail};
}

// First logged step whose rollout touched the object at least half the time.
double steps_to_half(const RunLog& log) {
  const auto steps = log.column("step");
  const auto rate = log.column("interaction_rate");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (rate[i] >= 0.5) return steps[i];
  }
  return kInf;
}

Verdict a5() {
  const int seeds = 5;
  std::vector<double> diff, reinf;
  for (int s = 1; s <= seeds; ++s) {
    diff.push_back(steps_to_half(run_experiment(preset("a5-touch-table.cfg", {"seed=" + std::to_string(s)})).log));
  }
  const double md = median(diff);
  if (std::isinf(md)) return {false, "differentiable median never reached 50% within its budget " + list(diff)};
  // REINFORCE only needs to run until the pass threshold: a run that has not
  // reached 50% by 5x the differentiable median already satisfies the bound.
  const RunConfig base = preset("a5-touch-table.cfg");
  const long budget = static_cast<long>(std::ceil(5.0 * md / base.rollout)) * base.rollout;
  for (int s = 1; s <= seeds; ++s) {
    const RunConfig c = preset("a5-touch-table.cfg", {"optimizer=reinforce", "seed=" + std::to_string(s),
                                                      "total_steps=" + std::to_string(budget)});
    reinf.push_back(steps_to_half(run_experiment(c).log));
  }
  const double mr = median(reinf);
  const std::string ratio = std::isinf(mr) ? std::string(">= 5") : fmt("%.2f", mr / md);
  return {mr >= 5.0 * md, "steps to 50% interaction: differentiable " + list(diff) + fmt(" median %.0f; ", md) +
                              "REINFORCE " + list(reinf) + " (budget " + std::to_string(budget) +
                              "); ratio " + ratio + " (need >= 5)"};
}

Verdict a6() {
  const int seeds = 5;
  std::vector<double> comb, ppo;
  for (int s = 1; s <= seeds; ++s) {
    const std::string seed = "seed=" + std::to_string(s);
    for (auto* out : {&comb, &ppo}) {
      const RunConfig c = preset("a6-sticky-chain.cfg", {out == &comb ? "optimizer=combined" : "optimizer=ppo", seed});
      const double f = last(run_experiment(c).log, "first_success_step");
      out->push_back(f > 0 ? f : kInf);
    }
  }
  const double mc = median(comb), mp = median(ppo);
  return {mc < mp, "first far-end step: combined " + list(comb) + fmt(" median %.0f; ", mc) + "ppo " + list(ppo) +
                       fmt(" median %.0f (need combined < ppo)", mp)};
}

Verdict a7() {
  const auto outcomes = gradient_checks(1, 1e-4);
  std::string failed;
  for (const auto& o : outcomes) {
    if (!o.passed) failed += (failed.empty() ? "" : "; ") + o.name + ": " + o.detail;
  }
  return {failed.empty(), failed.empty() ? fmt("%zu gradient checks within 1e-4", outcomes.size()) : failed};
}

Verdict a8() {
  std::string detail;
  bool ok = true;
  for (const std::string name : {"a1-noisy-pairs.cfg", "a2-noise-collapse.cfg", "a6-sticky-chain.cfg"}) {
    const RunConfig c = preset(name);
    const bool same = csv_without_wall_clock(run_experiment(c).log) == csv_without_wall_clock(run_experiment(c).log);
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + name + (same ? " identical" : " DIFFERS");
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria A1-A8"};
  std::vector<std::string> only;
  app.add_option("criteria", only, "subset to run, e.g. A1 A4 (default: all)");
  app.add_option("--presets", preset_dir, "preset directory");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7}, {"A8", a8}};
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures;
}
