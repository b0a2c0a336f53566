#include "disagree/envs.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace disagree {

namespace {

SelfTestResult check(std::string name, bool passed, const std::string& detail) {
  return SelfTestResult{std::move(name), passed, detail};
}

// Same seed, same action sequence: identical transition streams.
SelfTestResult determinism(const EnvOptions& options) {
  auto a = make_env(options);
  auto b = make_env(options);
  CounterRng actions(options.seed, "self-test-actions");
  a->reset();
  b->reset();
  for (int i = 0; i < 2000; ++i) {
    const Action act{static_cast<int>(actions.uniform_int(
        static_cast<std::uint64_t>(a->descriptor().action_count)))};
    if (!(a->step(act) == b->step(act))) {
      return check("determinism", false, "streams diverged at step " + std::to_string(i));
    }
    if (a->done()) {
      if (!(a->reset() == b->reset())) return check("determinism", false, "reset diverged");
    }
  }
  return check("determinism", true, "2000 steps identical");
}

std::vector<SelfTestResult> pairs_checks(const EnvOptions& options) {
  std::vector<SelfTestResult> out;
  NoisyPairs env(options);
  const int n = 10000;
  int class1_starts = 0;
  std::vector<int> next_counts(10, 0);
  int class0_violations = 0;
  int labels_wrong = 0;
  for (int i = 0; i < n; ++i) {
    const Observation x = env.reset();
    const int start = env.current_class();
    if (env.classify(x) != start) ++labels_wrong;
    const Transition t = env.step(Action{0});
    const int next = std::stoi(*t.info.value(kNextClass));
    if (start == 1) {
      ++class1_starts;
      ++next_counts[static_cast<std::size_t>(next)];
    } else if (next != 0) {
      ++class0_violations;
    }
    if (env.classify(t.next_obs) != next) ++labels_wrong;
  }
  const double freq = static_cast<double>(class1_starts) / n;
  std::ostringstream f;
  f << "class-1 start frequency " << freq;
  out.push_back(check("reset class balance", std::abs(freq - 0.5) <= 0.05, f.str()));
  out.push_back(check("class 0 stays in class 0", class0_violations == 0,
                      std::to_string(class0_violations) + " violations"));
  double tv = 0.0;
  for (int c = 0; c < 10; ++c) {
    const double p = class1_starts > 0 ? static_cast<double>(next_counts[static_cast<std::size_t>(c)]) / class1_starts : 0.0;
    const double q = c >= 2 ? 1.0 / 8.0 : 0.0;
    tv += 0.5 * std::abs(p - q);
  }
  std::ostringstream t;
  t << "total variation " << tv;
  out.push_back(check("class 1 next-class uniform over 2..9", tv <= 0.05, t.str()));
  out.push_back(check("observations near their prototype", labels_wrong == 0,
                      std::to_string(labels_wrong) + " misclassified"));
  return out;
}

std::vector<SelfTestResult> grid_checks(const EnvOptions& options) {
  std::vector<SelfTestResult> out;
  EnvOptions fixed = options;
  fixed.fixed_start = true;
  NoisyTvGrid env(fixed);
  const Observation start = env.reset();
  out.push_back(check("fixed start is cell 0", start(0) == 1.0 && start.head(env.size() * env.size()).sum() == 1.0, ""));
  env.set_position(2, env.size() - 1);
  const Transition t = env.step(Action{NoisyTvGrid::kRight});
  out.push_back(check("right wall clamps", env.row() == 2 && env.col() == env.size() - 1, ""));
  (void)t;
  return out;
}

std::vector<SelfTestResult> table_checks(const EnvOptions& options) {
  std::vector<SelfTestResult> out;
  TouchTable env(options);
  const int actions = env.descriptor().action_count;
  // Enumerate every action against the fixed placement.
  int touching = 0;
  for (int a = 0; a < actions; ++a) {
    const auto d = env.decode(a);
    for (const auto& o : env.layout()) {
      if (std::abs(o.x - d.x) <= 1 && std::abs(o.y - d.y) <= 1 && o.type == d.mode) {
        ++touching;
        break;
      }
    }
  }
  const double expected = static_cast<double>(touching) / actions;
  CounterRng pick(options.seed, "self-test-uniform");
  const int n = 100000;
  int touched = 0;
  for (int i = 0; i < n; ++i) {
    env.reset();
    const Transition t = env.step(Action{static_cast<int>(pick.uniform_int(static_cast<std::uint64_t>(actions)))});
    if (t.info.has(kTouchedObject)) ++touched;
  }
  const double rate = static_cast<double>(touched) / n;
  std::ostringstream os;
  os << "uniform-policy rate " << rate << " vs enumerated " << expected;
  out.push_back(check("uniform interaction rate", std::abs(rate - expected) <= 0.2 * expected, os.str()));
  return out;
}

}  // namespace

std::vector<SelfTestResult> env_self_test(const EnvOptions& options) {
  std::vector<SelfTestResult> out;
  auto env = make_env(options);
  const EnvDescriptor& d = env->descriptor();
  const Observation x = env->reset();
  out.push_back(check("observation dimension", x.size() == d.d_obs,
                      "d_obs " + std::to_string(d.d_obs)));
  out.push_back(determinism(options));
  std::vector<SelfTestResult> extra;
  if (options.name == "noisy-pairs") extra = pairs_checks(options);
  if (options.name == "noisy-tv-grid") extra = grid_checks(options);
  if (options.name == "touch-table") extra = table_checks(options);
  out.insert(out.end(), extra.begin(), extra.end());
  for (SelfTestResult& r : out) r.name = options.name + ": " + r.name;
  return out;
}

}  // namespace disagree
