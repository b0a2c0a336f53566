#include "disagree/checks.hpp"

#include "disagree/envs.hpp"
#include "disagree/gradcheck.hpp"
#include "disagree/intrinsic.hpp"
#include "disagree/policy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace disagree {

namespace {

Tensor uniform_tensor(CounterRng& rng, Index rows, Index cols, double lo, double hi) {
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

Tensor normal_tensor(CounterRng& rng, Index rows, Index cols) {
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

CheckOutcome from_report(std::string name, const GradCheckReport& rep) {
  std::ostringstream detail;
  detail << rep.checked << " elements, max rel " << rep.max_rel_error;
  if (!rep.passed) detail << "; worst " << rep.worst;
  return {std::move(name), rep.passed, detail.str()};
}

template <typename F>
CheckOutcome guarded(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

std::vector<Tensor> tensors_of(const PolicyNet& p) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < p.tensor_count(); ++i) out.push_back(p.tensor(i));
  return out;
}

RolloutBatch random_batch(const PolicyNet& p, int n, CounterRng& rng) {
  RolloutBatch b;
  b.obs = normal_tensor(rng, n, p.in_dim());
  const auto acts = act_batch(p, b.obs, rng);
  b.logprob.resize(n);
  b.value.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& a = acts[static_cast<std::size_t>(i)];
    b.actions.push_back(a.action.index);
    // Perturbed old log-probs keep some ratios away from 1.
    b.logprob(i) = a.logprob + 0.05 * rng.normal();
    b.value(i) = a.value;
  }
  b.reward = normal_tensor(rng, n, 1).col(0);
  b.done.assign(static_cast<std::size_t>(n), 0);
  b.done.back() = 1;
  compute_gae(b);
  return b;
}

}  // namespace

std::vector<CheckOutcome> gradient_checks(std::uint64_t seed, double tol) {
  CounterRng rng(seed, "gradient-checks");
  std::vector<CheckOutcome> out;

  // Weighted sums give each output element a distinct sensitivity.
  auto weigh = [](Tape& t, Var v) {
    Tensor w(v.rows(), v.cols());
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(v * t.constant(w));
  };
  struct OpCase {
    const char* name;
    ScalarFn f;
    std::vector<std::pair<Index, Index>> shapes;
    double lo, hi;
  };
  const std::vector<OpCase> ops = {
      {"op affine", [&](Tape& t, auto p) { return weigh(t, affine(p[0], p[1], p[2])); }, {{3, 4}, {4, 2}, {1, 2}}, -1, 1},
      {"op relu", [&](Tape& t, auto p) { return weigh(t, relu(p[0])); }, {{3, 5}}, -1, 1},
      {"op tanh", [&](Tape& t, auto p) { return weigh(t, tanh(p[0])); }, {{2, 6}}, -2, 2},
      {"op softmax", [&](Tape& t, auto p) { return weigh(t, softmax(p[0])); }, {{3, 4}}, -3, 3},
      {"op log", [&](Tape& t, auto p) { return weigh(t, log(p[0])); }, {{2, 3}}, 0.2, 3},
      {"op add", [&](Tape& t, auto p) { return weigh(t, p[0] + p[1]); }, {{3, 4}, {1, 4}}, -1, 1},
      {"op sub", [&](Tape& t, auto p) { return weigh(t, p[0] - p[1]); }, {{3, 4}, {3, 1}}, -1, 1},
      {"op mul", [&](Tape& t, auto p) { return weigh(t, p[0] * p[1]); }, {{2, 5}, {2, 5}}, -1, 1},
      {"op squared_norm", [&](Tape& t, auto p) { return weigh(t, squared_norm(p[0])); }, {{4, 3}}, -1, 1},
      {"op row_sum", [&](Tape& t, auto p) { return weigh(t, row_sum(p[0])); }, {{4, 3}}, -1, 1},
      {"op sum", [&](Tape&, auto p) { return sum(p[0] * p[0]); }, {{4, 3}}, -1, 1},
      {"op mean", [&](Tape&, auto p) { return mean(p[0] * p[0]); }, {{4, 3}}, -1, 1},
      {"op concat", [&](Tape& t, auto p) { return weigh(t, concat({p[0], p[1]}) * concat({p[1], p[0]})); }, {{2, 3}, {2, 3}}, -1, 1},
  };
  for (const auto& c : ops) {
    out.push_back(guarded(c.name, [&] {
      std::vector<Tensor> params;
      for (auto [r, k] : c.shapes) {
        Tensor t = uniform_tensor(rng, r, k, c.lo, c.hi);
        // Keep relu inputs off the kink.
        if (std::string(c.name) == "op relu") {
          for (Index i = 0; i < t.size(); ++i) {
            if (std::abs(t.data()[i]) < 0.05) t.data()[i] = 0.1;
          }
        }
        params.push_back(std::move(t));
      }
      return from_report(c.name, check_gradient(c.f, params, tol));
    }));
  }

  // Stop-gradient has no finite-difference counterpart: its gradient must
  // equal that of the same expression with a frozen copy.
  out.push_back(guarded("op stop_gradient", [&] {
    const Tensor x = uniform_tensor(rng, 3, 4, -1, 1);
    Tape a;
    const Var va = a.parameter(x);
    a.backward(sum(va * stop_gradient(va) * va));
    Tape b;
    const Var vb = b.parameter(x);
    b.backward(sum(vb * b.constant(x) * vb));
    const double diff = (a.grad(va) - b.grad(vb)).cwiseAbs().maxCoeff();
    return CheckOutcome{"op stop_gradient", diff == 0.0, "max |diff| " + std::to_string(diff)};
  }));

  EnsembleConfig ecfg;
  ecfg.k = 3;
  ecfg.hidden = {8};

  out.push_back(guarded("loss ensemble member", [&] {
    const ForwardEnsemble ens = make_ensemble(3, ActionEncoder::one_hot(2), ecfg, seed);
    const Tensor input = normal_tensor(rng, 6, 5);
    const Tensor target = normal_tensor(rng, 6, 3);
    const MlpParams& m = ens.members[0];
    std::vector<Tensor> params;
    for (std::size_t i = 0; i < m.tensor_count(); ++i) params.push_back(m.tensor(i));
    const ScalarFn f = [&](Tape& tape, std::span<const Var> p) {
      const Var h = relu(affine(tape.constant(input), p[0], p[1]));
      return mean(squared_norm(affine(h, p[2], p[3]) - tape.constant(target)));
    };
    CheckOutcome o = from_report("loss ensemble member", check_gradient(f, params, tol));
    Tape tape;
    const double direct = member_loss(tape, m, false, input, target).value()(0, 0);
    if (std::abs(direct - evaluate(f, params)) > 1e-12) {
      o.passed = false;
      o.detail += "; member_loss value differs from the reference expression";
    }
    return o;
  }));

  out.push_back(guarded("loss disagreement", [&] {
    std::vector<Tensor> params;
    for (int i = 0; i < 4; ++i) params.push_back(normal_tensor(rng, 3, 5));
    const ScalarFn f = [](Tape&, std::span<const Var> p) { return sum(disagreement_reward(p)); };
    return from_report("loss disagreement", check_gradient(f, params, tol));
  }));

  for (const ActionEncoder& coder : {ActionEncoder::one_hot(3), ActionEncoder::factored(2, 2, 2)}) {
    const std::string name = std::string("loss disagreement through ensemble (") +
                             (coder.is_one_hot() ? "one-hot" : "factored") + " actions)";
    out.push_back(guarded(name, [&] {
      const ForwardEnsemble ens = make_ensemble(3, coder, ecfg, seed + 1);
      Tensor actions = uniform_tensor(rng, 2, coder.action_count(), 0.0, 1.0);
      const std::vector<Tensor> params{normal_tensor(rng, 2, 3), actions};
      const ScalarFn f = [&](Tape& tape, std::span<const Var> p) {
        const auto preds = predict_all(tape, ens, p[0], p[1]);
        return sum(disagreement_reward(std::span<const Var>(preds)));
      };
      return from_report(name, check_gradient(f, params, tol));
    }));
  }

  const std::vector<int> hidden{16};
  out.push_back(guarded("loss ppo", [&] {
    const PolicyNet p = make_policy(3, 4, hidden, seed + 2);
    const RolloutBatch b = random_batch(p, 8, rng);
    std::vector<Index> idx(8);
    std::iota(idx.begin(), idx.end(), Index{0});
    const PpoConfig cfg;
    const ScalarFn f = [&](Tape& tape, std::span<const Var> vars) {
      return ppo_loss(TracedPolicy(p, vars), tape, b, idx, b.advantage, cfg);
    };
    return from_report("loss ppo", check_gradient(f, tensors_of(p), tol));
  }));

  out.push_back(guarded("loss reinforce", [&] {
    const PolicyNet p = make_policy(3, 4, hidden, seed + 3);
    const RolloutBatch b = random_batch(p, 8, rng);
    std::vector<Index> idx(8);
    std::iota(idx.begin(), idx.end(), Index{0});
    const Vector weight = normal_tensor(rng, 8, 1).col(0);
    const ScalarFn f = [&](Tape& tape, std::span<const Var> vars) {
      return reinforce_loss(TracedPolicy(p, vars), tape, b, idx, weight);
    };
    return from_report("loss reinforce", check_gradient(f, tensors_of(p), tol));
  }));

  out.push_back(guarded("objective imagined rollout, soft actions, H = 3", [&] {
    const ForwardEnsemble ens = make_ensemble(3, ActionEncoder::one_hot(4), ecfg, seed + 4);
    const PolicyNet p = make_policy(3, 4, hidden, seed + 5);
    const Tensor obs = normal_tensor(rng, 5, 3);
    ExploreConfig ec;
    ec.horizon = 3;
    ec.relaxation = ActionRelaxation::Soft;
    const ScalarFn f = [&](Tape& tape, std::span<const Var> vars) {
      CounterRng unused(0, "unused");
      return explore_objective(TracedPolicy(p, vars), tape, ens, obs, ec, unused);
    };
    return from_report("objective imagined rollout, soft actions, H = 3", check_gradient(f, tensors_of(p), tol));
  }));

  return out;
}

double brute_force_variance(const std::vector<std::vector<double>>& members) {
  const std::size_t k = members.size();
  const std::size_t d = members.front().size();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    long double mean = 0.0L;
    for (std::size_t i = 0; i < k; ++i) mean += members[i][j];
    mean /= static_cast<long double>(k);
    long double ss = 0.0L;
    for (std::size_t i = 0; i < k; ++i) {
      const long double dev = members[i][j] - mean;
      ss += dev * dev;
    }
    total += static_cast<double>(ss / static_cast<long double>(k));
  }
  return total;
}

std::vector<Tensor> random_predictions(int k, int rows, int dim, std::uint64_t seed, std::uint64_t index) {
  CounterRng rng(seed, "variance-oracle", index);
  const double scale = std::exp(rng.uniform(-3.0, 3.0));
  const double offset = rng.normal(0.0, 5.0);
  std::vector<Tensor> preds;
  for (int i = 0; i < k; ++i) {
    Tensor t(rows, dim);
    for (Index e = 0; e < t.size(); ++e) t.data()[e] = offset + scale * rng.normal();
    preds.push_back(std::move(t));
  }
  return preds;
}

CheckOutcome variance_oracle_check(int cases, std::uint64_t seed, double tol) {
  CounterRng shape_rng(seed, "variance-oracle-shape");
  double worst = 0.0;
  double worst_perm = 0.0;
  for (int c = 0; c < cases; ++c) {
    const int k = 2 + static_cast<int>(shape_rng.uniform_int(15));
    const int dim = 1 + static_cast<int>(shape_rng.uniform_int(64));
    const int rows = 1 + static_cast<int>(shape_rng.uniform_int(4));
    std::vector<Tensor> preds = random_predictions(k, rows, dim, seed, static_cast<std::uint64_t>(c));
    const Vector got = disagreement_reward(preds);
    for (int r = 0; r < rows; ++r) {
      std::vector<std::vector<double>> members;
      for (const auto& p : preds) members.emplace_back(p.row(r).data(), p.row(r).data() + dim);
      const double want = brute_force_variance(members);
      const double err = std::abs(got(r) - want) / std::max(1.0, std::abs(want));
      worst = std::max(worst, err);
    }
    // Reverse then rotate: a permutation that moves every member when k > 2.
    std::reverse(preds.begin(), preds.end());
    std::rotate(preds.begin(), preds.begin() + 1, preds.end());
    const Vector permuted = disagreement_reward(preds);
    worst_perm = std::max(worst_perm, ((permuted - got).array().abs() / got.array().abs().max(1.0)).maxCoeff());
  }
  std::ostringstream detail;
  detail << cases << " cases, max rel error " << worst << ", max permutation change " << worst_perm;
  return {"variance oracle", worst <= tol && worst_perm <= tol, detail.str()};
}

std::vector<CheckOutcome> environment_checks(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  for (const auto& name : known_env_names()) {
    EnvOptions opts;
    opts.name = name;
    opts.seed = seed;
    for (const auto& r : env_self_test(opts)) out.push_back({r.name, r.passed, r.detail});
  }
  return out;
}

}  // namespace disagree
