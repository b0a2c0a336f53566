#include "disagree/policy.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace disagree {

namespace {

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Applies layers whose weight/bias leaves are vars[offset..].
Var apply(const MlpParams& layout, std::span<const Var> vars, std::size_t offset, Var x) {
  if (x.cols() != layout.in_dim()) {
    throw ShapeError("policy: input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(layout.in_dim()));
  }
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    x = activate(layout.layers[l].activation, affine(x, vars[offset + 2 * l], vars[offset + 2 * l + 1]));
  }
  return x;
}

Tensor gather_rows(const Tensor& src, std::span<const Index> idx) {
  Tensor out(static_cast<Index>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = src.row(idx[i]);
  return out;
}

Tensor action_onehot(const RolloutBatch& batch, std::span<const Index> idx, Index width) {
  Tensor out = Tensor::Zero(static_cast<Index>(idx.size()), width);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out(static_cast<Index>(i), batch.actions[static_cast<std::size_t>(idx[i])]) = 1.0;
  }
  return out;
}

bool finite_scalar(Var v) { return std::isfinite(v.value()(0, 0)); }

}  // namespace

// ---------------------------------------------------------------------------

Tensor& PolicyNet::tensor(std::size_t i) {
  if (i < trunk.tensor_count()) return trunk.tensor(i);
  i -= trunk.tensor_count();
  if (i < logits.tensor_count()) return logits.tensor(i);
  return value.tensor(i - logits.tensor_count());
}

const Tensor& PolicyNet::tensor(std::size_t i) const {
  return const_cast<PolicyNet*>(this)->tensor(i);
}

PolicyNet PolicyNet::zeros_like() const {
  return PolicyNet{trunk.zeros_like(), logits.zeros_like(), value.zeros_like()};
}

bool operator==(const PolicyNet& a, const PolicyNet& b) {
  return a.trunk == b.trunk && a.logits == b.logits && a.value == b.value;
}

PolicyNet make_policy(int in_dim, int action_count, std::span<const int> hidden, std::uint64_t seed) {
  if (hidden.empty()) throw std::invalid_argument("policy: need at least one hidden layer");
  std::vector<int> dims{in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  const std::vector<Activation> acts(hidden.size(), Activation::Tanh);
  const int width = hidden.back();
  CounterRng trunk_rng(seed, "policy-trunk");
  CounterRng logits_rng(seed, "policy-logits");
  CounterRng value_rng(seed, "policy-value");
  PolicyNet p{make_mlp(dims, acts, trunk_rng),
              make_mlp({width, action_count}, {Activation::Identity}, logits_rng),
              make_mlp({width, 1}, {Activation::Identity}, value_rng)};
  p.logits.layers[0].weight *= 0.01;
  return p;
}

Tensor policy_logits(const PolicyNet& policy, const Tensor& obs) {
  return forward(policy.logits, forward(policy.trunk, obs));
}

Tensor policy_probs(const PolicyNet& policy, const Tensor& obs) {
  return kernels::softmax(policy_logits(policy, obs));
}

Vector policy_values(const PolicyNet& policy, const Tensor& obs) {
  return forward(policy.value, forward(policy.trunk, obs)).col(0);
}

int sample_categorical(const RowVector& probs, CounterRng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the final partial sum: take the last non-zero entry.
  for (Index i = probs.size() - 1; i > 0; --i) {
    if (probs(i) > 0.0) return static_cast<int>(i);
  }
  return 0;
}

std::vector<ActResult> act_batch(const PolicyNet& policy, const Tensor& obs, CounterRng& rng) {
  const Tensor h = forward(policy.trunk, obs);
  const Tensor probs = kernels::softmax(forward(policy.logits, h));
  const Tensor values = forward(policy.value, h);
  std::vector<ActResult> out(static_cast<std::size_t>(obs.rows()));
  for (Index r = 0; r < obs.rows(); ++r) {
    const int a = sample_categorical(probs.row(r), rng);
    out[static_cast<std::size_t>(r)] =
        ActResult{Action{a}, std::log(std::max(probs(r, a), kernels::kLogFloor)), values(r, 0)};
  }
  return out;
}

ActResult act(const PolicyNet& policy, const Observation& obs, CounterRng& rng) {
  return act_batch(policy, Tensor(obs), rng).front();
}

int greedy_action(const PolicyNet& policy, const Observation& obs) {
  const Tensor logits = policy_logits(policy, Tensor(obs));
  Index best = 0;
  logits.row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------

TracedPolicy::TracedPolicy(Tape& tape, const PolicyNet& policy, bool trainable) : layout_(&policy) {
  for (std::size_t i = 0; i < policy.tensor_count(); ++i) {
    vars_.push_back(trainable ? tape.parameter(policy.tensor(i)) : tape.constant(policy.tensor(i)));
  }
}

TracedPolicy::TracedPolicy(const PolicyNet& layout, std::span<const Var> tensors)
    : layout_(&layout), vars_(tensors.begin(), tensors.end()) {
  if (vars_.size() != layout.tensor_count()) throw ShapeError("traced policy: tensor count mismatch");
}

Var TracedPolicy::hidden(Var obs) const { return apply(layout_->trunk, vars_, 0, obs); }

Var TracedPolicy::logits(Var obs) const {
  return apply(layout_->logits, vars_, layout_->trunk.tensor_count(), hidden(obs));
}

TracedPolicy::Heads TracedPolicy::operator()(Var obs) const {
  const Var h = hidden(obs);
  const std::size_t lo = layout_->trunk.tensor_count();
  const std::size_t vo = lo + layout_->logits.tensor_count();
  return Heads{apply(layout_->logits, vars_, lo, h), apply(layout_->value, vars_, vo, h)};
}

PolicyNet TracedPolicy::gradients() const {
  PolicyNet g = layout_->zeros_like();
  Tape& tape = vars_.front().tape();
  for (std::size_t i = 0; i < vars_.size(); ++i) g.tensor(i) = tape.grad(vars_[i]);
  return g;
}

// ---------------------------------------------------------------------------

Vector normalize_advantages(const Vector& a) {
  if (a.size() < 2) return a;
  const double mu = a.mean();
  const double sd = std::sqrt((a.array() - mu).square().mean());
  if (sd < 1e-12) return a;
  return (a.array() - mu) / (sd + 1e-8);
}

void RolloutBatch::validate() const {
  const Index n = size();
  if (obs.rows() != n || logprob.size() != n || value.size() != n || reward.size() != n ||
      static_cast<Index>(done.size()) != n) {
    throw std::invalid_argument("rollout: inconsistent sequence lengths");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("rollout: gamma and lambda must lie in [0, 1]");
  }
}

void compute_gae(RolloutBatch& batch) {
  batch.validate();
  const Index n = batch.size();
  batch.advantage.resize(n);
  double next_adv = 0.0;
  double next_value = batch.last_value;
  for (Index t = n - 1; t >= 0; --t) {
    const double live = batch.done[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = batch.reward(t) + batch.gamma * next_value * live - batch.value(t);
    next_adv = delta + batch.gamma * batch.lambda * live * next_adv;
    batch.advantage(t) = next_adv;
    next_value = batch.value(t);
  }
  batch.ret = batch.advantage + batch.value;
}

Vector discounted_returns(const Vector& reward, const std::vector<char>& done, double gamma) {
  Vector out(reward.size());
  double acc = 0.0;
  for (Index t = reward.size() - 1; t >= 0; --t) {
    if (done[static_cast<std::size_t>(t)]) acc = 0.0;
    acc = reward(t) + gamma * acc;
    out(t) = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------

Var ppo_loss(const TracedPolicy& net, Tape& tape, const RolloutBatch& batch,
             std::span<const Index> idx, const Vector& advantage, const PpoConfig& cfg,
             UpdateStats* stats) {
  const auto heads = net(tape.constant(gather_rows(batch.obs, idx)));
  const Index n = static_cast<Index>(idx.size());
  const Var probs = softmax(heads.logits);
  const Var p_taken = row_sum(probs * tape.constant(action_onehot(batch, idx, probs.cols())));

  Tensor inv_old(n, 1), coef(n, 1), clipped_part(n, 1);
  int clipped = 0;
  double kl = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index row = idx[static_cast<std::size_t>(i)];
    const double p_old = std::exp(batch.logprob(row));
    inv_old(i, 0) = 1.0 / p_old;
    const double ratio = p_taken.value()(i, 0) * inv_old(i, 0);
    const double a = advantage(row);
    // The clipped branch of min(r A, clip(r) A) carries no gradient.
    const bool at_clip = (a > 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
    coef(i, 0) = at_clip ? 0.0 : a;
    clipped_part(i, 0) = at_clip ? std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a : 0.0;
    clipped += at_clip;
    kl += batch.logprob(row) - std::log(std::max(p_taken.value()(i, 0), kernels::kLogFloor));
  }
  const Var ratio = p_taken * tape.constant(inv_old);
  const Var surrogate = ratio * tape.constant(coef) + tape.constant(clipped_part);
  const Var policy_loss = -mean(surrogate);
  const Var entropy = -scale(sum(probs * log(probs)), 1.0 / static_cast<double>(n));
  Tensor returns(n, 1);
  for (Index i = 0; i < n; ++i) returns(i, 0) = batch.ret(idx[static_cast<std::size_t>(i)]);
  const Var value_loss = mean(squared_norm(heads.value - tape.constant(returns)));

  if (stats) {
    stats->policy_loss += policy_loss.value()(0, 0);
    stats->value_loss += value_loss.value()(0, 0);
    stats->entropy += entropy.value()(0, 0);
    stats->clip_fraction += static_cast<double>(clipped) / static_cast<double>(n);
    stats->approx_kl += kl / static_cast<double>(n);
  }
  return policy_loss + scale(value_loss, cfg.value_coef) - scale(entropy, cfg.entropy_coef);
}

namespace {

// Gradient of -explore_objective at the current policy.
bool explore_gradient(const PolicyNet& policy, const ForwardEnsemble& ens, const Tensor& obs,
                      const ExploreConfig& cfg, CounterRng& rng, PolicyNet& grad, double& objective) {
  Tape tape;
  const TracedPolicy net(tape, policy, true);
  const Var obj = explore_objective(net, tape, ens, obs, cfg, rng);
  objective = obj.value()(0, 0);
  if (!std::isfinite(objective)) return false;
  tape.backward(-obj);
  grad = net.gradients();
  return true;
}

UpdateStats ppo_loop(PolicyNet& policy, Optimizer& opt, const RolloutBatch& batch,
                     const PpoConfig& cfg, CounterRng& shuffle_rng, double mix,
                     const ForwardEnsemble* ens, const Tensor* explore_obs,
                     const ExploreConfig* explore, CounterRng* action_rng) {
  if (!(mix >= 0.0 && mix <= 1.0)) throw std::invalid_argument("combined_update: mix must lie in [0, 1]");
  if (cfg.epochs < 0 || cfg.minibatch < 1) throw std::invalid_argument("ppo: bad epochs/minibatch");
  if (batch.advantage.size() != batch.size() || batch.ret.size() != batch.size()) {
    throw std::invalid_argument("ppo: compute_gae() has not been run on this batch");
  }
  UpdateStats stats;
  const Index n = batch.size();
  if (n == 0) return stats;
  const Vector adv = cfg.normalize_advantages ? normalize_advantages(batch.advantage) : batch.advantage;
  std::vector<Index> order(static_cast<std::size_t>(n));
  const Index mb = std::min<Index>(cfg.minibatch, n);
  double objective_sum = 0.0;
  int measured = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    if (n > mb) {
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);
      }
    }
    for (Index start = 0; start < n; start += mb) {
      const std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(std::min(mb, n - start)));
      PolicyNet g_ppo, g_exp;
      if (mix < 1.0) {
        Tape tape;
        const TracedPolicy net(tape, policy, true);
        const Var loss = ppo_loss(net, tape, batch, idx, adv, cfg, &stats);
        ++measured;
        if (!finite_scalar(loss)) {
          std::cerr << "ppo: non-finite loss at update step " << stats.steps << "; skipped\n";
          ++stats.skipped;
          continue;
        }
        tape.backward(loss);
        g_ppo = net.gradients();
      }
      if (mix > 0.0) {
        double objective = 0.0;
        if (!explore_gradient(policy, *ens, *explore_obs, *explore, *action_rng, g_exp, objective)) {
          std::cerr << "explore: non-finite objective at update step " << stats.steps << "; skipped\n";
          ++stats.skipped;
          continue;
        }
        objective_sum += objective;
      }
      const PolicyNet g = mix == 0.0 ? g_ppo : mix == 1.0 ? g_exp : blend(g_exp, mix, g_ppo, 1.0 - mix);
      if (opt.step(policy, g)) ++stats.steps;
      else ++stats.skipped;
    }
  }
  if (measured > 0) {
    const double m = measured;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.clip_fraction /= m;
    stats.approx_kl /= m;
  }
  if (mix > 0.0 && stats.steps > 0) stats.objective = objective_sum / stats.steps;
  return stats;
}

}  // namespace

UpdateStats ppo_update(PolicyNet& policy, Optimizer& opt, const RolloutBatch& batch,
                       const PpoConfig& cfg, CounterRng& rng) {
  return ppo_loop(policy, opt, batch, cfg, rng, 0.0, nullptr, nullptr, nullptr, nullptr);
}

UpdateStats combined_update(PolicyNet& policy, Optimizer& opt, const ForwardEnsemble& ens,
                            const RolloutBatch& batch, const Tensor& explore_obs, double mix,
                            const PpoConfig& ppo, const ExploreConfig& explore,
                            CounterRng& shuffle_rng, CounterRng& action_rng) {
  return ppo_loop(policy, opt, batch, ppo, shuffle_rng, mix, &ens, &explore_obs, &explore, &action_rng);
}

// ---------------------------------------------------------------------------

Var reinforce_loss(const TracedPolicy& net, Tape& tape, const RolloutBatch& batch,
                   std::span<const Index> idx, const Vector& weight) {
  const Var probs = softmax(net.logits(tape.constant(gather_rows(batch.obs, idx))));
  const Var logp = log(row_sum(probs * tape.constant(action_onehot(batch, idx, probs.cols()))));
  Tensor w(static_cast<Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) w(static_cast<Index>(i), 0) = weight(idx[i]);
  return -mean(logp * tape.constant(w));
}

UpdateStats reinforce_update(PolicyNet& policy, Optimizer& opt, const RolloutBatch& batch,
                             ReinforceState& state, const ReinforceConfig& cfg) {
  batch.validate();
  UpdateStats stats;
  const Index n = batch.size();
  if (n == 0) return stats;
  const Vector returns = discounted_returns(batch.reward, batch.done, batch.gamma);
  if (!state.initialized) {
    state.baseline = returns.mean();
    state.initialized = true;
  }
  const Tensor centered = (returns.array() - state.baseline).matrix();
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});

  const Vector weight = centered.col(0);
  auto surrogate = [&](const TracedPolicy& net, Tape& tape, std::span<const Index> idx) {
    return reinforce_loss(net, tape, batch, idx, weight);
  };

  Tape tape;
  const TracedPolicy net(tape, policy, true);
  const Var loss = surrogate(net, tape, all);
  stats.policy_loss = loss.value()(0, 0);
  if (cfg.measure_variance) {
    stats.grad_variance = per_sample_gradient_variance(policy, n, [&](const TracedPolicy& p, Tape& t, Index i) {
      const Index one[1] = {i};
      return surrogate(p, t, one);
    });
  }
  state.baseline = cfg.baseline_decay * state.baseline + (1.0 - cfg.baseline_decay) * returns.mean();
  if (!finite_scalar(loss)) {
    std::cerr << "reinforce: non-finite loss; update skipped\n";
    stats.skipped = 1;
    return stats;
  }
  tape.backward(loss);
  if (opt.step(policy, net.gradients())) stats.steps = 1;
  else stats.skipped = 1;
  return stats;
}

double per_sample_gradient_variance(const PolicyNet& policy, Index rows,
                                    const std::function<Var(const TracedPolicy&, Tape&, Index)>& loss) {
  if (rows < 2) return 0.0;
  std::vector<Vector> grads;
  for (Index i = 0; i < rows; ++i) {
    Tape tape;
    const TracedPolicy net(tape, policy, true);
    tape.backward(loss(net, tape, i));
    const PolicyNet g = net.gradients();
    Index total = 0;
    for (std::size_t t = 0; t < g.tensor_count(); ++t) total += g.tensor(t).size();
    Vector flat(total);
    Index off = 0;
    for (std::size_t t = 0; t < g.tensor_count(); ++t) {
      flat.segment(off, g.tensor(t).size()) = Eigen::Map<const Vector>(g.tensor(t).data(), g.tensor(t).size());
      off += g.tensor(t).size();
    }
    grads.push_back(std::move(flat));
  }
  Vector mean_g = Vector::Zero(grads.front().size());
  for (const auto& g : grads) mean_g += g;
  mean_g /= static_cast<double>(rows);
  double acc = 0.0;
  for (const auto& g : grads) acc += (g - mean_g).squaredNorm();
  return acc / static_cast<double>(rows);
}

// ---------------------------------------------------------------------------

Var straight_through_onehot(Var logits, CounterRng& rng) {
  Tape& tape = logits.tape();
  const Var probs = softmax(logits);
  Tensor hard = Tensor::Zero(probs.rows(), probs.cols());
  for (Index r = 0; r < probs.rows(); ++r) hard(r, sample_categorical(probs.value().row(r), rng)) = 1.0;
  // (p - sg(p)) is exactly zero in the forward pass, so the value is hard.
  return (probs - stop_gradient(probs)) + tape.constant(hard);
}

Var explore_objective(const TracedPolicy& net, Tape& tape, const ForwardEnsemble& ens,
                      const Tensor& obs, const ExploreConfig& cfg, CounterRng& rng) {
  if (cfg.horizon < 1) throw std::invalid_argument("explore: horizon must be at least 1");
  Var state = tape.constant(obs);
  Var objective = tape.constant(0.0);
  double discount = 1.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    const Var logits = net.logits(state);
    const Var action = cfg.relaxation == ActionRelaxation::StraightThrough
                           ? straight_through_onehot(logits, rng)
                           : softmax(logits);
    const std::vector<Var> preds = predict_all(tape, ens, state, action);
    objective = objective + scale(mean(disagreement_reward(std::span<const Var>(preds))), discount * cfg.reward_scale);
    discount *= cfg.gamma;
    if (t + 1 < cfg.horizon) {
      Var total = preds[0];
      for (std::size_t i = 1; i < preds.size(); ++i) total = total + preds[i];
      state = scale(total, 1.0 / static_cast<double>(preds.size()));
    }
  }
  return objective;
}

UpdateStats differentiable_explore_update(PolicyNet& policy, Optimizer& opt,
                                          const ForwardEnsemble& ens, const Tensor& obs,
                                          const ExploreConfig& cfg, CounterRng& rng) {
  UpdateStats stats;
  PolicyNet grad;
  if (!explore_gradient(policy, ens, obs, cfg, rng, grad, stats.objective)) {
    std::cerr << "explore: non-finite objective; update skipped\n";
    stats.skipped = 1;
    return stats;
  }
  if (opt.step(policy, grad)) stats.steps = 1;
  else stats.skipped = 1;
  return stats;
}

std::string_view optimizer_name(PolicyOptimizerKind kind) {
  switch (kind) {
    case PolicyOptimizerKind::Ppo: return "ppo";
    case PolicyOptimizerKind::Reinforce: return "reinforce";
    case PolicyOptimizerKind::Differentiable: return "differentiable";
    case PolicyOptimizerKind::Combined: return "combined";
  }
  return "unknown";
}

PolicyOptimizerKind parse_optimizer(std::string_view name) {
  for (auto k : {PolicyOptimizerKind::Ppo, PolicyOptimizerKind::Reinforce,
                 PolicyOptimizerKind::Differentiable, PolicyOptimizerKind::Combined}) {
    if (optimizer_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown optimizer '" + std::string(name) +
                              "' (expected ppo | reinforce | differentiable | combined)");
}

}  // namespace disagree
