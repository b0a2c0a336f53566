#pragma once

#include "disagree/envs.hpp"
#include "disagree/intrinsic.hpp"
#include "disagree/mlp.hpp"
#include "disagree/optim.hpp"

#include <functional>
#include <string_view>
#include <vector>

namespace disagree {

/// Shared tanh trunk with a logits head and a value head. The input is the
/// feature vector phi(x), so imagined states can be fed back in.
struct PolicyNet {
  MlpParams trunk;
  MlpParams logits;
  MlpParams value;

  Index in_dim() const { return trunk.in_dim(); }
  Index action_count() const { return logits.out_dim(); }
  std::size_t tensor_count() const {
    return trunk.tensor_count() + logits.tensor_count() + value.tensor_count();
  }
  Tensor& tensor(std::size_t i);
  const Tensor& tensor(std::size_t i) const;
  PolicyNet zeros_like() const;
  friend bool operator==(const PolicyNet& a, const PolicyNet& b);
};

/// Streams "policy-trunk", "policy-logits", "policy-value". The logits head
/// starts scaled by 0.01 so the initial policy is close to uniform.
PolicyNet make_policy(int in_dim, int action_count, std::span<const int> hidden, std::uint64_t seed);

Tensor policy_logits(const PolicyNet& policy, const Tensor& obs);
Tensor policy_probs(const PolicyNet& policy, const Tensor& obs);
Vector policy_values(const PolicyNet& policy, const Tensor& obs);

/// Inverse-CDF draw from a probability row.
int sample_categorical(const RowVector& probs, CounterRng& rng);

struct ActResult {
  Action action;
  double logprob = 0.0;
  double value = 0.0;
};

ActResult act(const PolicyNet& policy, const Observation& obs, CounterRng& rng);
/// Batched act over the rows of obs.
std::vector<ActResult> act_batch(const PolicyNet& policy, const Tensor& obs, CounterRng& rng);
/// Argmax action; ties go to the lowest index.
int greedy_action(const PolicyNet& policy, const Observation& obs);

/// Network bound to a tape; the tensors are either fresh leaves or supplied
/// by the caller (for gradient checks).
class TracedPolicy {
 public:
  TracedPolicy(Tape& tape, const PolicyNet& policy, bool trainable);
  TracedPolicy(const PolicyNet& layout, std::span<const Var> tensors);

  Var hidden(Var obs) const;
  Var logits(Var obs) const;
  struct Heads {
    Var logits;
    Var value;
  };
  Heads operator()(Var obs) const;
  /// Gradients in PolicyNet layout, read after tape.backward().
  PolicyNet gradients() const;

 private:
  const PolicyNet* layout_;
  std::vector<Var> vars_;
};

// ---------------------------------------------------------------------------
// Rollouts and advantages.

/// One batch of consecutive steps. done[t] marks the last step of an
/// episode; last_value bootstraps a trailing unfinished episode.
struct RolloutBatch {
  Tensor obs;
  std::vector<int> actions;
  Vector logprob;
  Vector value;
  Vector intrinsic;
  Vector extrinsic;
  Vector reward;  // what the optimizer maximizes, set by the caller
  std::vector<char> done;
  double last_value = 0.0;
  double gamma = 0.99;
  double lambda = 0.95;

  Vector advantage;
  Vector ret;

  Index size() const { return static_cast<Index>(actions.size()); }
  /// Throws std::invalid_argument on inconsistent lengths or gamma/lambda
  /// outside [0, 1].
  void validate() const;
};

/// Fills advantage and ret with GAE(gamma, lambda).
void compute_gae(RolloutBatch& batch);
/// Zero mean, unit variance; returned unchanged when the spread is ~0.
Vector normalize_advantages(const Vector& a);
/// Discounted reward-to-go, reset at episode ends; no bootstrap.
Vector discounted_returns(const Vector& reward, const std::vector<char>& done, double gamma);

// ---------------------------------------------------------------------------
// Optimizers.

struct PpoConfig {
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int epochs = 4;
  int minibatch = 64;
  bool normalize_advantages = true;
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double objective = 0.0;  // differentiable objective, where applicable
  double grad_variance = 0.0;
  int steps = 0;
  int skipped = 0;
};

/// Clipped surrogate + value loss - entropy bonus for rows idx of batch.
/// Fills stats with per-minibatch diagnostics.
Var ppo_loss(const TracedPolicy& net, Tape& tape, const RolloutBatch& batch,
             std::span<const Index> idx, const Vector& advantage, const PpoConfig& cfg,
             UpdateStats* stats = nullptr);

/// Expects compute_gae() to have run. Minibatches are shuffled from rng
/// unless one minibatch covers the batch.
UpdateStats ppo_update(PolicyNet& policy, Optimizer& opt, const RolloutBatch& batch,
                       const PpoConfig& cfg, CounterRng& rng);

struct ReinforceState {
  double baseline = 0.0;
  bool initialized = false;
};

struct ReinforceConfig {
  double baseline_decay = 0.9;
  bool measure_variance = false;
};

/// -mean(log pi(a|x) * weight) over rows idx of batch.
Var reinforce_loss(const TracedPolicy& net, Tape& tape, const RolloutBatch& batch,
                   std::span<const Index> idx, const Vector& weight);

/// One step on -mean(log pi(a|x) (G - b)) with G the discounted return and b
/// the moving-average baseline from before this batch.
UpdateStats reinforce_update(PolicyNet& policy, Optimizer& opt, const RolloutBatch& batch,
                             ReinforceState& state, const ReinforceConfig& cfg);

/// Trace of the per-sample gradient covariance for a per-row loss.
double per_sample_gradient_variance(const PolicyNet& policy, Index rows,
                                    const std::function<Var(const TracedPolicy&, Tape&, Index)>& loss);

// ---------------------------------------------------------------------------
// Differentiable exploration.

/// Forward value is a sampled hard one-hot per row; the backward pass is
/// that of softmax(logits).
Var straight_through_onehot(Var logits, CounterRng& rng);

enum class ActionRelaxation { StraightThrough, Soft };

struct ExploreConfig {
  int horizon = 1;
  double gamma = 0.99;
  ActionRelaxation relaxation = ActionRelaxation::StraightThrough;
  double reward_scale = 1.0;  // multiplies the objective; puts it in PPO reward units
};

/// reward_scale * sum_{t<H} gamma^t mean(disagreement) over an imagined
/// rollout from obs.
/// The next imagined state is the ensemble-mean prediction.
Var explore_objective(const TracedPolicy& net, Tape& tape, const ForwardEnsemble& ens,
                      const Tensor& obs, const ExploreConfig& cfg, CounterRng& rng);

/// One optimizer step ascending explore_objective. The ensemble is read-only.
UpdateStats differentiable_explore_update(PolicyNet& policy, Optimizer& opt,
                                          const ForwardEnsemble& ens, const Tensor& obs,
                                          const ExploreConfig& cfg, CounterRng& rng);

/// PPO loop where every step applies mix * g_explore + (1 - mix) * g_ppo.
/// mix = 0 never evaluates the explore objective; mix = 1 never applies the
/// PPO gradient.
UpdateStats combined_update(PolicyNet& policy, Optimizer& opt, const ForwardEnsemble& ens,
                            const RolloutBatch& batch, const Tensor& explore_obs, double mix,
                            const PpoConfig& ppo, const ExploreConfig& explore,
                            CounterRng& shuffle_rng, CounterRng& action_rng);

enum class PolicyOptimizerKind { Ppo, Reinforce, Differentiable, Combined };
std::string_view optimizer_name(PolicyOptimizerKind kind);
/// Accepts ppo | reinforce | differentiable | combined.
PolicyOptimizerKind parse_optimizer(std::string_view name);

}  // namespace disagree
