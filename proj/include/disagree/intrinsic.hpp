#pragma once

#include "disagree/mlp.hpp"
#include "disagree/optim.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace disagree {

// ---------------------------------------------------------------------------
// Reward signals. Each takes k member predictions (n x d each) and returns
// one reward per row.

enum class RewardKind { Disagreement, PredError, PredErrorVariance, DropoutDisagreement };

std::string_view reward_name(RewardKind kind);
/// Accepts disagreement | pred-error | pred-error-variance | dropout-disagreement.
RewardKind parse_reward(std::string_view name);

namespace detail {

template <typename S>
void check_predictions(std::span<const MatrixX<S>> preds, Index min_k, const char* what) {
  if (static_cast<Index>(preds.size()) < min_k) {
    throw std::invalid_argument(std::string(what) + ": need at least " + std::to_string(min_k) +
                                " predictions, got " + std::to_string(preds.size()));
  }
  for (const auto& p : preds) {
    if (p.rows() != preds.front().rows() || p.cols() != preds.front().cols()) {
      throw ShapeError(std::string(what) + ": prediction " + shape_string(p) + " vs " +
                       shape_string(preds.front()));
    }
  }
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> member_errors(const MatrixX<S>& pred, const MatrixX<S>& target) {
  return (pred - target).rowwise().squaredNorm();
}

}  // namespace detail

/// (1/k) sum_i ||f_i - mean||^2 per row; the per-dimension population
/// variance summed over dimensions. Never sees the next state.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> disagreement_reward(std::span<const MatrixX<S>> preds) {
  detail::check_predictions(preds, 2, "disagreement_reward");
  // Deviations are taken from member 0 first, so identical members give
  // exactly zero.
  const S k = static_cast<S>(preds.size());
  MatrixX<S> shift = MatrixX<S>::Zero(preds.front().rows(), preds.front().cols());
  for (std::size_t i = 1; i < preds.size(); ++i) shift += preds[i] - preds.front();
  shift /= k;
  Eigen::Matrix<S, Eigen::Dynamic, 1> out = shift.rowwise().squaredNorm();
  for (std::size_t i = 1; i < preds.size(); ++i) out += (preds[i] - preds.front() - shift).rowwise().squaredNorm();
  return out / k;
}

/// (1/k) sum_i ||f_i - target||^2 per row. k = 1 allowed.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> prediction_error_reward(std::span<const MatrixX<S>> preds,
                                                            const MatrixX<S>& target) {
  detail::check_predictions(preds, 1, "prediction_error_reward");
  if (target.rows() != preds.front().rows() || target.cols() != preds.front().cols()) {
    throw ShapeError("prediction_error_reward: target " + shape_string(target) + " vs " +
                     shape_string(preds.front()));
  }
  Eigen::Matrix<S, Eigen::Dynamic, 1> out = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(target.rows());
  for (const auto& p : preds) out += detail::member_errors(p, target);
  return out / static_cast<S>(preds.size());
}

/// Population variance over members of the per-member squared error.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> pred_error_variance_reward(std::span<const MatrixX<S>> preds,
                                                               const MatrixX<S>& target) {
  detail::check_predictions(preds, 2, "pred_error_variance_reward");
  if (target.rows() != preds.front().rows() || target.cols() != preds.front().cols()) {
    throw ShapeError("pred_error_variance_reward: target " + shape_string(target) + " vs " +
                     shape_string(preds.front()));
  }
  const Index n = target.rows();
  const S k = static_cast<S>(preds.size());
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> errs(n, static_cast<Index>(preds.size()));
  for (std::size_t i = 0; i < preds.size(); ++i) errs.col(static_cast<Index>(i)) = detail::member_errors(preds[i], target);
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = errs.rowwise().sum() / k;
  return (errs.colwise() - mean).rowwise().squaredNorm() / k;
}

inline Vector disagreement_reward(const std::vector<Tensor>& preds) {
  return disagreement_reward<double>(preds);
}
inline Vector prediction_error_reward(const std::vector<Tensor>& preds, const Tensor& target) {
  return prediction_error_reward<double>(preds, target);
}
inline Vector pred_error_variance_reward(const std::vector<Tensor>& preds, const Tensor& target) {
  return pred_error_variance_reward<double>(preds, target);
}

/// Traced disagreement: n x 1.
Var disagreement_reward(std::span<const Var> preds);

// ---------------------------------------------------------------------------
// Action codes fed to the forward models.

/// Linear map from an action one-hot to the model's action input. OneHot is
/// the identity. Factored maps a touch-table action to
/// onehot(x) | onehot(y) | onehot(orientation) | onehot(mode).
class ActionEncoder {
 public:
  static ActionEncoder one_hot(int action_count);
  static ActionEncoder factored(int table_size, int orientations, int modes);

  bool is_one_hot() const { return matrix_.size() == 0; }
  int action_count() const { return action_count_; }
  int code_dim() const { return code_dim_; }
  /// action_count x code_dim; empty for one-hot.
  const Tensor& matrix() const { return matrix_; }

  Tensor encode(std::span<const int> actions) const;
  /// Maps an n x action_count (possibly soft) action tensor to codes.
  Tensor encode_dense(const Tensor& actions) const;
  Var encode(Var actions) const;

 private:
  int action_count_ = 0;
  int code_dim_ = 0;
  Tensor matrix_;
};

// ---------------------------------------------------------------------------
// Ensemble.

struct EnsembleConfig {
  int k = 5;
  std::vector<int> hidden{64, 64};
  double lr = 1e-3;
  /// lr_t = lr / sqrt(1 + t / lr_decay_steps); 0 keeps lr constant.
  double lr_decay_steps = 0.0;
  double bootstrap_keep = 0.7;
  int batch_size = 64;
  int epochs = 4;
};

/// k forward models mapping feat | code(action) -> next feat. Each member
/// owns its parameters, Adam state and minibatch stream.
struct ForwardEnsemble {
  std::vector<MlpParams> members;
  std::vector<AdamState> adam;
  std::vector<CounterRng> batch_rng;
  ActionEncoder coder;
  int feat_dim = 0;
  EnsembleConfig config;

  int k() const { return static_cast<int>(members.size()); }
};

/// Member i is drawn from CounterRng(seed, "ensemble-member", i).
ForwardEnsemble make_ensemble(int feat_dim, ActionEncoder coder, const EnsembleConfig& config,
                              std::uint64_t seed);

/// Model input: [feat | code].
Tensor ensemble_input(const ForwardEnsemble& ens, const Tensor& feat, std::span<const int> actions);

/// k predictions, each n x feat_dim. Throws ShapeError on a width mismatch.
std::vector<Tensor> predict_all(const ForwardEnsemble& ens, const Tensor& feat,
                                std::span<const int> actions);
/// Same with a dense (one-hot or soft) n x action_count action tensor.
std::vector<Tensor> predict_all_dense(const ForwardEnsemble& ens, const Tensor& feat,
                                      const Tensor& actions);
/// Traced predictions with the members bound as constants, so gradients
/// reach feat and actions but never the ensemble.
std::vector<Var> predict_all(Tape& tape, const ForwardEnsemble& ens, Var feat, Var actions);

/// Batch-mean squared L2 error of one member.
Var member_loss(Tape& tape, const MlpParams& member, bool trainable, const Tensor& input,
                const Tensor& target);

// ---------------------------------------------------------------------------
// Replay buffer.

struct StoredTransition {
  RowVector feat;
  int action = 0;
  RowVector next_feat;
  long collected_at = 0;
  std::uint32_t members = 0;  // bootstrap mask, bit m for member m
};

/// Ring buffer. The bootstrap mask of each transition is drawn once on
/// insertion from the buffer's own stream.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int k, double keep, std::uint64_t seed);

  void add(const RowVector& feat, int action, const RowVector& next_feat, long collected_at);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  long inserted() const { return inserted_; }
  int k() const { return k_; }
  /// i-th oldest stored transition.
  const StoredTransition& at(std::size_t i) const;

  /// Sampling never returns a transition collected after this step; the
  /// harness advances it as the environment runs.
  void set_clock(long step) { clock_ = step; }
  long clock() const { return clock_; }

 private:
  std::size_t capacity_;
  int k_;
  double keep_;
  CounterRng rng_;
  std::vector<StoredTransition> items_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
  long inserted_ = 0;
  long clock_ = 0;
};

struct TrainReport {
  std::vector<double> member_loss;  // mean minibatch loss over the call
  std::vector<int> fallback;        // members that trained on the full range
  int steps = 0;
  double mean_loss() const;
};

/// `steps` Adam steps per member on minibatches drawn with replacement from
/// the newest `window` transitions (0 = whole buffer) whose mask includes
/// that member. A member with no eligible transition uses the whole window
/// and is reported in `fallback`. Throws std::logic_error if a sampled
/// transition was collected after buffer.clock().
TrainReport train_ensemble(ForwardEnsemble& ens, const ReplayBuffer& buffer, int steps,
                           std::size_t window = 0);

// ---------------------------------------------------------------------------
// Dropout baseline: one model, disagreement across stochastic passes.

struct DropoutModel {
  MlpParams net;
  AdamState adam;
  CounterRng rng;
  ActionEncoder coder;
  int feat_dim = 0;
  double drop_p = 0.2;
  double lr = 1e-3;
};

DropoutModel make_dropout_model(int feat_dim, ActionEncoder coder, std::span<const int> hidden,
                                double drop_p, double lr, std::uint64_t seed);

/// Inverted-dropout masks (n x width per hidden layer) for one pass.
std::vector<Tensor> draw_dropout_masks(const MlpParams& net, Index rows, double drop_p,
                                       CounterRng& rng);
/// One prediction per mask set.
std::vector<Tensor> dropout_predictions(const MlpParams& net, const Tensor& input,
                                        std::span<const std::vector<Tensor>> masks);
/// Disagreement across `passes` stochastic passes. Throws for passes < 2.
Vector dropout_disagreement_reward(const MlpParams& net, const Tensor& input, int passes,
                                   double drop_p, CounterRng& rng);

/// Adam steps on minibatches from the window, one fresh mask per step.
TrainReport train_dropout_model(DropoutModel& model, const ReplayBuffer& buffer, int steps,
                                int batch_size, std::size_t window = 0);

// ---------------------------------------------------------------------------

/// Welford running moments. normalize() divides by the running standard
/// deviation without centering.
class RunningStd {
 public:
  void update(double x);
  void update(const Vector& xs);
  long count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_) : 0.0; }
  double stddev() const;
  Vector normalize(const Vector& xs) const;

 private:
  long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace disagree
