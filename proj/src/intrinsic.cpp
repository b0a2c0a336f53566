#include "disagree/intrinsic.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace disagree {

std::string_view reward_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::Disagreement: return "disagreement";
    case RewardKind::PredError: return "pred-error";
    case RewardKind::PredErrorVariance: return "pred-error-variance";
    case RewardKind::DropoutDisagreement: return "dropout-disagreement";
  }
  return "unknown";
}

RewardKind parse_reward(std::string_view name) {
  for (RewardKind k : {RewardKind::Disagreement, RewardKind::PredError,
                       RewardKind::PredErrorVariance, RewardKind::DropoutDisagreement}) {
    if (reward_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown reward type '" + std::string(name) +
                              "' (expected disagreement | pred-error | pred-error-variance | "
                              "dropout-disagreement)");
}

Var disagreement_reward(std::span<const Var> preds) {
  if (preds.size() < 2) throw std::invalid_argument("disagreement_reward: need at least 2 predictions");
  const double inv_k = 1.0 / static_cast<double>(preds.size());
  std::vector<Var> dev;
  for (std::size_t i = 1; i < preds.size(); ++i) dev.push_back(preds[i] - preds[0]);
  Var total = dev[0];
  for (std::size_t i = 1; i < dev.size(); ++i) total = total + dev[i];
  const Var shift = scale(total, inv_k);
  Var acc = squared_norm(shift);
  for (const Var& d : dev) acc = acc + squared_norm(d - shift);
  return scale(acc, inv_k);
}

// ---------------------------------------------------------------------------

ActionEncoder ActionEncoder::one_hot(int action_count) {
  if (action_count < 1) throw std::invalid_argument("action encoder: action_count must be positive");
  ActionEncoder e;
  e.action_count_ = action_count;
  e.code_dim_ = action_count;
  return e;
}

ActionEncoder ActionEncoder::factored(int table_size, int orientations, int modes) {
  if (table_size < 1 || orientations < 1 || modes < 1) {
    throw std::invalid_argument("action encoder: factor sizes must be positive");
  }
  ActionEncoder e;
  e.action_count_ = table_size * table_size * orientations * modes;
  e.code_dim_ = 2 * table_size + orientations + modes;
  e.matrix_ = Tensor::Zero(e.action_count_, e.code_dim_);
  // Same index layout as TouchTable: ((y * L + x) * O + o) * M + m.
  for (int a = 0; a < e.action_count_; ++a) {
    const int m = a % modes;
    const int o = (a / modes) % orientations;
    const int cell = a / (modes * orientations);
    const int x = cell % table_size;
    const int y = cell / table_size;
    e.matrix_(a, x) = 1.0;
    e.matrix_(a, table_size + y) = 1.0;
    e.matrix_(a, 2 * table_size + o) = 1.0;
    e.matrix_(a, 2 * table_size + orientations + m) = 1.0;
  }
  return e;
}

Tensor ActionEncoder::encode(std::span<const int> actions) const {
  const Tensor hot = disagree::one_hot(std::vector<int>(actions.begin(), actions.end()), action_count_);
  if (is_one_hot()) return hot;
  // Row gather; equal to hot * matrix_ because every other term is an exact zero.
  Tensor out(static_cast<Index>(actions.size()), code_dim_);
  for (std::size_t i = 0; i < actions.size(); ++i) out.row(static_cast<Index>(i)) = matrix_.row(actions[i]);
  return out;
}

Tensor ActionEncoder::encode_dense(const Tensor& actions) const {
  if (actions.cols() != action_count_) {
    throw ShapeError("action encoder: actions " + shape_string(actions) + " but " +
                     std::to_string(action_count_) + " actions");
  }
  return is_one_hot() ? actions : Tensor(actions * matrix_);
}

Var ActionEncoder::encode(Var actions) const {
  if (actions.cols() != action_count_) {
    throw ShapeError("action encoder: actions " + shape_string(actions.value()) + " but " +
                     std::to_string(action_count_) + " actions");
  }
  if (is_one_hot()) return actions;
  Tape& tape = actions.tape();
  return affine(actions, tape.constant(matrix_), tape.constant(Tensor::Zero(1, code_dim_)));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> layer_dims(int in, std::span<const int> hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

std::vector<Activation> layer_acts(std::size_t hidden) {
  std::vector<Activation> acts(hidden, Activation::Relu);
  acts.push_back(Activation::Identity);
  return acts;
}

void check_feat(const Tensor& feat, int feat_dim, const char* what) {
  if (feat.cols() != feat_dim) {
    throw ShapeError(std::string(what) + ": feature width " + std::to_string(feat.cols()) +
                     ", expected " + std::to_string(feat_dim));
  }
}

Tensor join(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("ensemble input: " + shape_string(a) + " and " + shape_string(b));
  }
  Tensor out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

double decayed_lr(double lr, double decay_steps, long step) {
  if (decay_steps <= 0.0) return lr;
  return lr / std::sqrt(1.0 + static_cast<double>(step) / decay_steps);
}

// Positions (oldest-first) of the newest `window` transitions.
std::pair<std::size_t, std::size_t> window_range(const ReplayBuffer& buffer, std::size_t window) {
  const std::size_t n = buffer.size();
  const std::size_t w = window == 0 ? n : std::min(window, n);
  return {n - w, n};
}

void gather(const ReplayBuffer& buffer, std::span<const std::size_t> picks, const ActionEncoder& coder,
            Tensor& input, Tensor& target) {
  const std::size_t n = picks.size();
  const Index d = buffer.at(picks[0]).feat.size();
  Tensor feat(static_cast<Index>(n), d);
  std::vector<int> actions(n);
  target.resize(static_cast<Index>(n), buffer.at(picks[0]).next_feat.size());
  for (std::size_t i = 0; i < n; ++i) {
    const StoredTransition& t = buffer.at(picks[i]);
    if (t.collected_at > buffer.clock()) {
      throw std::logic_error("replay: transition collected at step " +
                             std::to_string(t.collected_at) + " sampled at step " +
                             std::to_string(buffer.clock()));
    }
    feat.row(static_cast<Index>(i)) = t.feat;
    target.row(static_cast<Index>(i)) = t.next_feat;
    actions[i] = t.action;
  }
  input = join(feat, coder.encode(actions));
}

}  // namespace

ForwardEnsemble make_ensemble(int feat_dim, ActionEncoder coder, const EnsembleConfig& config,
                              std::uint64_t seed) {
  if (config.k < 2) throw std::invalid_argument("ensemble: k must be at least 2");
  if (config.k > 32) throw std::invalid_argument("ensemble: k must be at most 32");
  ForwardEnsemble ens;
  ens.feat_dim = feat_dim;
  ens.config = config;
  const auto dims = layer_dims(feat_dim + coder.code_dim(), config.hidden, feat_dim);
  const auto acts = layer_acts(config.hidden.size());
  for (int m = 0; m < config.k; ++m) {
    CounterRng init(seed, "ensemble-member", static_cast<std::uint64_t>(m));
    ens.members.push_back(make_mlp(dims, acts, init));
    ens.adam.emplace_back();
    ens.batch_rng.emplace_back(seed, "ensemble-batch", static_cast<std::uint64_t>(m));
  }
  ens.coder = std::move(coder);
  return ens;
}

Tensor ensemble_input(const ForwardEnsemble& ens, const Tensor& feat, std::span<const int> actions) {
  check_feat(feat, ens.feat_dim, "predict_all");
  if (static_cast<Index>(actions.size()) != feat.rows()) {
    throw ShapeError("predict_all: " + std::to_string(actions.size()) + " actions for " +
                     std::to_string(feat.rows()) + " rows");
  }
  return join(feat, ens.coder.encode(actions));
}

std::vector<Tensor> predict_all(const ForwardEnsemble& ens, const Tensor& feat,
                                std::span<const int> actions) {
  const Tensor input = ensemble_input(ens, feat, actions);
  std::vector<Tensor> out;
  out.reserve(ens.members.size());
  for (const MlpParams& m : ens.members) out.push_back(forward(m, input));
  return out;
}

std::vector<Tensor> predict_all_dense(const ForwardEnsemble& ens, const Tensor& feat,
                                      const Tensor& actions) {
  check_feat(feat, ens.feat_dim, "predict_all");
  const Tensor input = join(feat, ens.coder.encode_dense(actions));
  std::vector<Tensor> out;
  for (const MlpParams& m : ens.members) out.push_back(forward(m, input));
  return out;
}

std::vector<Var> predict_all(Tape& tape, const ForwardEnsemble& ens, Var feat, Var actions) {
  check_feat(feat.value(), ens.feat_dim, "predict_all");
  const Var input = concat({feat, ens.coder.encode(actions)});
  std::vector<Var> out;
  for (const MlpParams& m : ens.members) out.push_back(TracedMlp(tape, m, false)(input));
  return out;
}

Var member_loss(Tape& tape, const MlpParams& member, bool trainable, const Tensor& input,
                const Tensor& target) {
  const TracedMlp net(tape, member, trainable);
  return mean(squared_norm(net(tape.constant(input)) - tape.constant(target)));
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, int k, double keep, std::uint64_t seed)
    : capacity_(capacity), k_(k), keep_(keep), rng_(seed, "bootstrap") {
  if (capacity == 0) throw std::invalid_argument("replay: capacity must be positive");
  if (k < 1 || k > 32) throw std::invalid_argument("replay: k must be in [1, 32]");
  if (!(keep > 0.0 && keep <= 1.0)) throw std::invalid_argument("replay: keep must be in (0, 1]");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::add(const RowVector& feat, int action, const RowVector& next_feat,
                       long collected_at) {
  if (items_.size() < capacity_) items_.emplace_back();
  StoredTransition& slot = items_[head_];
  slot.feat = feat;
  slot.action = action;
  slot.next_feat = next_feat;
  slot.collected_at = collected_at;
  slot.members = 0;
  for (int m = 0; m < k_; ++m) {
    if (rng_.bernoulli(keep_)) slot.members |= (1u << m);
  }
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++inserted_;
}

const StoredTransition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay: index " + std::to_string(i));
  const std::size_t oldest = (head_ + capacity_ - size_) % capacity_;
  return items_[(oldest + i) % capacity_];
}

double TrainReport::mean_loss() const {
  if (member_loss.empty()) return 0.0;
  double s = 0.0;
  for (double l : member_loss) s += l;
  return s / static_cast<double>(member_loss.size());
}

TrainReport train_ensemble(ForwardEnsemble& ens, const ReplayBuffer& buffer, int steps,
                           std::size_t window) {
  TrainReport report;
  report.member_loss.assign(ens.members.size(), 0.0);
  report.steps = steps;
  if (steps <= 0) return report;
  if (buffer.size() == 0) throw std::invalid_argument("train_ensemble: empty buffer");
  const auto [lo, hi] = window_range(buffer, window);
  const int batch = ens.config.batch_size;

  for (std::size_t m = 0; m < ens.members.size(); ++m) {
    const std::uint32_t bit = 1u << m;
    CounterRng& rng = ens.batch_rng[m];
    // Uniform over the window, accepted when the member's bit is set: the
    // same law as uniform over the eligible set, without a scan per call.
    // Only a long run of rejections pays for the scan that decides whether
    // the member has any data at all.
    bool fallback = false;
    auto draw = [&]() -> std::size_t {
      if (!fallback) {
        for (int attempt = 0; attempt < 256; ++attempt) {
          const std::size_t i = lo + rng.uniform_int(hi - lo);
          if (buffer.at(i).members & bit) return i;
        }
        bool any = false;
        for (std::size_t i = lo; i < hi && !any; ++i) any = (buffer.at(i).members & bit) != 0;
        if (any) {
          while (true) {
            const std::size_t i = lo + rng.uniform_int(hi - lo);
            if (buffer.at(i).members & bit) return i;
          }
        }
        std::cerr << "train_ensemble: member " << m << " has no bootstrap data in window; using all "
                  << (hi - lo) << " transitions\n";
        report.fallback.push_back(static_cast<int>(m));
        fallback = true;
      }
      return lo + rng.uniform_int(hi - lo);
    };
    std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
    Tensor input, target;
    double total = 0.0;
    for (int s = 0; s < steps; ++s) {
      for (auto& p : picks) p = draw();
      gather(buffer, picks, ens.coder, input, target);
      Tape tape;
      const TracedMlp net(tape, ens.members[m], true);
      const Var loss = mean(squared_norm(net(tape.constant(input)) - tape.constant(target)));
      tape.backward(loss);
      total += loss.value()(0, 0);
      const double lr = decayed_lr(ens.config.lr, ens.config.lr_decay_steps, ens.adam[m].step);
      adam_step(ens.members[m], net.gradients(), ens.adam[m], lr);
    }
    report.member_loss[m] = total / steps;
  }
  return report;
}

// ---------------------------------------------------------------------------

DropoutModel make_dropout_model(int feat_dim, ActionEncoder coder, std::span<const int> hidden,
                                double drop_p, double lr, std::uint64_t seed) {
  if (!(drop_p >= 0.0 && drop_p < 1.0)) throw std::invalid_argument("dropout: drop_p must be in [0, 1)");
  CounterRng init(seed, "dropout-model");
  DropoutModel model{
      make_mlp(layer_dims(feat_dim + coder.code_dim(), hidden, feat_dim), layer_acts(hidden.size()), init),
      AdamState{},
      CounterRng(seed, "dropout-masks"),
      std::move(coder),
      feat_dim,
      drop_p,
      lr};
  return model;
}

std::vector<Tensor> draw_dropout_masks(const MlpParams& net, Index rows, double drop_p,
                                       CounterRng& rng) {
  const double keep = 1.0 - drop_p;
  std::vector<Tensor> masks;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    Tensor m(rows, net.layers[l].fan_out());
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<Tensor> dropout_predictions(const MlpParams& net, const Tensor& input,
                                        std::span<const std::vector<Tensor>> masks) {
  std::vector<Tensor> out;
  out.reserve(masks.size());
  for (const auto& m : masks) out.push_back(forward_masked(net, input, m));
  return out;
}

Vector dropout_disagreement_reward(const MlpParams& net, const Tensor& input, int passes,
                                   double drop_p, CounterRng& rng) {
  if (passes < 2) throw std::invalid_argument("dropout_disagreement_reward: need at least 2 passes");
  std::vector<std::vector<Tensor>> masks;
  for (int p = 0; p < passes; ++p) masks.push_back(draw_dropout_masks(net, input.rows(), drop_p, rng));
  const std::vector<Tensor> preds = dropout_predictions(net, input, masks);
  return disagreement_reward<double>(preds);
}

TrainReport train_dropout_model(DropoutModel& model, const ReplayBuffer& buffer, int steps,
                                int batch_size, std::size_t window) {
  TrainReport report;
  report.member_loss.assign(1, 0.0);
  report.steps = steps;
  if (steps <= 0) return report;
  if (buffer.size() == 0) throw std::invalid_argument("train_dropout_model: empty buffer");
  const auto [lo, hi] = window_range(buffer, window);
  std::vector<std::size_t> picks(static_cast<std::size_t>(batch_size));
  Tensor input, target;
  double total = 0.0;
  for (int s = 0; s < steps; ++s) {
    for (auto& p : picks) p = lo + model.rng.uniform_int(hi - lo);
    gather(buffer, picks, model.coder, input, target);
    const auto masks = draw_dropout_masks(model.net, input.rows(), model.drop_p, model.rng);
    Tape tape;
    const TracedMlp net(tape, model.net, true);
    const Var loss = mean(squared_norm(net.forward_masked(tape.constant(input), masks) - tape.constant(target)));
    tape.backward(loss);
    total += loss.value()(0, 0);
    adam_step(model.net, net.gradients(), model.adam, model.lr);
  }
  report.member_loss[0] = total / steps;
  return report;
}

// ---------------------------------------------------------------------------

void RunningStd::update(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

void RunningStd::update(const Vector& xs) {
  for (Index i = 0; i < xs.size(); ++i) update(xs(i));
}

double RunningStd::stddev() const { return std::sqrt(variance()); }

Vector RunningStd::normalize(const Vector& xs) const {
  const double sd = stddev();
  return sd > 1e-8 ? Vector(xs / sd) : xs;
}

}  // namespace disagree
