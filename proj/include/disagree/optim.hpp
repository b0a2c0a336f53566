#pragma once

#include "disagree/tensor.hpp"

#include <cmath>
#include <concepts>
#include <iostream>
#include <string>
#include <vector>

namespace disagree {

/// Anything exposing its tensors by index: MlpParams, PolicyNet.
template <typename P>
concept ParamSet = requires(P p, const P cp, std::size_t i) {
  { p.tensor_count() } -> std::convertible_to<std::size_t>;
  { p.tensor(i) } -> std::same_as<Tensor&>;
  { cp.tensor(i) } -> std::same_as<const Tensor&>;
};

template <ParamSet P>
bool grads_finite(const P& grads) {
  for (std::size_t i = 0; i < grads.tensor_count(); ++i) {
    if (!all_finite(grads.tensor(i))) return false;
  }
  return true;
}

template <ParamSet P>
void check_same_layout(const P& params, const P& grads) {
  if (params.tensor_count() != grads.tensor_count()) {
    throw ShapeError("optimizer: gradient tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const Tensor& p = params.tensor(i);
    const Tensor& g = grads.tensor(i);
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeError("optimizer: tensor " + std::to_string(i) + " is " + shape_string(p) +
                       " but gradient is " + shape_string(g));
    }
  }
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
  long rejected = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step (gradient descent direction). Returns false
/// and leaves params and state untouched if any gradient is non-finite.
template <ParamSet P>
bool adam_step(P& params, const P& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {}) {
  check_same_layout(params, grads);
  if (!grads_finite(grads)) {
    ++state.rejected;
    std::cerr << "adam: non-finite gradient at step " << state.step + 1
              << "; update rejected\n";
    return false;
  }
  const std::size_t n = params.tensor_count();
  if (state.m.size() != n) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < n; ++i) {
      state.m.push_back(Tensor::Zero(params.tensor(i).rows(), params.tensor(i).cols()));
      state.v.push_back(Tensor::Zero(params.tensor(i).rows(), params.tensor(i).cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& g = grads.tensor(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    params.tensor(i).array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
  return true;
}

/// Plain gradient descent; same rejection rule as adam_step.
template <ParamSet P>
bool sgd_step(P& params, const P& grads, double lr) {
  check_same_layout(params, grads);
  if (!grads_finite(grads)) {
    std::cerr << "sgd: non-finite gradient; update rejected\n";
    return false;
  }
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    params.tensor(i) -= lr * grads.tensor(i);
  }
  return true;
}

enum class OptimizerKind { Adam, Sgd };

/// Learning rate plus whatever state the chosen rule keeps.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 3e-4;
  AdamConfig adam{};
  AdamState state{};

  template <ParamSet P>
  bool step(P& params, const P& grads) {
    return kind == OptimizerKind::Adam ? adam_step(params, grads, state, lr, adam)
                                       : sgd_step(params, grads, lr);
  }

  friend bool operator==(const Optimizer&, const Optimizer&) = default;
};

/// grads_a * wa + grads_b * wb, tensor by tensor.
template <ParamSet P>
P blend(const P& a, double wa, const P& b, double wb) {
  check_same_layout(a, b);
  P out = a;
  for (std::size_t i = 0; i < out.tensor_count(); ++i) {
    out.tensor(i) = wa * a.tensor(i) + wb * b.tensor(i);
  }
  return out;
}

}  // namespace disagree
