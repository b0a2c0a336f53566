#pragma once

#include "disagree/tape.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace disagree {

/// Builds a scalar (1 x 1) output on the given tape from parameter leaves.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
  std::string worst;  // "tensor t, element e: tape=..., fd=..."
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// Compares tape gradients of f against central finite differences at
/// params. f must be deterministic in params.
GradCheckReport check_gradient(const ScalarFn& f, std::span<const Tensor> params,
                               double tolerance, const GradCheckOptions& options = {});

/// Evaluates f without recording gradients for any parameter.
double evaluate(const ScalarFn& f, std::span<const Tensor> params);

}  // namespace disagree
