#pragma once

#include "disagree/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace disagree {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Finite-difference checks for every op kind, every module loss and the
/// soft-relaxed imagined-rollout objective through three steps.
std::vector<CheckOutcome> gradient_checks(std::uint64_t seed, double tolerance = 1e-4);

/// Ensemble variance of one input computed the slow way: per-dimension mean
/// over members, then the mean squared deviation, summed over dimensions.
/// members[i] is member i's prediction for that input.
double brute_force_variance(const std::vector<std::vector<double>>& members);

/// disagreement_reward against brute_force_variance on `cases` random
/// (k, dim) draws, plus a member-permutation check on each draw.
CheckOutcome variance_oracle_check(int cases, std::uint64_t seed, double tolerance = 1e-10);

/// Random k x dim predictions with a per-case scale, for the oracle and the CLI.
std::vector<Tensor> random_predictions(int k, int rows, int dim, std::uint64_t seed, std::uint64_t index);

/// env_self_test for every environment at its default options.
std::vector<CheckOutcome> environment_checks(std::uint64_t seed);

}  // namespace disagree
