#pragma once

#include "disagree/rng.hpp"
#include "disagree/tensor.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace disagree {

using Observation = RowVector;

struct Action {
  int index = 0;
  friend bool operator==(const Action&, const Action&) = default;
};

/// Small set of string tags attached to a transition, e.g. "touched-object"
/// or "state-class=1".
class InfoTags {
 public:
  void add(std::string tag) { tags_.push_back(std::move(tag)); }
  bool has(std::string_view tag) const;
  /// Value of a "key=value" tag, if present.
  std::optional<std::string> value(std::string_view key) const;
  const std::vector<std::string>& tags() const { return tags_; }

  friend bool operator==(const InfoTags&, const InfoTags&) = default;

 private:
  std::vector<std::string> tags_;
};

inline constexpr std::string_view kTouchedObject = "touched-object";
inline constexpr std::string_view kStateClass = "state-class";
inline constexpr std::string_view kNextClass = "next-class";

struct Transition {
  Observation obs;
  Action action;
  Observation next_obs;
  bool done = false;
  /// Evaluation signal; only fed to the policy where the harness says so.
  double extrinsic = 0.0;
  InfoTags info;
};

bool operator==(const Transition& a, const Transition& b);

struct EnvDescriptor {
  std::string name;
  int d_obs = 0;
  int action_count = 0;
  int horizon = 1;
  std::uint64_t seed = 0;
};

/// Construction parameters for every environment; each env reads the
/// fields it needs.
struct EnvOptions {
  std::string name;
  std::uint64_t seed = 0;
  int horizon = 0;  // 0 selects the environment's default

  // noisy-pairs
  int pairs_dim = 16;
  double pairs_sigma = 0.1;
  // noisy-tv-grid
  int grid_size = 8;
  bool tv = true;
  bool fixed_start = false;
  // sticky-chain
  int chain_length = 32;
  double p_sticky = 0.25;
  // touch-table
  int table_size = 16;
  int orientations = 4;
  int gripper_modes = 2;
  int objects = 1;
  // Fixed task structure (noisy-pairs prototypes, touch-table objects); `seed`
  // only drives per-episode randomness.
  std::uint64_t layout_seed = 0;
};

std::vector<std::string> known_env_names();

class Env {
 public:
  explicit Env(EnvDescriptor descriptor);
  virtual ~Env() = default;

  const EnvDescriptor& descriptor() const { return descriptor_; }

  /// Starts a new episode from the initial-state distribution.
  Observation reset();
  /// Throws std::logic_error after the episode ended (or before the first
  /// reset) and std::out_of_range for an invalid action.
  Transition step(Action action);

  bool done() const { return done_; }
  int episode_step() const { return episode_step_; }
  /// Steps taken over the lifetime of this instance.
  long total_steps() const { return total_steps_; }
  const Observation& observation() const { return current_; }

  virtual std::unique_ptr<Env> clone() const = 0;

 protected:
  struct Outcome {
    Observation next_obs;
    bool terminal = false;
    double extrinsic = 0.0;
    InfoTags info;
  };

  virtual Observation sample_initial() = 0;
  virtual Outcome advance(int action) = 0;

  CounterRng rng_;

 private:
  EnvDescriptor descriptor_;
  Observation current_;
  bool done_ = true;
  bool started_ = false;
  int episode_step_ = 0;
  long total_steps_ = 0;
};

/// Throws std::invalid_argument listing the known names for an unknown one.
std::unique_ptr<Env> make_env(const EnvOptions& options);

/// Ten Gaussian clusters; class 0 is self-transitioning, class 1 jumps to a
/// uniformly random class in 2..9. Actions are ignored; one step per episode.
class NoisyPairs final : public Env {
 public:
  explicit NoisyPairs(const EnvOptions& options);

  int current_class() const { return current_class_; }
  const Tensor& prototypes() const { return prototypes_; }
  /// Index of the nearest prototype.
  int classify(const Observation& obs) const;

  std::unique_ptr<Env> clone() const override { return std::make_unique<NoisyPairs>(*this); }

 protected:
  Observation sample_initial() override;
  Outcome advance(int action) override;

 private:
  Observation sample_class(int c);

  Tensor prototypes_;  // 10 x d, unit rows
  double sigma_;
  int current_class_ = 0;
};

/// N x N grid with a sparse goal and an optional noisy TV. Actions: up,
/// down, left, right, toggle-TV.
class NoisyTvGrid final : public Env {
 public:
  static constexpr int kTvDim = 8;
  enum Move { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kToggle = 4 };

  explicit NoisyTvGrid(const EnvOptions& options);

  int row() const { return row_; }
  int col() const { return col_; }
  bool tv_on() const { return tv_on_; }
  int size() const { return size_; }
  int goal_row() const { return size_ - 1; }
  int goal_col() const { return size_ - 1; }
  /// Places the agent; the episode must be running.
  void set_position(int row, int col);

  std::unique_ptr<Env> clone() const override { return std::make_unique<NoisyTvGrid>(*this); }

 protected:
  Observation sample_initial() override;
  Outcome advance(int action) override;

 private:
  Observation render();

  int size_;
  bool has_tv_;
  bool fixed_start_;
  int row_ = 0;
  int col_ = 0;
  bool tv_on_ = false;
};

/// 1-D chain with sticky actions: with probability p the previously executed
/// action is repeated instead of the chosen one.
class StickyChain final : public Env {
 public:
  enum Move { kLeft = 0, kRight = 1 };

  explicit StickyChain(const EnvOptions& options);

  int position() const { return position_; }
  int length() const { return length_; }
  int previous_action() const { return previous_; }

  std::unique_ptr<Env> clone() const override { return std::make_unique<StickyChain>(*this); }

 protected:
  Observation sample_initial() override;
  Outcome advance(int action) override;

 private:
  int length_;
  double p_sticky_;
  int position_ = 0;
  int previous_ = -1;
};

/// One-step tabletop: pick (cell, orientation, gripper mode). Touching an
/// object requires a cell within Chebyshev radius 1 and the matching mode.
class TouchTable final : public Env {
 public:
  struct Object {
    int x = 0;
    int y = 0;
    int type = 0;
    friend bool operator==(const Object&, const Object&) = default;
  };
  struct DecodedAction {
    int x, y, orientation, mode;
  };

  explicit TouchTable(const EnvOptions& options);

  DecodedAction decode(int action) const;
  int encode(int x, int y, int orientation, int mode) const;
  const std::vector<Object>& objects() const { return objects_; }
  const std::vector<Object>& layout() const { return layout_; }
  int table_size() const { return size_; }
  int orientations() const { return orientations_; }
  int gripper_modes() const { return modes_; }

  std::unique_ptr<Env> clone() const override { return std::make_unique<TouchTable>(*this); }

 protected:
  Observation sample_initial() override;
  Outcome advance(int action) override;

 private:
  Observation render() const;
  bool occupied(int x, int y) const;

  int size_;
  int orientations_;
  int modes_;
  std::vector<Object> layout_;   // fixed placement restored on reset
  std::vector<Object> objects_;  // current placement
};

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Validates the environment invariants (determinism, class statistics,
/// interaction-rate expectation) for the given configuration.
std::vector<SelfTestResult> env_self_test(const EnvOptions& options);

}  // namespace disagree
