#pragma once

#include "disagree/envs.hpp"
#include "disagree/features.hpp"
#include "disagree/intrinsic.hpp"
#include "disagree/policy.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace disagree {

/// Everything a run needs. Enumerated choices are kept as names and checked
/// by validate().
struct RunConfig {
  std::string experiment = "rl";  // rl | noise-collapse
  EnvOptions env{.name = "noisy-pairs"};
  std::uint64_t seed = 1;
  long total_steps = 10000;
  int rollout = 512;

  std::string encoder = "auto";  // auto | identity | random-net
  int encoder_hidden = 64;
  int feat_dim = 32;  // random-net output width

  std::string reward = "disagreement";
  std::string optimizer = "ppo";
  std::string action_code = "onehot";  // onehot | factored (touch-table)

  EnsembleConfig ensemble;
  long buffer_capacity = 100000;
  double dropout_p = 0.2;
  int dropout_passes = 0;  // 0 = ensemble k

  double intrinsic_coef = 1.0;
  bool normalize_intrinsic = true;
  double extrinsic_coef = 0.0;

  std::vector<int> policy_hidden{64};
  double policy_lr = 3e-4;
  long policy_warmup_steps = 0;  // no policy update until this many env steps
  double gamma = 0.99;
  double gae_lambda = 0.95;
  PpoConfig ppo;
  ReinforceConfig reinforce;

  int explore_horizon = 1;
  std::string explore_relaxation = "straight-through";  // straight-through | soft
  int explore_batch = 64;
  int explore_steps = 0;  // per round for the differentiable optimizer; 0 = PPO step count
  double mix = 0.5;

  int eval_every = 10;  // rounds
  int eval_episodes = 10;

  // noise-collapse
  int noise_dim = 8;
  int noise_states = 16;
  int noise_log_every = 100;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
  /// "auto" resolves to random-net for noisy-pairs and touch-table and to
  /// identity elsewhere.
  EncoderKind encoder_kind() const;
};

/// Flat "key = value" lines; '#' starts a comment. Unknown keys throw.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::string& path);
/// Applies one "key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Every key with its resolved value, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::vector<std::string> config_keys();

// ---------------------------------------------------------------------------

/// Column-oriented metric table. Rows are strictly increasing in "step";
/// missing values are NaN. The final column is always wall-clock time.
struct RunLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  static constexpr const char* kFormat = "disagree-runlog v1";
  static constexpr const char* kWallClock = "wall_clock_s";

  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  void append(std::vector<double> row);
};

void write_csv(std::ostream& out, const RunLog& log);
RunLog read_csv(std::istream& in);
void save_csv(const std::string& path, const RunLog& log);
RunLog load_csv(const std::string& path);
/// CSV text with the wall-clock column dropped, for determinism checks.
std::string csv_without_wall_clock(const RunLog& log);

/// Git blob hash (SHA-1 of "blob <size>\0" + bytes) of a file.
std::string git_blob_hash(const std::string& path);
/// Writes "<csv>.meta": format, resolved config and the binary hash.
void write_sidecar(const std::string& csv_path, const RunConfig& cfg, const std::string& binary_path);

// ---------------------------------------------------------------------------

struct RunResult {
  RunLog log;
  PolicyNet policy;
  FeatureEncoder encoder = FeatureEncoder::identity(1);
  ForwardEnsemble ensemble;
};

/// Collect `rollout` steps, score them with the current models, store them,
/// train the models on the new data, then update the policy. Fully
/// determined by the config. Errors are rethrown prefixed with the step.
RunResult run_experiment(const RunConfig& cfg);

enum class EvalMode { Greedy, Sample };

struct EvalSummary {
  double mean_return = 0.0;
  double goal_rate = 0.0;         // episodes with any positive extrinsic reward
  double interaction_rate = 0.0;  // steps tagged touched-object
  int episodes = 0;
  long steps = 0;
  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

using ActionFn = std::function<int(const Observation&)>;

/// Runs episodes on a fresh environment seeded with `seed`; nothing outside
/// the call is touched.
EvalSummary eval_policy(const ActionFn& choose, const EnvOptions& env, int episodes, std::uint64_t seed);
EvalSummary eval_policy(const PolicyNet& policy, const FeatureEncoder& encoder, const EnvOptions& env,
                        int episodes, std::uint64_t seed, EvalMode mode = EvalMode::Greedy);

// ---------------------------------------------------------------------------

struct LabeledLog {
  std::string label;
  RunLog log;
};

struct CurvePoint {
  std::string label;
  double step = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  int n = 0;
};

struct FinalSummary {
  std::string label;
  double mean = 0.0;
  double stderr_ = 0.0;
  int n = 0;
};

struct Comparison {
  std::vector<CurvePoint> curve;
  std::vector<FinalSummary> final_window;
};

/// Groups logs by label, resamples each onto the first log's step grid
/// (linear interpolation, NaN rows dropped), smooths with a trailing moving
/// average of `window` points and reports mean and standard error across the
/// group, plus the mean of the raw values over the last `window` grid points.
Comparison compare_runs(const std::vector<LabeledLog>& logs, const std::string& metric, int window);
void write_comparison(std::ostream& out, const Comparison& cmp);

/// Trailing moving average; window 1 is the identity.
std::vector<double> trailing_mean(const std::vector<double>& xs, int window);

// ---------------------------------------------------------------------------

/// Policy trunk, logits, value, then the encoder network if any.
void save_checkpoint(const std::string& path, const PolicyNet& policy, const FeatureEncoder& encoder);
struct Checkpoint {
  PolicyNet policy;
  FeatureEncoder encoder = FeatureEncoder::identity(1);
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace disagree
