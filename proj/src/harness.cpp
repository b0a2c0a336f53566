#include "disagree/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace disagree {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw std::invalid_argument("config: key '" + key + "' expects " + expected + ", got '" + value + "'");
}

template <typename I>
void parse_integer(const std::string& key, const std::string& s, I& out) {
  I v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "an integer");
  out = v;
}

void parse_value(const std::string& key, const std::string& s, int& out) { parse_integer(key, s, out); }
void parse_value(const std::string& key, const std::string& s, long& out) { parse_integer(key, s, out); }
void parse_value(const std::string& key, const std::string& s, std::uint64_t& out) {
  parse_integer(key, s, out);
}
void parse_value(const std::string& key, const std::string& s, double& out) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) bad_value(key, s, "a number");
  out = v;
}
void parse_value(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
  } else if (s == "false" || s == "0") {
    out = false;
  } else {
    bad_value(key, s, "true or false");
  }
}
void parse_value(const std::string&, const std::string& s, std::string& out) { out = s; }
void parse_value(const std::string& key, const std::string& s, std::vector<int>& out) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int x = 0;
    parse_integer(key, trim(item), x);
    v.push_back(x);
  }
  out = std::move(v);
}

std::string format_value(int x) { return std::to_string(x); }
std::string format_value(long x) { return std::to_string(x); }
std::string format_value(std::uint64_t x) { return std::to_string(x); }
std::string format_value(double x) { return format_double(x); }
std::string format_value(bool x) { return x ? "true" : "false"; }
std::string format_value(const std::string& x) { return x; }
std::string format_value(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename F>
KeySpec key(std::string name, F field) {
  return KeySpec{
      name,
      [name, field](RunConfig& c, const std::string& v) { parse_value(name, v, field(c)); },
      [field](const RunConfig& c) { return format_value(field(const_cast<RunConfig&>(c))); }};
}

const std::vector<KeySpec>& key_table() {
  using C = RunConfig;
  static const std::vector<KeySpec> table = {
      key("experiment", [](C& c) -> auto& { return c.experiment; }),
      key("seed", [](C& c) -> auto& { return c.seed; }),
      key("total_steps", [](C& c) -> auto& { return c.total_steps; }),
      key("rollout", [](C& c) -> auto& { return c.rollout; }),
      key("env", [](C& c) -> auto& { return c.env.name; }),
      key("env.horizon", [](C& c) -> auto& { return c.env.horizon; }),
      key("env.pairs_dim", [](C& c) -> auto& { return c.env.pairs_dim; }),
      key("env.pairs_sigma", [](C& c) -> auto& { return c.env.pairs_sigma; }),
      key("env.grid_size", [](C& c) -> auto& { return c.env.grid_size; }),
      key("env.tv", [](C& c) -> auto& { return c.env.tv; }),
      key("env.fixed_start", [](C& c) -> auto& { return c.env.fixed_start; }),
      key("env.chain_length", [](C& c) -> auto& { return c.env.chain_length; }),
      key("env.p_sticky", [](C& c) -> auto& { return c.env.p_sticky; }),
      key("env.table_size", [](C& c) -> auto& { return c.env.table_size; }),
      key("env.orientations", [](C& c) -> auto& { return c.env.orientations; }),
      key("env.gripper_modes", [](C& c) -> auto& { return c.env.gripper_modes; }),
      key("env.objects", [](C& c) -> auto& { return c.env.objects; }),
      key("env.layout_seed", [](C& c) -> auto& { return c.env.layout_seed; }),
      key("encoder", [](C& c) -> auto& { return c.encoder; }),
      key("encoder.hidden", [](C& c) -> auto& { return c.encoder_hidden; }),
      key("encoder.feat_dim", [](C& c) -> auto& { return c.feat_dim; }),
      key("reward", [](C& c) -> auto& { return c.reward; }),
      key("optimizer", [](C& c) -> auto& { return c.optimizer; }),
      key("action_code", [](C& c) -> auto& { return c.action_code; }),
      key("ensemble.k", [](C& c) -> auto& { return c.ensemble.k; }),
      key("ensemble.hidden", [](C& c) -> auto& { return c.ensemble.hidden; }),
      key("ensemble.lr", [](C& c) -> auto& { return c.ensemble.lr; }),
      key("ensemble.lr_decay_steps", [](C& c) -> auto& { return c.ensemble.lr_decay_steps; }),
      key("ensemble.bootstrap_keep", [](C& c) -> auto& { return c.ensemble.bootstrap_keep; }),
      key("ensemble.batch_size", [](C& c) -> auto& { return c.ensemble.batch_size; }),
      key("ensemble.epochs", [](C& c) -> auto& { return c.ensemble.epochs; }),
      key("buffer.capacity", [](C& c) -> auto& { return c.buffer_capacity; }),
      key("dropout.p", [](C& c) -> auto& { return c.dropout_p; }),
      key("dropout.passes", [](C& c) -> auto& { return c.dropout_passes; }),
      key("intrinsic.coef", [](C& c) -> auto& { return c.intrinsic_coef; }),
      key("intrinsic.normalize", [](C& c) -> auto& { return c.normalize_intrinsic; }),
      key("extrinsic.coef", [](C& c) -> auto& { return c.extrinsic_coef; }),
      key("policy.hidden", [](C& c) -> auto& { return c.policy_hidden; }),
      key("policy.lr", [](C& c) -> auto& { return c.policy_lr; }),
      key("policy.warmup_steps", [](C& c) -> auto& { return c.policy_warmup_steps; }),
      key("gamma", [](C& c) -> auto& { return c.gamma; }),
      key("gae.lambda", [](C& c) -> auto& { return c.gae_lambda; }),
      key("ppo.clip", [](C& c) -> auto& { return c.ppo.clip; }),
      key("ppo.entropy_coef", [](C& c) -> auto& { return c.ppo.entropy_coef; }),
      key("ppo.value_coef", [](C& c) -> auto& { return c.ppo.value_coef; }),
      key("ppo.epochs", [](C& c) -> auto& { return c.ppo.epochs; }),
      key("ppo.minibatch", [](C& c) -> auto& { return c.ppo.minibatch; }),
      key("ppo.normalize_advantages", [](C& c) -> auto& { return c.ppo.normalize_advantages; }),
      key("reinforce.baseline_decay", [](C& c) -> auto& { return c.reinforce.baseline_decay; }),
      key("explore.horizon", [](C& c) -> auto& { return c.explore_horizon; }),
      key("explore.relaxation", [](C& c) -> auto& { return c.explore_relaxation; }),
      key("explore.batch", [](C& c) -> auto& { return c.explore_batch; }),
      key("explore.steps", [](C& c) -> auto& { return c.explore_steps; }),
      key("mix", [](C& c) -> auto& { return c.mix; }),
      key("eval.every", [](C& c) -> auto& { return c.eval_every; }),
      key("eval.episodes", [](C& c) -> auto& { return c.eval_episodes; }),
      key("noise.dim", [](C& c) -> auto& { return c.noise_dim; }),
      key("noise.states", [](C& c) -> auto& { return c.noise_states; }),
      key("noise.log_every", [](C& c) -> auto& { return c.noise_log_every; }),
  };
  return table;
}

const KeySpec& find_key(const std::string& name) {
  for (const auto& k : key_table()) {
    if (k.name == name) return k;
  }
  throw std::invalid_argument("config: unknown key '" + name + "'");
}

[[noreturn]] void invalid(const std::string& key, const std::string& why) {
  throw std::invalid_argument("config: key '" + key + "' " + why);
}

ExploreConfig explore_config(const RunConfig& cfg) {
  return ExploreConfig{.horizon = cfg.explore_horizon,
                       .gamma = cfg.gamma,
                       .relaxation = cfg.explore_relaxation == "soft" ? ActionRelaxation::Soft
                                                                      : ActionRelaxation::StraightThrough};
}

}  // namespace

EncoderKind RunConfig::encoder_kind() const {
  if (encoder == "auto") {
    return env.name == "noisy-pairs" || env.name == "touch-table" ? EncoderKind::RandomNet : EncoderKind::Identity;
  }
  return parse_encoder(encoder);
}

void RunConfig::validate() const {
  if (experiment != "rl" && experiment != "noise-collapse") invalid("experiment", "must be rl or noise-collapse");
  if (total_steps < 0) invalid("total_steps", "must be >= 0");
  if (rollout < 1) invalid("rollout", "must be >= 1");
  if (total_steps > 0 && total_steps < rollout) invalid("total_steps", "must be >= rollout");
  const auto names = known_env_names();
  if (std::find(names.begin(), names.end(), env.name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    invalid("env", "names an unknown environment '" + env.name + "' (known: " + list + ")");
  }
  try {
    encoder_kind();
  } catch (const std::invalid_argument& e) {
    invalid("encoder", e.what());
  }
  RewardKind rk{};
  try {
    rk = parse_reward(reward);
  } catch (const std::invalid_argument& e) {
    invalid("reward", e.what());
  }
  PolicyOptimizerKind ok{};
  try {
    ok = parse_optimizer(optimizer);
  } catch (const std::invalid_argument& e) {
    invalid("optimizer", e.what());
  }
  if (action_code != "onehot" && action_code != "factored") invalid("action_code", "must be onehot or factored");
  if (action_code == "factored" && env.name != "touch-table") invalid("action_code", "factored requires touch-table");
  if ((ok == PolicyOptimizerKind::Differentiable || ok == PolicyOptimizerKind::Combined) &&
      rk != RewardKind::Disagreement) {
    invalid("optimizer", "differentiable and combined require reward = disagreement");
  }
  if (explore_relaxation != "straight-through" && explore_relaxation != "soft") {
    invalid("explore.relaxation", "must be straight-through or soft");
  }
  if (ensemble.k < 2 || ensemble.k > 32) invalid("ensemble.k", "must be in [2, 32]");
  if (ensemble.batch_size < 1) invalid("ensemble.batch_size", "must be >= 1");
  if (ensemble.epochs < 0) invalid("ensemble.epochs", "must be >= 0");
  if (!(ensemble.lr > 0)) invalid("ensemble.lr", "must be > 0");
  if (!(ensemble.bootstrap_keep > 0 && ensemble.bootstrap_keep <= 1)) invalid("ensemble.bootstrap_keep", "must be in (0, 1]");
  if (buffer_capacity < 1) invalid("buffer.capacity", "must be >= 1");
  if (!(dropout_p >= 0 && dropout_p < 1)) invalid("dropout.p", "must be in [0, 1)");
  if (dropout_passes < 0 || dropout_passes == 1) invalid("dropout.passes", "must be 0 or >= 2");
  if (!(policy_lr > 0)) invalid("policy.lr", "must be > 0");
  if (policy_warmup_steps < 0) invalid("policy.warmup_steps", "must be >= 0");
  if (!(gamma >= 0 && gamma <= 1)) invalid("gamma", "must be in [0, 1]");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) invalid("gae.lambda", "must be in [0, 1]");
  if (ppo.epochs < 1) invalid("ppo.epochs", "must be >= 1");
  if (ppo.minibatch < 1) invalid("ppo.minibatch", "must be >= 1");
  if (explore_horizon < 1) invalid("explore.horizon", "must be >= 1");
  if (explore_batch < 1) invalid("explore.batch", "must be >= 1");
  if (explore_steps < 0) invalid("explore.steps", "must be >= 0");
  if (!(mix >= 0 && mix <= 1)) invalid("mix", "must be in [0, 1]");
  if (eval_every < 1) invalid("eval.every", "must be >= 1");
  if (eval_episodes < 0) invalid("eval.episodes", "must be >= 0");
  if (noise_dim < 1) invalid("noise.dim", "must be >= 1");
  if (noise_states < 1) invalid("noise.states", "must be >= 1");
  if (noise_log_every < 1) invalid("noise.log_every", "must be >= 1");
  if (feat_dim < 1) invalid("encoder.feat_dim", "must be >= 1");
  if (encoder_hidden < 1) invalid("encoder.hidden", "must be >= 1");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("config: override '" + assignment + "' is not key=value");
  }
  set_config_value(cfg, trim(std::string_view(assignment).substr(0, eq)),
                   trim(std::string_view(assignment).substr(eq + 1)));
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    try {
      apply_override(base, body);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  try {
    return parse_config(in);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

// ---------------------------------------------------------------------------
// RunLog

std::size_t RunLog::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::invalid_argument("run log: no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> RunLog::column(const std::string& name) const {
  const std::size_t c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

void RunLog::append(std::vector<double> row) {
  if (row.size() != columns.size()) {
    throw std::invalid_argument("run log: row has " + std::to_string(row.size()) + " values for " +
                                std::to_string(columns.size()) + " columns");
  }
  if (!rows.empty() && !(row.front() > rows.back().front())) {
    throw std::logic_error("run log: step " + format_double(row.front()) + " does not follow " +
                           format_double(rows.back().front()));
  }
  rows.push_back(std::move(row));
}

void write_csv(std::ostream& out, const RunLog& log) {
  out << "# " << RunLog::kFormat << '\n';
  for (std::size_t i = 0; i < log.columns.size(); ++i) out << (i ? "," : "") << log.columns[i];
  out << '\n';
  for (const auto& row : log.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (!std::isnan(row[i])) out << format_double(row[i]);
    }
    out << '\n';
  }
}

RunLog read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != std::string("# ") + RunLog::kFormat) {
    throw std::runtime_error(std::string("run log: missing '# ") + RunLog::kFormat + "' header");
  }
  RunLog log;
  if (!std::getline(in, line)) throw std::runtime_error("run log: missing column header");
  {
    std::stringstream ss(trim(line));
    std::string col;
    while (std::getline(ss, col, ',')) log.columns.push_back(col);
  }
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (field.empty()) {
        row.push_back(kNaN);
      } else {
        char* end = nullptr;
        row.push_back(std::strtod(field.c_str(), &end));
        if (end != field.c_str() + field.size()) {
          throw std::runtime_error("run log: line " + std::to_string(lineno) + ": bad value '" + field + "'");
        }
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    try {
      log.append(std::move(row));
    } catch (const std::exception& e) {
      throw std::runtime_error("run log: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

void save_csv(const std::string& path, const RunLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_csv(out, log);
}

RunLog load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return read_csv(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::string csv_without_wall_clock(const RunLog& log) {
  RunLog copy = log;
  const std::size_t c = copy.column_index(RunLog::kWallClock);
  copy.columns.erase(copy.columns.begin() + static_cast<std::ptrdiff_t>(c));
  for (auto& r : copy.rows) r.erase(r.begin() + static_cast<std::ptrdiff_t>(c));
  std::ostringstream out;
  write_csv(out, copy);
  return out.str();
}

std::string git_blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

void write_sidecar(const std::string& csv_path, const RunConfig& cfg, const std::string& binary_path) {
  const std::string path = csv_path + ".meta";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  // Metadata lines are comments so the sidecar reloads as a config file.
  out << "# format: " << RunLog::kFormat << '\n';
  out << "# binary: " << binary_path << '\n';
  out << "# binary_git_sha1: " << git_blob_hash(binary_path) << '\n';
  out << "# loop: collect rollout, score with current models, store, train models on new data, "
         "update policy\n";
  for (const auto& [k, v] : config_entries(cfg)) out << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSummary eval_policy(const ActionFn& choose, const EnvOptions& env_options, int episodes,
                        std::uint64_t seed) {
  EnvOptions opts = env_options;
  opts.seed = seed;
  auto env = make_env(opts);
  EvalSummary s;
  long touches = 0;
  double total = 0.0;
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    Observation obs = env->reset();
    bool hit = false;
    while (!env->done()) {
      const Transition tr = env->step(Action{choose(obs)});
      total += tr.extrinsic;
      hit = hit || tr.extrinsic > 0;
      touches += tr.info.has(kTouchedObject) ? 1 : 0;
      ++s.steps;
      obs = tr.next_obs;
    }
    hits += hit ? 1 : 0;
  }
  s.episodes = episodes;
  if (episodes > 0) {
    s.mean_return = total / episodes;
    s.goal_rate = static_cast<double>(hits) / episodes;
  }
  if (s.steps > 0) s.interaction_rate = static_cast<double>(touches) / static_cast<double>(s.steps);
  return s;
}

EvalSummary eval_policy(const PolicyNet& policy, const FeatureEncoder& encoder, const EnvOptions& env,
                        int episodes, std::uint64_t seed, EvalMode mode) {
  if (mode == EvalMode::Greedy) {
    return eval_policy([&](const Observation& o) { return greedy_action(policy, encoder.encode(o)); }, env,
                       episodes, seed);
  }
  CounterRng rng(seed, "eval-action");
  return eval_policy(
      [&](const Observation& o) {
        const Tensor probs = policy_probs(policy, Tensor(encoder.encode(o)));
        return sample_categorical(probs.row(0), rng);
      },
      env, episodes, seed);
}

// ---------------------------------------------------------------------------
// Run loop

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double mean_or_nan(double sum, long n) { return n > 0 ? sum / static_cast<double>(n) : kNaN; }

const std::vector<std::string> kRlColumns = {
    "step",          "round",           "eval_return",        "eval_goal_rate",  "eval_interaction_rate",
    "intrinsic_mean", "intrinsic_class0", "intrinsic_class1", "extrinsic_mean",  "interaction_rate",
    "first_success_step", "ensemble_loss", "policy_loss",     "value_loss",      "entropy",
    "approx_kl",     "clip_fraction",   "explore_objective",  RunLog::kWallClock};

const std::vector<std::string> kNoiseColumns = {"step", "disagreement", "pred_error", "noise_floor",
                                                "ensemble_loss", RunLog::kWallClock};

Tensor sample_rows(const Tensor& from, int n, CounterRng& rng) {
  Tensor out(n, from.cols());
  for (int i = 0; i < n; ++i) {
    out.row(i) = from.row(static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(from.rows()))));
  }
  return out;
}

RunResult run_rl(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const std::uint64_t seed = cfg.seed;

  EnvOptions env_opts = cfg.env;
  env_opts.seed = stream_key(seed, "env");
  auto env = make_env(env_opts);
  const EnvDescriptor desc = env->descriptor();

  RunResult result;
  if (cfg.encoder_kind() == EncoderKind::RandomNet) {
    CounterRng enc_rng(seed, "encoder");
    result.encoder = FeatureEncoder::random_net(desc.d_obs, cfg.encoder_hidden, cfg.feat_dim, enc_rng);
  } else {
    result.encoder = FeatureEncoder::identity(desc.d_obs);
  }
  const FeatureEncoder& encoder = result.encoder;
  const int feat_dim = encoder.feat_dim();

  ActionEncoder coder = cfg.action_code == "factored"
                            ? ActionEncoder::factored(cfg.env.table_size, cfg.env.orientations, cfg.env.gripper_modes)
                            : ActionEncoder::one_hot(desc.action_count);
  if (coder.action_count() != desc.action_count) {
    throw std::invalid_argument("action code covers " + std::to_string(coder.action_count()) +
                                " actions but the environment has " + std::to_string(desc.action_count));
  }

  const RewardKind reward_kind = parse_reward(cfg.reward);
  const PolicyOptimizerKind opt_kind = parse_optimizer(cfg.optimizer);
  ExploreConfig explore = explore_config(cfg);

  result.ensemble = make_ensemble(feat_dim, coder, cfg.ensemble, stream_key(seed, "ensemble"));
  ForwardEnsemble& ens = result.ensemble;
  std::optional<DropoutModel> dropout;
  if (reward_kind == RewardKind::DropoutDisagreement) {
    dropout = make_dropout_model(feat_dim, coder, cfg.ensemble.hidden, cfg.dropout_p, cfg.ensemble.lr,
                                 stream_key(seed, "dropout"));
  }
  const int dropout_passes = cfg.dropout_passes > 0 ? cfg.dropout_passes : cfg.ensemble.k;
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity), cfg.ensemble.k, cfg.ensemble.bootstrap_keep,
                      stream_key(seed, "bootstrap"));

  result.policy = make_policy(feat_dim, desc.action_count, cfg.policy_hidden, stream_key(seed, "policy"));
  PolicyNet& policy = result.policy;
  Optimizer opt{.kind = OptimizerKind::Adam, .lr = cfg.policy_lr};

  CounterRng act_rng(seed, "policy-act");
  CounterRng shuffle_rng(seed, "ppo-shuffle");
  CounterRng explore_rng(seed, "explore-action");
  CounterRng explore_pick(seed, "explore-batch");
  CounterRng dropout_rng(seed, "dropout-reward");
  RunningStd intrinsic_stats;
  ReinforceState reinforce_state;

  result.log.columns = kRlColumns;
  if (cfg.total_steps == 0) return result;

  long step = 0;
  long first_success = -1;
  int round = 0;
  RowVector feat = encoder.encode(env->reset());

  while (step < cfg.total_steps) {
    const long round_start = step;
    try {
      const int R = static_cast<int>(std::min<long>(cfg.rollout, cfg.total_steps - step));
      RolloutBatch batch;
      batch.obs.resize(R, feat_dim);
      Tensor next_feats(R, feat_dim);
      batch.actions.resize(static_cast<std::size_t>(R));
      batch.logprob.resize(R);
      batch.value.resize(R);
      batch.extrinsic.resize(R);
      batch.done.assign(static_cast<std::size_t>(R), 0);
      batch.gamma = cfg.gamma;
      batch.lambda = cfg.gae_lambda;
      std::vector<int> state_class(static_cast<std::size_t>(R), -1);
      long touches = 0;

      // 1. Collect.
      for (int t = 0; t < R; ++t) {
        const ActResult a = act(policy, feat, act_rng);
        const Transition tr = env->step(a.action);
        ++step;
        const RowVector next = encoder.encode(tr.next_obs);
        batch.obs.row(t) = feat;
        next_feats.row(t) = next;
        batch.actions[static_cast<std::size_t>(t)] = a.action.index;
        batch.logprob(t) = a.logprob;
        batch.value(t) = a.value;
        batch.extrinsic(t) = tr.extrinsic;
        batch.done[static_cast<std::size_t>(t)] = tr.done ? 1 : 0;
        if (const auto c = tr.info.value(kStateClass)) state_class[static_cast<std::size_t>(t)] = std::stoi(*c);
        touches += tr.info.has(kTouchedObject) ? 1 : 0;
        if (tr.extrinsic > 0 && first_success < 0) first_success = step;
        feat = tr.done ? encoder.encode(env->reset()) : next;
      }
      batch.last_value = batch.done.back() ? 0.0 : policy_values(policy, Tensor(feat))(0);

      // 2. Score with the models as they were before seeing this data.
      if (reward_kind == RewardKind::DropoutDisagreement) {
        const Tensor input = ensemble_input(ens, batch.obs, batch.actions);
        batch.intrinsic = dropout_disagreement_reward(dropout->net, input, dropout_passes, cfg.dropout_p, dropout_rng);
      } else {
        const auto preds = predict_all(ens, batch.obs, batch.actions);
        switch (reward_kind) {
          case RewardKind::Disagreement: batch.intrinsic = disagreement_reward(preds); break;
          case RewardKind::PredError: batch.intrinsic = prediction_error_reward(preds, next_feats); break;
          case RewardKind::PredErrorVariance: batch.intrinsic = pred_error_variance_reward(preds, next_feats); break;
          case RewardKind::DropoutDisagreement: break;
        }
      }
      double class_sum[2] = {0, 0};
      long class_n[2] = {0, 0};
      for (int t = 0; t < R; ++t) {
        const int c = state_class[static_cast<std::size_t>(t)];
        if (c == 0 || c == 1) {
          class_sum[c] += batch.intrinsic(t);
          ++class_n[c];
        }
      }

      // 3. Store; every transition is stamped with the step that produced it.
      for (int t = 0; t < R; ++t) {
        buffer.add(batch.obs.row(t), batch.actions[static_cast<std::size_t>(t)], next_feats.row(t), round_start + t + 1);
      }
      buffer.set_clock(step);

      // 4. Train the models on the new data.
      const int train_steps = cfg.ensemble.epochs * ((R + cfg.ensemble.batch_size - 1) / cfg.ensemble.batch_size);
      TrainReport report;
      if (dropout) {
        report = train_dropout_model(*dropout, buffer, train_steps, cfg.ensemble.batch_size, static_cast<std::size_t>(R));
      } else {
        report = train_ensemble(ens, buffer, train_steps, static_cast<std::size_t>(R));
      }

      // 5. Policy update.
      intrinsic_stats.update(batch.intrinsic);
      const Vector scaled = cfg.normalize_intrinsic ? intrinsic_stats.normalize(batch.intrinsic) : batch.intrinsic;
      batch.reward = cfg.intrinsic_coef * scaled + cfg.extrinsic_coef * batch.extrinsic;

      UpdateStats stats;
      const int ppo_steps = cfg.ppo.epochs * ((R + cfg.ppo.minibatch - 1) / cfg.ppo.minibatch);
      if (step > cfg.policy_warmup_steps) {
        switch (opt_kind) {
          case PolicyOptimizerKind::Ppo:
            compute_gae(batch);
            stats = ppo_update(policy, opt, batch, cfg.ppo, shuffle_rng);
            break;
          case PolicyOptimizerKind::Reinforce:
            stats = reinforce_update(policy, opt, batch, reinforce_state, cfg.reinforce);
            break;
          case PolicyOptimizerKind::Differentiable: {
            const int n = cfg.explore_steps > 0 ? cfg.explore_steps : ppo_steps;
            double objective = 0.0;
            for (int i = 0; i < n; ++i) {
              const Tensor obs = sample_rows(batch.obs, cfg.explore_batch, explore_pick);
              const UpdateStats s = differentiable_explore_update(policy, opt, ens, obs, explore, explore_rng);
              objective += s.objective;
              stats.steps += s.steps;
              stats.skipped += s.skipped;
            }
            stats.objective = objective / n;
            stats.policy_loss = -stats.objective;
            break;
          }
          case PolicyOptimizerKind::Combined: {
            compute_gae(batch);
            // Same units as the intrinsic reward the PPO half sees.
            const double sd = intrinsic_stats.stddev();
            explore.reward_scale = cfg.normalize_intrinsic && sd > 1e-8 ? cfg.intrinsic_coef / sd : cfg.intrinsic_coef;
            const Tensor obs = sample_rows(batch.obs, cfg.explore_batch, explore_pick);
            stats = combined_update(policy, opt, ens, batch, obs, cfg.mix, cfg.ppo, explore, shuffle_rng, explore_rng);
            break;
          }
        }
      }

      // 6. Evaluate.
      ++round;
      EvalSummary ev;
      const bool evaluate = cfg.eval_episodes > 0 && (round % cfg.eval_every == 0 || step == cfg.total_steps);
      if (evaluate) {
        ev = eval_policy(policy, encoder, cfg.env, cfg.eval_episodes, stream_key(seed, "eval", static_cast<std::uint64_t>(round)));
      }

      result.log.append({static_cast<double>(step),
                         static_cast<double>(round),
                         evaluate ? ev.mean_return : kNaN,
                         evaluate ? ev.goal_rate : kNaN,
                         evaluate ? ev.interaction_rate : kNaN,
                         batch.intrinsic.mean(),
                         mean_or_nan(class_sum[0], class_n[0]),
                         mean_or_nan(class_sum[1], class_n[1]),
                         batch.extrinsic.mean(),
                         static_cast<double>(touches) / R,
                         static_cast<double>(first_success),
                         report.steps > 0 ? report.mean_loss() : kNaN,
                         stats.policy_loss,
                         stats.value_loss,
                         stats.entropy,
                         stats.approx_kl,
                         stats.clip_fraction,
                         stats.objective,
                         seconds_since(t0)});
    } catch (const std::exception& e) {
      throw std::runtime_error("run aborted in the round starting at step " + std::to_string(round_start) +
                               " (env step " + std::to_string(step) + "): " + e.what());
    }
  }
  return result;
}

// Ensemble trained on targets that are pure N(0, I) noise; nothing is
// learnable beyond the zero mean, so the irreducible error is noise_dim.
RunResult run_noise_collapse(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const std::uint64_t seed = cfg.seed;
  const int d = cfg.noise_dim;
  const int batch = cfg.ensemble.batch_size;

  CounterRng pool_rng(seed, "noise-pool");
  CounterRng pick_rng(seed, "noise-pick");
  CounterRng target_rng(seed, "noise-target");
  CounterRng probe_rng(seed, "noise-probe");
  Tensor pool(cfg.noise_states, d);
  for (Index i = 0; i < pool.size(); ++i) pool.data()[i] = pool_rng.normal();

  RunResult result;
  result.encoder = FeatureEncoder::identity(d);
  result.ensemble = make_ensemble(d, ActionEncoder::one_hot(1), cfg.ensemble, stream_key(seed, "ensemble"));
  ForwardEnsemble& ens = result.ensemble;
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity), cfg.ensemble.k, cfg.ensemble.bootstrap_keep,
                      stream_key(seed, "bootstrap"));
  result.log.columns = kNoiseColumns;

  const std::vector<int> probe_actions(static_cast<std::size_t>(cfg.noise_states), 0);
  constexpr int kProbeTargets = 16;
  double loss_sum = 0.0;
  int loss_n = 0;
  for (long step = 1; step <= cfg.total_steps; ++step) {
    try {
      for (int b = 0; b < batch; ++b) {
        const auto s = static_cast<Index>(pick_rng.uniform_int(static_cast<std::uint64_t>(cfg.noise_states)));
        RowVector target(d);
        for (int j = 0; j < d; ++j) target(j) = target_rng.normal();
        buffer.add(pool.row(s), 0, target, step);
      }
      buffer.set_clock(step);
      const TrainReport report = train_ensemble(ens, buffer, 1);
      loss_sum += report.mean_loss();
      ++loss_n;

      if (step % cfg.noise_log_every == 0 || step == cfg.total_steps) {
        const auto preds = predict_all(ens, pool, probe_actions);
        double err = 0.0;
        for (int r = 0; r < kProbeTargets; ++r) {
          Tensor target(cfg.noise_states, d);
          for (Index i = 0; i < target.size(); ++i) target.data()[i] = probe_rng.normal();
          err += prediction_error_reward(preds, target).mean();
        }
        result.log.append({static_cast<double>(step), disagreement_reward(preds).mean(), err / kProbeTargets,
                           static_cast<double>(d), loss_sum / loss_n, seconds_since(t0)});
        loss_sum = 0.0;
        loss_n = 0;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("run aborted at gradient step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  return cfg.experiment == "noise-collapse" ? run_noise_collapse(cfg) : run_rl(cfg);
}

// ---------------------------------------------------------------------------
// Comparison

std::vector<double> trailing_mean(const std::vector<double>& xs, int window) {
  if (window < 1) throw std::invalid_argument("trailing_mean: window must be >= 1");
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
    double s = 0.0;
    for (std::size_t j = lo; j <= i; ++j) s += xs[j];
    out[i] = s / static_cast<double>(i - lo + 1);
  }
  return out;
}

namespace {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
};

Series metric_series(const RunLog& log, const std::string& metric) {
  const auto steps = log.column("step");
  const auto vals = log.column(metric);
  Series s;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!std::isnan(vals[i])) {
      s.x.push_back(steps[i]);
      s.y.push_back(vals[i]);
    }
  }
  return s;
}

// Linear interpolation, held constant beyond the ends.
double interpolate(const Series& s, double x) {
  if (x <= s.x.front()) return s.y.front();
  if (x >= s.x.back()) return s.y.back();
  const auto it = std::upper_bound(s.x.begin(), s.x.end(), x);
  const std::size_t j = static_cast<std::size_t>(it - s.x.begin());
  const double w = (x - s.x[j - 1]) / (s.x[j] - s.x[j - 1]);
  return (1.0 - w) * s.y[j - 1] + w * s.y[j];
}

std::pair<double, double> mean_and_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace

Comparison compare_runs(const std::vector<LabeledLog>& logs, const std::string& metric, int window) {
  if (logs.empty()) throw std::invalid_argument("compare_runs: no logs");
  if (window < 1) throw std::invalid_argument("compare_runs: window must be >= 1");

  std::vector<Series> series;
  for (const auto& l : logs) {
    series.push_back(metric_series(l.log, metric));
    if (series.back().x.empty()) {
      throw std::invalid_argument("compare_runs: log '" + l.label + "' has no values for '" + metric + "'");
    }
  }
  const std::vector<double>& grid = series.front().x;

  std::vector<std::string> labels;
  for (const auto& l : logs) {
    if (std::find(labels.begin(), labels.end(), l.label) == labels.end()) labels.push_back(l.label);
  }

  Comparison cmp;
  const std::size_t tail = std::min(grid.size(), static_cast<std::size_t>(window));
  for (const auto& label : labels) {
    std::vector<std::vector<double>> smoothed;
    std::vector<double> finals;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      if (logs[i].label != label) continue;
      std::vector<double> raw;
      raw.reserve(grid.size());
      for (double x : grid) raw.push_back(interpolate(series[i], x));
      double f = 0.0;
      for (std::size_t j = grid.size() - tail; j < grid.size(); ++j) f += raw[j];
      finals.push_back(f / static_cast<double>(tail));
      smoothed.push_back(trailing_mean(raw, window));
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      std::vector<double> at;
      for (const auto& s : smoothed) at.push_back(s[g]);
      const auto [m, se] = mean_and_stderr(at);
      cmp.curve.push_back({label, grid[g], m, se, static_cast<int>(at.size())});
    }
    const auto [m, se] = mean_and_stderr(finals);
    cmp.final_window.push_back({label, m, se, static_cast<int>(finals.size())});
  }
  return cmp;
}

void write_comparison(std::ostream& out, const Comparison& cmp) {
  out << "label,step,mean,stderr,n\n";
  for (const auto& p : cmp.curve) {
    out << p.label << ',' << format_double(p.step) << ',' << format_double(p.mean) << ','
        << format_double(p.stderr_) << ',' << p.n << '\n';
  }
  out << "\nlabel,final_mean,final_stderr,n\n";
  for (const auto& f : cmp.final_window) {
    out << f.label << ',' << format_double(f.mean) << ',' << format_double(f.stderr_) << ',' << f.n << '\n';
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const PolicyNet& policy, const FeatureEncoder& encoder) {
  std::vector<MlpParams> nets{policy.trunk, policy.logits, policy.value};
  if (encoder.params()) nets.push_back(*encoder.params());
  save_mlps(path, nets);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto nets = load_mlps(path);
  if (nets.size() != 3 && nets.size() != 4) {
    throw std::runtime_error(path + ": expected 3 or 4 networks, found " + std::to_string(nets.size()));
  }
  Checkpoint ck;
  ck.policy.trunk = std::move(nets[0]);
  ck.policy.logits = std::move(nets[1]);
  ck.policy.value = std::move(nets[2]);
  ck.encoder = nets.size() == 4 ? FeatureEncoder::from_params(std::move(nets[3]))
                                : FeatureEncoder::identity(static_cast<int>(ck.policy.in_dim()));
  return ck;
}

}  // namespace disagree
