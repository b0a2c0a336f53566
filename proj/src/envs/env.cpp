#include "disagree/envs.hpp"

#include <algorithm>
#include <stdexcept>

namespace disagree {

bool InfoTags::has(std::string_view tag) const {
  return std::find(tags_.begin(), tags_.end(), tag) != tags_.end();
}

std::optional<std::string> InfoTags::value(std::string_view key) const {
  for (const std::string& t : tags_) {
    if (t.size() > key.size() && t.compare(0, key.size(), key) == 0 && t[key.size()] == '=') {
      return t.substr(key.size() + 1);
    }
  }
  return std::nullopt;
}

bool operator==(const Transition& a, const Transition& b) {
  return a.obs == b.obs && a.action == b.action && a.next_obs == b.next_obs &&
         a.done == b.done && a.extrinsic == b.extrinsic && a.info == b.info;
}

Env::Env(EnvDescriptor descriptor)
    : rng_(descriptor.seed, "dynamics"), descriptor_(std::move(descriptor)) {
  if (descriptor_.horizon < 1) throw std::invalid_argument("env horizon must be >= 1");
}

Observation Env::reset() {
  current_ = sample_initial();
  done_ = false;
  started_ = true;
  episode_step_ = 0;
  return current_;
}

Transition Env::step(Action action) {
  if (!started_) throw std::logic_error(descriptor_.name + ": step before reset");
  if (done_) throw std::logic_error(descriptor_.name + ": step after episode end");
  if (action.index < 0 || action.index >= descriptor_.action_count) {
    throw std::out_of_range(descriptor_.name + ": action " + std::to_string(action.index) +
                            " outside [0, " + std::to_string(descriptor_.action_count) + ")");
  }
  Outcome out = advance(action.index);
  ++episode_step_;
  ++total_steps_;
  done_ = out.terminal || episode_step_ >= descriptor_.horizon;
  Transition t{current_, action, out.next_obs, done_, out.extrinsic, std::move(out.info)};
  current_ = std::move(out.next_obs);
  return t;
}

std::vector<std::string> known_env_names() {
  return {"noisy-pairs", "noisy-tv-grid", "sticky-chain", "touch-table"};
}

std::unique_ptr<Env> make_env(const EnvOptions& options) {
  if (options.name == "noisy-pairs") return std::make_unique<NoisyPairs>(options);
  if (options.name == "noisy-tv-grid") return std::make_unique<NoisyTvGrid>(options);
  if (options.name == "sticky-chain") return std::make_unique<StickyChain>(options);
  if (options.name == "touch-table") return std::make_unique<TouchTable>(options);
  std::string known;
  for (const std::string& n : known_env_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown environment '" + options.name + "'; known: " + known);
}

}  // namespace disagree
