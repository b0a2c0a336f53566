#include "disagree/envs.hpp"

#include <algorithm>
#include <stdexcept>

namespace disagree {

namespace {

EnvDescriptor chain_descriptor(const EnvOptions& o) {
  if (o.chain_length < 2) throw std::invalid_argument("sticky-chain: chain_length must be >= 2");
  if (o.p_sticky < 0.0 || o.p_sticky > 1.0) {
    throw std::invalid_argument("sticky-chain: p_sticky must lie in [0, 1]");
  }
  return {"sticky-chain", o.chain_length, 2, o.horizon > 0 ? o.horizon : 2 * o.chain_length,
          o.seed};
}

}  // namespace

StickyChain::StickyChain(const EnvOptions& options)
    : Env(chain_descriptor(options)),
      length_(options.chain_length),
      p_sticky_(options.p_sticky) {}

Observation StickyChain::sample_initial() {
  position_ = 0;
  previous_ = -1;
  Observation x = Observation::Zero(length_);
  x(0) = 1.0;
  return x;
}

Env::Outcome StickyChain::advance(int action) {
  // The stickiness draw happens every step so the stream does not depend on
  // whether a previous action exists.
  const bool stick = rng_.bernoulli(p_sticky_);
  const int executed = (stick && previous_ >= 0) ? previous_ : action;
  previous_ = executed;
  position_ = executed == kRight ? std::min(length_ - 1, position_ + 1) : std::max(0, position_ - 1);

  Outcome out;
  out.next_obs = Observation::Zero(length_);
  out.next_obs(position_) = 1.0;
  out.terminal = position_ == length_ - 1;
  out.extrinsic = out.terminal ? 1.0 : 0.0;
  if (executed != action) out.info.add("sticky");
  return out;
}

}  // namespace disagree
