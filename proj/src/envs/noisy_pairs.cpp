#include "disagree/envs.hpp"

#include <stdexcept>

namespace disagree {

namespace {

constexpr int kClasses = 10;

EnvDescriptor pairs_descriptor(const EnvOptions& o) {
  if (o.pairs_dim < 1) throw std::invalid_argument("noisy-pairs: pairs_dim must be >= 1");
  return {"noisy-pairs", o.pairs_dim, 2, o.horizon > 0 ? o.horizon : 1, o.seed};
}

}  // namespace

NoisyPairs::NoisyPairs(const EnvOptions& options)
    : Env(pairs_descriptor(options)), sigma_(options.pairs_sigma) {
  CounterRng layout(options.layout_seed, "layout");
  prototypes_.resize(kClasses, options.pairs_dim);
  for (Index c = 0; c < kClasses; ++c) {
    for (Index j = 0; j < prototypes_.cols(); ++j) prototypes_(c, j) = layout.normal();
    prototypes_.row(c).normalize();
  }
}

Observation NoisyPairs::sample_class(int c) {
  Observation x = prototypes_.row(c);
  for (Index j = 0; j < x.size(); ++j) x(j) += sigma_ * rng_.normal();
  return x;
}

int NoisyPairs::classify(const Observation& obs) const {
  Index best = 0;
  (prototypes_.rowwise() - obs).rowwise().squaredNorm().minCoeff(&best);
  return static_cast<int>(best);
}

Observation NoisyPairs::sample_initial() {
  current_class_ = static_cast<int>(rng_.uniform_int(2));
  return sample_class(current_class_);
}

Env::Outcome NoisyPairs::advance(int) {
  const int start = current_class_;
  const int next = start == 0 ? 0 : 2 + static_cast<int>(rng_.uniform_int(kClasses - 2));
  Outcome out;
  out.next_obs = sample_class(next);
  out.info.add(std::string(kStateClass) + "=" + std::to_string(start));
  out.info.add(std::string(kNextClass) + "=" + std::to_string(next));
  current_class_ = next;
  return out;
}

}  // namespace disagree
