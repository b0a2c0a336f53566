#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace disagree {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11). Pure function of
/// (counter, key); every generator stream below is built on it.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Identifies the generator contract. Bump when the bit stream for a given
/// (key, counter) pair changes.
inline constexpr std::string_view kRngName = "philox4x32-10";
inline constexpr int kRngVersion = 1;

/// Derives a 64-bit stream key from the master seed, a stream name and an
/// index (e.g. "ensemble-member", 3).
std::uint64_t stream_key(std::uint64_t master_seed, std::string_view name,
                         std::uint64_t index = 0);

/// Counter-based random stream. State is (key, block counter, lane), so a
/// stream can be copied, compared and replayed exactly. Distributions are
/// implemented here rather than with <random> so that draws are identical
/// across standard libraries.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t master_seed, std::string_view name,
             std::uint64_t index = 0)
      : key_(stream_key(master_seed, name, index)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return next_u64(); }
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Unbiased (rejection sampling).
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller; draws two uniforms per call.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const CounterRng&, const CounterRng&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> block_{};
  int lane_ = 2;
};

}  // namespace disagree
