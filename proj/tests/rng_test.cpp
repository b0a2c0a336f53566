#include "disagree/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>
#include <vector>

using namespace disagree;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswerVectors) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                          {0xffffffff, 0xffffffff}),
            (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                          {0xa4093822, 0x299f31d0}),
            (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterRng, SameKeySameStream) {
  CounterRng a(42, "env", 0);
  CounterRng b(42, "env", 0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a, b);
}

TEST(CounterRng, StreamsAreKeyedByNameAndIndex) {
  std::set<std::uint64_t> keys;
  for (const char* name : {"env", "policy", "bootstrap", "ensemble-member"}) {
    for (std::uint64_t i = 0; i < 8; ++i) keys.insert(stream_key(7, name, i));
  }
  EXPECT_EQ(keys.size(), 32u);
  EXPECT_NE(stream_key(1, "env"), stream_key(2, "env"));
}

TEST(CounterRng, CopyReplaysExactly) {
  CounterRng a(3, "x");
  a.next_u64();  // leave a buffered lane behind
  CounterRng b = a;
  for (int i = 0; i < 17; ++i) ASSERT_EQ(a.uniform(), b.uniform());
}

TEST(CounterRng, UniformMoments) {
  CounterRng rng(11, "uniform");
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(sq / n - mean * mean, 1.0 / 12.0, 0.002);
}

TEST(CounterRng, NormalMoments) {
  CounterRng rng(12, "normal");
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(CounterRng, UniformIntCoversRangeEvenly) {
  CounterRng rng(13, "int");
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7, 400);
  EXPECT_EQ(rng.uniform_int(1), 0u);
}
