#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "voxdiff/rng.hpp"

using voxdiff::SeededRng;

TEST(Rng, SameSeedSameStream) {
  SeededRng a(123), b(123);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  SeededRng c(5), d(5);
  for (int i = 0; i < 101; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(Rng, DerivedStreamsDiffer) {
  auto a = SeededRng::derived(7, 0);
  auto b = SeededRng::derived(7, 1);
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(voxdiff::mix_seed(1, 2), voxdiff::mix_seed(2, 1));
}

TEST(Rng, UniformIntCoversInclusiveRange) {
  SeededRng r(9);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.uniform_int(-2, 3);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 3);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(r.uniform_int(4, 4), 4);
}

TEST(Rng, Uniform01InUnitInterval) {
  SeededRng r(11);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  SeededRng r(2024);
  const int n = 200000;
  double s = 0, ss = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    ss += z * z;
  }
  const double mean = s / n;
  const double var = ss / n - mean * mean;
  // 5 standard errors.
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 5.0 * std::sqrt(2.0 / n));
}
