#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "opshard/core.hpp"

using namespace opshard;

TEST(SlotLoads, SumsClustersPerSlot) {
  KeyDist d({10, 1, 1, 1});
  Schedule s({1, 2, 1, 2}, 2);
  EXPECT_EQ(slot_loads(d, s).loads, (std::vector<Count>{11, 2}));
}

TEST(SlotLoads, ZeroAndSingleSlot) {
  EXPECT_EQ(slot_loads(KeyDist({0, 0, 0, 0}), Schedule({1, 3, 2, 3}, 3)).loads,
            (std::vector<Count>{0, 0, 0}));
  EXPECT_EQ(slot_loads(KeyDist({7}), Schedule({1}, 1)).loads, (std::vector<Count>{7}));
}

TEST(SlotLoads, DimensionMismatchIsInvalidInput) {
  try {
    slot_loads(KeyDist({1, 2, 3}), Schedule({1, 1}, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(Schedule, RejectsOutOfRangeSlots) {
  EXPECT_THROW(Schedule({1, 3}, 2), Error);
  EXPECT_THROW(Schedule({0}, 2), Error);
  EXPECT_THROW(Schedule({}, 0), Error);
}

TEST(MaxLoad, Basics) {
  EXPECT_EQ(max_load({{11, 2}}), 11u);
  EXPECT_EQ(max_load({{5, 5, 5}}), 5u);
  EXPECT_EQ(max_load({{0, 0}}), 0u);
  EXPECT_THROW(max_load({{}}), Error);
}

TEST(IdealLoad, ExactRational) {
  EXPECT_EQ(ideal_load(KeyDist({5, 4, 3, 3, 3}), 2), (Rational{9, 1}));
  auto third = ideal_load(KeyDist({1}), 3);
  EXPECT_EQ(third, (Rational{1, 3}));
  EXPECT_DOUBLE_EQ(third.to_double(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(ideal_load(KeyDist({10, 1, 1, 1}), 2).to_double(), 6.5);
  EXPECT_THROW(ideal_load(KeyDist({1}), 0), Error);
}

TEST(IdealLoad, LargestClusterDominatesSkewedInstance) {
  // Every one of the 2^4 assignments of [10,1,1,1] onto 2 slots has max-load >= 10.
  EXPECT_EQ(oracle::enumerate_optimum({10, 1, 1, 1}, 2), 10u);
  EXPECT_GT(Count{10}, ideal_load(KeyDist({10, 1, 1, 1}), 2));
}

TEST(Rational, ComparesAgainstIntegersExactly) {
  Rational r{20, 3};
  EXPECT_TRUE(Count{7} > r);
  EXPECT_TRUE(Count{6} < r);
  EXPECT_TRUE(Count{4} == (Rational{8, 2}));
}

TEST(KeyDist, TotalOverflowIsHardError) {
  EXPECT_THROW(KeyDist({UINT64_MAX, 1}), Error);
}

TEST(Properties, ConservationLowerBoundAndEncoding) {
  std::mt19937_64 rng(42);
  for (int iter = 0; iter < 300; ++iter) {
    std::size_t n = 1 + rng() % 12;
    std::uint32_t m = 1 + rng() % 5;
    std::vector<Count> k(n);
    for (auto& x : k) x = rng() % 1000;
    std::vector<std::uint32_t> s(n);
    for (auto& x : s) x = 1 + rng() % m;
    KeyDist d(k);
    Schedule sched(s, m);
    auto loads = slot_loads(d, sched);
    Count sum = 0;
    for (auto p : loads.loads) sum += p;
    ASSERT_EQ(sum, d.total());
    Count mx = max_load(loads);
    ASSERT_TRUE(mx >= ideal_load(d, m));
    ASSERT_GE(mx, d.max_cluster());
    auto x = sched.as_matrix();
    for (std::size_t j = 0; j < n; ++j) {
      int col = 0;
      for (std::uint32_t i = 0; i < m; ++i) col += x[i][j];
      ASSERT_EQ(col, 1);
    }
  }
}

TEST(Schedule, FewerClustersThanSlotsLeavesEmptySlots) {
  auto loads = slot_loads(KeyDist({4, 2}), Schedule({1, 2}, 4));
  EXPECT_EQ(loads.loads, (std::vector<Count>{4, 2, 0, 0}));
}
