#include <gtest/gtest.h>

#include <map>

#include "opshard/workload.hpp"

using namespace opshard;

TEST(GenWorkload, UniformIsSeededAndReproducible) {
  WorkloadGen g{WorkloadKind::Uniform, 1.0, 10, 100, 7};
  auto a = gen_workload(g);
  auto b = gen_workload(g);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 100u);
  std::map<std::string, int> counts;
  for (const auto& k : a) counts[k]++;
  EXPECT_LE(counts.size(), 10u);
  // binomial(100, 0.1): mean 10, sd 3; [1, 25] is a > 5 sd envelope
  for (const auto& [k, c] : counts) {
    EXPECT_GE(c, 1);
    EXPECT_LE(c, 25);
  }
  g.seed = 8;
  EXPECT_NE(gen_workload(g), a);
}

TEST(GenWorkload, ZipfSlopeMatchesExponent) {
  for (double s : {0.8, 1.0, 1.2}) {
    WorkloadGen g{WorkloadKind::Zipf, s, 10000, 400000, 3};
    auto counts = gen_key_counts(g);
    double slope = rank_frequency_slope(counts, 500);
    EXPECT_NEAR(-slope, s, 0.05 * s) << "s=" << s;
  }
}

TEST(GenWorkload, LargeExponentConcentratesOnRankOne) {
  WorkloadGen g{WorkloadKind::Zipf, 30.0, 1000, 5000, 1};
  auto counts = gen_key_counts(g);
  EXPECT_EQ(counts[0], 5000u);
}

TEST(GenWorkload, KeyCountsMatchMaterialisedRecords) {
  WorkloadGen g{WorkloadKind::Zipf, 1.0, 50, 3000, 11};
  auto recs = gen_workload(g);
  auto counts = gen_key_counts(g);
  std::vector<Count> recount(50, 0);
  for (const auto& r : recs) recount[std::stoul(r.substr(3)) - 1]++;
  EXPECT_EQ(recount, counts);
}

TEST(GenWorkload, InvalidExponentRejected) {
  WorkloadGen g{WorkloadKind::Zipf, 0.0, 10, 10, 1};
  EXPECT_THROW(gen_workload(g), Error);
  g.s = -1.0;
  EXPECT_THROW(gen_workload(g), Error);
}

TEST(GenWorkload, WordCorpusSnapshot) {
  WorkloadGen g;
  g.kind = WorkloadKind::WordCorpus;
  g.distinct_keys = 200;
  g.corpus_bytes = 4096;
  g.seed = 42;
  auto a = gen_workload(g);
  EXPECT_EQ(a, gen_workload(g));
  std::size_t bytes = 0;
  for (const auto& l : a) {
    bytes += l.size() + 1;
    ASSERT_EQ(l[0], 'd');
    ASSERT_NE(l.find('\t'), std::string::npos);
  }
  EXPECT_GE(bytes, 4096u);
  EXPECT_EQ(a.front().substr(0, 3), "d0\t");
}

TEST(ClusterKeyCounts, ConservesTotal) {
  WorkloadGen g{WorkloadKind::Zipf, 1.0, 5000, 100000, 2};
  auto counts = gen_key_counts(g);
  auto d = cluster_key_counts(counts, Clusterer::default_hash(64));
  EXPECT_EQ(d.n(), 64u);
  EXPECT_EQ(d.total(), 100000u);
}

TEST(ClusterLoads, ShapesAreSeededAndPositive) {
  for (auto shape : {LoadShape::Uniform, LoadShape::Zipf, LoadShape::HeavyOutlier}) {
    std::mt19937_64 a(9), b(9);
    auto x = gen_cluster_loads(shape, 12, a);
    EXPECT_EQ(x, gen_cluster_loads(shape, 12, b));
    ASSERT_EQ(x.size(), 12u);
    for (auto l : x) EXPECT_GE(l, 1u);
  }
  std::mt19937_64 g(3);
  auto h = gen_cluster_loads(LoadShape::HeavyOutlier, 16, g);
  Count total = 0;
  for (auto l : h) total += l;
  EXPECT_GT(*std::max_element(h.begin(), h.end()) * 8, total);
}
