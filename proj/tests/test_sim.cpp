#include <gtest/gtest.h>

#include <random>

#include "opshard/sched.hpp"
#include "opshard/sim.hpp"
#include "opshard/workload.hpp"

using namespace opshard;
using namespace opshard::sim;

namespace {

SimConfig small_cluster(double output_bytes, OverlapMode mode = OverlapMode::OS4MDeferred) {
  SimConfig c;
  c.map_output_bytes = output_bytes;
  c.overlap_mode = mode;
  auto d = cluster_key_counts(gen_key_counts({WorkloadKind::Zipf, 1.0, 5000, 100000, 3}), Clusterer::default_hash(48));
  c.dist = d;
  c.schedule = schedule_os4m(d, 8, 0.002).schedule;
  return c;
}

}  // namespace

TEST(EventEngine, ProcessorSharingFairness) {
  for (int f : {1, 2, 4}) {
    EventEngine ev;
    auto r = ev.add_resource("disk", 100.0);
    std::vector<double> done;
    for (int i = 0; i < f; ++i) ev.transfer(r, 500.0, [&] { done.push_back(ev.now()); });
    ev.run();
    ASSERT_EQ(done.size(), static_cast<std::size_t>(f));
    for (double t : done) EXPECT_NEAR(t, 5.0 * f, 1e-9);
  }
}

TEST(EventEngine, LateJoinerSharesRemainingCapacity) {
  EventEngine ev;
  auto r = ev.add_resource("net", 10.0);
  double a = 0, b = 0;
  ev.transfer(r, 100.0, [&] { a = ev.now(); });
  ev.after(5.0, [&] { ev.transfer(r, 25.0, [&] { b = ev.now(); }); });
  ev.run();
  // 50 bytes alone, then 5 B/s each: b needs 5 s, a then has 25 left at 10 B/s
  EXPECT_NEAR(b, 10.0, 1e-9);
  EXPECT_NEAR(a, 12.5, 1e-9);
}

TEST(EventEngine, RejectsNonPositiveCapacity) {
  EventEngine ev;
  EXPECT_THROW(ev.add_resource("x", 0.0), Error);
}

TEST(StageTimes, UnitCaseFiveVersusNine) {
  std::vector<StageTimes> unit(3, StageTimes{1, 1, 1});
  EXPECT_DOUBLE_EQ(stage_makespan(simulate_stage_times(unit, PipelineMode::Pipelined)), 5.0);
  EXPECT_DOUBLE_EQ(stage_makespan(simulate_stage_times(unit, PipelineMode::Sequential)), 9.0);
  std::vector<StageTimes> one{{1.5, 2.0, 0.5}};
  EXPECT_DOUBLE_EQ(stage_makespan(simulate_stage_times(one, PipelineMode::Pipelined)), 4.0);
}

TEST(StageTimes, EventEngineAgreesWithRecurrencesAndPipelineDominates) {
  std::mt19937_64 g(21);
  for (int iter = 0; iter < 1000; ++iter) {
    std::size_t n = 1 + g() % 10;
    std::vector<StageTimes> t;
    for (std::size_t i = 0; i < n; ++i)
      t.push_back({0.1 + rng::unit(g) * 5, 0.1 + rng::unit(g) * 5, 0.1 + rng::unit(g) * 5});
    auto recs = simulate_stage_times(t, PipelineMode::Pipelined);
    double pipe = stage_makespan(recs);
    double seq = stage_makespan(simulate_stage_times(t, PipelineMode::Sequential));
    ASSERT_NEAR(pipe, pipeline_makespan(t, PipelineMode::Pipelined), 1e-9);
    ASSERT_NEAR(seq, pipeline_makespan(t, PipelineMode::Sequential), 1e-9);
    ASSERT_LE(pipe, seq + 1e-12);
    if (n == 1) ASSERT_NEAR(pipe, seq, 1e-12);
    else ASSERT_LT(pipe, seq);
    // sort entries follow plan order
    std::vector<std::uint32_t> sort_order;
    for (const auto& r : recs)
      if (r.stage == Stage::Sort) sort_order.push_back(r.cluster);
    for (std::size_t i = 0; i < sort_order.size(); ++i) ASSERT_EQ(sort_order[i], i + 1);
  }
}

TEST(Simulate, DeferredWavesAreEqual) {
  auto t = simulate(small_cluster(128e6));
  ASSERT_EQ(t.wave_durations.size(), 3u);
  for (double w : t.wave_durations) EXPECT_NEAR(w, t.wave_durations[0], 0.01 * t.wave_durations[0]);
}

TEST(Simulate, OverlapSlowsLaterWaves) {
  auto t = simulate(small_cluster(128e6, OverlapMode::HadoopOverlap));
  ASSERT_EQ(t.wave_durations.size(), 3u);
  EXPECT_LT(t.wave_durations[0], t.wave_durations[1]);
  EXPECT_LT(t.wave_durations[1], t.wave_durations[2]);
}

TEST(Simulate, NoReduceActivityBeforeBarrierWhenDeferred) {
  auto t = simulate(small_cluster(64e6));
  double last_map = 0;
  for (const auto& m : t.map_tasks) last_map = std::max(last_map, m.end);
  EXPECT_DOUBLE_EQ(t.map_phase_end, last_map);
  EXPECT_LT(t.first_copy_start, 0.0);
  for (const auto& r : t.stages) ASSERT_GE(r.start, last_map);
}

TEST(Simulate, WorkConservation) {
  for (auto mode : {OverlapMode::HadoopOverlap, OverlapMode::OS4MDeferred}) {
    auto t = simulate(small_cluster(96e6, mode));
    double total = 0;
    for (const auto& r : t.resources) {
      EXPECT_NEAR(r.moved, r.requested, 1e-6 * std::max(1.0, r.requested)) << r.name;
      total += r.requested;
    }
    EXPECT_GT(total, 0.0);
  }
}

TEST(Simulate, ProgressIsMonotoneAndBounded) {
  for (auto mode : {OverlapMode::HadoopOverlap, OverlapMode::OS4MDeferred}) {
    auto t = simulate(small_cluster(64e6, mode));
    ASSERT_FALSE(t.progress.empty());
    for (std::size_t i = 1; i < t.progress.size(); ++i) {
      ASSERT_GE(t.progress[i].t, t.progress[i - 1].t);
      ASSERT_GE(t.progress[i].map_fraction, t.progress[i - 1].map_fraction);
      ASSERT_GE(t.progress[i].reduce_fraction, t.progress[i - 1].reduce_fraction);
    }
    EXPECT_DOUBLE_EQ(t.progress.back().map_fraction, 1.0);
    EXPECT_DOUBLE_EQ(t.progress.back().reduce_fraction, 1.0);
    for (const auto& p : t.progress) ASSERT_LE(p.reduce_fraction, 1.0);
  }
}

TEST(Simulate, Deterministic) {
  auto a = simulate(small_cluster(64e6, OverlapMode::HadoopOverlap));
  auto b = simulate(small_cluster(64e6, OverlapMode::HadoopOverlap));
  ASSERT_EQ(a.progress.size(), b.progress.size());
  for (std::size_t i = 0; i < a.progress.size(); ++i) {
    EXPECT_EQ(a.progress[i].t, b.progress[i].t);
    EXPECT_EQ(a.progress[i].event, b.progress[i].event);
  }
  EXPECT_EQ(a.wave_durations, b.wave_durations);
}

TEST(CompareModes, ContentionFavoursDeferredMapPhase) {
  auto r = compare_modes(small_cluster(128e6));
  EXPECT_NEAR(r.hadoop.wave_durations[0], r.os4m.wave_durations[0], 0.01 * r.os4m.wave_durations[0]);
  EXPECT_LT(r.os4m.map_phase_time, r.hadoop.map_phase_time);
  EXPECT_GE(r.os4m.reduce_start, r.os4m.map_phase_time);
}

TEST(CompareModes, ZeroShuffleTies) {
  auto r = compare_modes(small_cluster(0.0));
  EXPECT_NEAR(r.hadoop.map_phase_time, r.os4m.map_phase_time, 0.01 * r.os4m.map_phase_time);
  for (std::size_t w = 0; w < 3; ++w)
    EXPECT_NEAR(r.hadoop.wave_durations[w], r.os4m.wave_durations[w], 0.01 * r.os4m.wave_durations[w]);
}

TEST(CompareModes, WaveThreeGrowsWithShuffleBytes) {
  double prev = 0;
  for (double bytes : {16e6, 32e6, 64e6, 128e6, 256e6}) {
    auto t = simulate(small_cluster(bytes, OverlapMode::HadoopOverlap));
    EXPECT_GT(t.wave_durations[2], prev) << bytes;
    prev = t.wave_durations[2];
  }
}

TEST(Simulate, PipelinedSortDelayNoWorseThanSequential) {
  auto cfg = small_cluster(64e6);
  auto piped = simulate(cfg);
  cfg.pipeline_mode = PipelineMode::Sequential;
  auto seq = simulate(cfg);
  ASSERT_EQ(piped.delays.size(), seq.delays.size());
  for (std::size_t i = 0; i < piped.delays.size(); ++i) {
    EXPECT_LE(piped.delays[i].sort_delay, seq.delays[i].sort_delay + 1e-9);
    EXPECT_GE(piped.delays[i].run_delay, piped.delays[i].sort_delay);
  }
}

TEST(SimConfig, Validation) {
  auto c = small_cluster(1e6);
  c.net_bw = 0;
  EXPECT_THROW(simulate(c), Error);
  c = small_cluster(1e6);
  c.nodes = 1;  // 8-slot schedule no longer fits 1 x 2 reduce slots
  EXPECT_THROW(simulate(c), Error);
  c = small_cluster(1e6);
  c.map_slots_per_node = 0;
  EXPECT_THROW(simulate(c), Error);
}
