#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "opshard/pipeline.hpp"

using namespace opshard;
using namespace std::chrono_literals;

namespace {

std::vector<ClusterId> ids(std::initializer_list<std::uint32_t> v) {
  std::vector<ClusterId> out;
  for (auto x : v) out.push_back(ClusterId{x});
  return out;
}

std::vector<std::uint32_t> order_of(const PipelinePlan& p) {
  std::vector<std::uint32_t> out;
  for (const auto& it : p.items) out.push_back(it.cluster.value);
  return out;
}

// records of cluster c: load many pairs with keys k<c>_<i%7>
std::vector<Record> synth_records(const PipelineItem& it) {
  std::vector<Record> out;
  for (Count i = 0; i < it.load; ++i)
    out.emplace_back("k" + std::to_string(it.cluster.value) + "_" + std::to_string(i % 7), std::to_string(i));
  return out;
}

std::vector<Record> count_per_key(ClusterId, std::vector<Record> sorted) {
  std::vector<Record> out;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
    out.emplace_back(sorted[i].first, std::to_string(j - i));
    i = j;
  }
  return out;
}

Sorter in_memory() {
  return [](std::vector<Record> r, const PipelineItem&) { return sort_cluster(std::move(r), UINT64_MAX); };
}

}  // namespace

TEST(Plan, OrdersByIncreasingLoad) {
  KeyDist d({9, 3, 5});
  EXPECT_EQ(order_of(plan(ids({1, 2, 3}), d)), (std::vector<std::uint32_t>{2, 3, 1}));
  KeyDist eq({4, 4, 4, 4});
  EXPECT_EQ(order_of(plan(ids({4, 2, 3}), eq)), (std::vector<std::uint32_t>{2, 3, 4}));
  EXPECT_TRUE(plan(std::vector<ClusterId>{}, d).items.empty());
}

TEST(PipelineItem, StatesOnlyMoveForward) {
  PipelineItem it;
  it.advance(ItemState::Copying);
  EXPECT_THROW(it.advance(ItemState::Sorting), Error);
  EXPECT_THROW(it.advance(ItemState::Pending), Error);
  it.advance(ItemState::Copied);
  EXPECT_EQ(it.state, ItemState::Copied);
}

TEST(Trace, LineFormatRoundTrips) {
  TraceEvent e{TraceKind::PhaseEnter, 3, 17, Stage::Sort, 123456};
  EXPECT_EQ(format_trace_line(e), "event=phase_enter slot=3 cluster=17 stage=sort t=123456");
  EXPECT_EQ(parse_trace_line(format_trace_line(e)), e);
  TraceEvent done{TraceKind::MapDone, 0, 0, Stage::Copy, 9};
  EXPECT_EQ(format_trace_line(done), "event=map_done t=9");
  EXPECT_EQ(parse_trace_line("event=map_done t=9"), done);
  EXPECT_THROW(parse_trace_line("event=phase_exit slot=1 t=2"), Error);
  EXPECT_THROW(parse_trace_line("event=phase_exit slot=1 cluster=2 stage=merge t=2"), Error);
}

TEST(MeasureDelays, Definitions) {
  std::vector<std::string> lines{
      "event=map_done t=100",
      "event=phase_enter slot=1 cluster=2 stage=copy t=100",
      "event=phase_exit slot=1 cluster=2 stage=copy t=107",
      "event=phase_enter slot=1 cluster=2 stage=sort t=107",
      "event=phase_enter slot=1 cluster=2 stage=run t=112",
  };
  auto r = measure_delays(lines, 1);
  EXPECT_EQ(r.sort_delay, 7);
  EXPECT_EQ(r.run_delay, 12);
  EXPECT_GE(r.run_delay, r.sort_delay);
}

TEST(MeasureDelays, MissingAnchorsAreIncompleteTrace) {
  auto expect_incomplete = [](const std::vector<std::string>& lines) {
    try {
      measure_delays(lines, 1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::IncompleteTrace);
    }
  };
  expect_incomplete({"event=phase_enter slot=1 cluster=2 stage=sort t=5",
                     "event=phase_enter slot=1 cluster=2 stage=run t=6"});
  expect_incomplete({"event=map_done t=1", "event=phase_enter slot=1 cluster=2 stage=run t=6"});
  expect_incomplete({"event=map_done t=1", "event=phase_enter slot=2 cluster=2 stage=sort t=6",
                     "event=phase_enter slot=2 cluster=2 stage=run t=7"});
}

TEST(SortCluster, EmptyInput) {
  EXPECT_TRUE(sort_cluster({}, 1024).empty());
  EXPECT_TRUE(sort_cluster({}, 0).empty());
}

TEST(SortCluster, InMemoryAndExternalAgree) {
  std::mt19937_64 g(12);
  std::vector<Record> recs;
  for (int i = 0; i < 10000; ++i) recs.emplace_back("w" + std::to_string(g() % 900), std::to_string(i));
  SortStats mem_stats, ext_stats;
  auto mem = sort_cluster(recs, 64ULL << 20, std::filesystem::temp_directory_path(), &mem_stats);
  auto ext = sort_cluster(recs, 4096, std::filesystem::temp_directory_path(), &ext_stats);
  EXPECT_FALSE(mem_stats.external);
  EXPECT_TRUE(ext_stats.external);
  EXPECT_GT(ext_stats.spill_runs, 10u);
  EXPECT_EQ(mem, ext);
  auto one = sort_cluster(recs, 1, std::filesystem::temp_directory_path());
  EXPECT_EQ(one, mem);

  // oracle: stable grouping by key
  std::map<std::string, std::vector<std::string>> grouped;
  for (const auto& r : recs) grouped[r.first].push_back(r.second);
  std::vector<Record> expect;
  for (const auto& [k, vs] : grouped)
    for (const auto& v : vs) expect.emplace_back(k, v);
  EXPECT_EQ(mem, expect);
}

TEST(SortCluster, UnwritableSpillDirIsIoError) {
  std::vector<Record> recs(100, Record{"k", "v"});
  try {
    sort_cluster(recs, 8, "/proc/opshard-nonexistent");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(StageAlgebra, UnitTimesThreeItems) {
  std::vector<StageTimes> unit(3, StageTimes{1, 1, 1});
  EXPECT_DOUBLE_EQ(pipeline_makespan(unit, PipelineMode::Pipelined), 5.0);
  EXPECT_DOUBLE_EQ(pipeline_makespan(unit, PipelineMode::Sequential), 9.0);
}

TEST(StageAlgebra, SingleItemHasNoOverlap) {
  std::vector<StageTimes> one{{2.5, 1.0, 4.0}};
  EXPECT_DOUBLE_EQ(pipeline_makespan(one, PipelineMode::Pipelined), 7.5);
  EXPECT_DOUBLE_EQ(pipeline_makespan(one, PipelineMode::Sequential), 7.5);
}

TEST(StageAlgebra, MatchesTickOracleAndDominatesSequential) {
  std::mt19937_64 g(77);
  for (int iter = 0; iter < 2000; ++iter) {
    std::size_t n = 1 + g() % 8;
    std::vector<StageTimes> t;
    std::vector<std::array<std::uint64_t, 3>> d;
    for (std::size_t i = 0; i < n; ++i) {
      std::array<std::uint64_t, 3> a{1 + g() % 6, 1 + g() % 6, 1 + g() % 6};
      d.push_back(a);
      t.push_back({double(a[0]), double(a[1]), double(a[2])});
    }
    double pipe = pipeline_makespan(t, PipelineMode::Pipelined);
    double seq = pipeline_makespan(t, PipelineMode::Sequential);
    ASSERT_DOUBLE_EQ(pipe, double(oracle::tick_pipeline(d)));
    ASSERT_LE(pipe, seq);
    if (n > 1) ASSERT_LT(pipe, seq);
    else ASSERT_DOUBLE_EQ(pipe, seq);
  }
}

TEST(StageAlgebra, StageExclusivityInTimeline) {
  std::mt19937_64 g(5);
  std::vector<StageTimes> t;
  for (int i = 0; i < 30; ++i) t.push_back({double(g() % 5), double(g() % 5), double(g() % 5)});
  auto tl = pipeline_timeline(t, PipelineMode::Pipelined);
  for (std::size_t i = 1; i < tl.size(); ++i) {
    EXPECT_GE(tl[i].copy_start, tl[i - 1].copy_end);
    EXPECT_GE(tl[i].sort_start, tl[i - 1].sort_end);
    EXPECT_GE(tl[i].run_start, tl[i - 1].run_end);
    EXPECT_GE(tl[i].sort_start, tl[i].copy_end);
    EXPECT_GE(tl[i].run_start, tl[i].sort_end);
  }
}

TEST(Execute, OutputsMatchSequentialAndOrderIsPlanOrder) {
  std::mt19937_64 g(9);
  for (int iter = 0; iter < 20; ++iter) {
    std::vector<Count> loads(12);
    for (auto& l : loads) l = g() % 300;
    KeyDist d(loads);
    auto p = plan(ids({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}), d, 1024, 4);
    Fetcher fetch = [](const PipelineItem& it) { return synth_records(it); };
    TraceLog tp, ts;
    auto piped = execute(p, fetch, in_memory(), count_per_key, tp);
    auto seq = execute(p, fetch, in_memory(), count_per_key, ts, {PipelineMode::Sequential});
    ASSERT_EQ(piped.outputs, seq.outputs);
    for (const auto& it : piped.items) ASSERT_EQ(it.state, ItemState::Done);

    std::vector<std::uint32_t> sort_order;
    std::map<Stage, int> occupancy;
    for (const auto& e : tp.events()) {
      if (e.kind == TraceKind::PhaseEnter) {
        ASSERT_EQ(++occupancy[e.stage], 1) << "two items in one stage";
        if (e.stage == Stage::Sort) sort_order.push_back(e.cluster);
      } else if (e.kind == TraceKind::PhaseExit) {
        --occupancy[e.stage];
      }
    }
    ASSERT_EQ(sort_order, order_of(p));
  }
}

TEST(Execute, EmptyPlan) {
  TraceLog t;
  auto r = execute(PipelinePlan{}, [](const PipelineItem&) { return std::vector<Record>{}; }, in_memory(),
                   count_per_key, t);
  EXPECT_TRUE(r.outputs.empty());
  EXPECT_TRUE(t.events().empty());
}

TEST(Execute, FetchIsRetriedOnce) {
  KeyDist d({3, 4});
  auto p = plan(ids({1, 2}), d);
  std::map<std::uint32_t, int> attempts;
  std::mutex mu;
  Fetcher flaky = [&](const PipelineItem& it) {
    std::lock_guard lk(mu);
    if (++attempts[it.cluster.value] == 1 && it.cluster.value == 2) throw std::runtime_error("transient");
    return synth_records(it);
  };
  TraceLog t;
  auto r = execute(p, flaky, in_memory(), count_per_key, t);
  EXPECT_EQ(r.outputs.size(), 2u);
  EXPECT_EQ(attempts[2], 2);

  Fetcher broken = [](const PipelineItem& it) -> std::vector<Record> {
    if (it.cluster.value == 2) throw std::runtime_error("disk gone");
    return synth_records(it);
  };
  try {
    TraceLog t2;
    execute(p, broken, in_memory(), count_per_key, t2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::JobFailure);
    EXPECT_NE(std::string(e.what()).find("cluster 2"), std::string::npos);
  }
}

TEST(Execute, ReducerExceptionCarriesClusterId) {
  KeyDist d({1, 2, 3, 4});
  for (auto mode : {PipelineMode::Pipelined, PipelineMode::Sequential}) {
    auto p = plan(ids({1, 2, 3, 4}), d, kDefaultSortThreshold, 2);
    Reducer bad = [](ClusterId c, std::vector<Record> r) {
      if (c.value == 3) throw std::runtime_error("boom");
      return count_per_key(c, std::move(r));
    };
    try {
      TraceLog t;
      execute(p, [](const PipelineItem& it) { return synth_records(it); }, in_memory(), bad, t, {mode});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::JobFailure);
      std::string msg = e.what();
      EXPECT_NE(msg.find("slot 2 cluster 3"), std::string::npos) << msg;
    }
  }
}

TEST(Execute, SortDelayIsFirstCopyAndBeatsSequential) {
  KeyDist d({10, 20, 30});
  auto p = plan(ids({1, 2, 3}), d);
  Fetcher timed = [](const PipelineItem& it) {
    std::this_thread::sleep_for(std::chrono::milliseconds(it.load));
    return synth_records(it);
  };
  TraceLog tp;
  tp.map_done();
  execute(p, timed, in_memory(), count_per_key, tp);
  auto piped = measure_delays(tp.events(), 1);
  std::int64_t first_copy = 0;
  for (const auto& e : tp.events())
    if (e.cluster == 1 && e.stage == Stage::Copy)
      first_copy += e.kind == TraceKind::PhaseExit ? e.t : -e.t;
  EXPECT_NEAR(double(piped.sort_delay), double(first_copy), 0.1 * double(first_copy));

  TraceLog ts;
  ts.map_done();
  execute(p, timed, in_memory(), count_per_key, ts, {PipelineMode::Sequential});
  auto seq = measure_delays(ts.events(), 1);
  EXPECT_LE(piped.sort_delay, seq.sort_delay);
  EXPECT_GE(seq.sort_delay, 55000);
}
