#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "opshard/metrics.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string("'") + OPSHARD_CLI_PATH + "' " + args + " > /dev/null 2>&1";
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("opshard-cli-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("run --seed 1"), 2);
  EXPECT_EQ(run_cli("run --workload zipf"), 2);
  EXPECT_EQ(run_cli("run --workload nope --seed 1"), 2);
  EXPECT_EQ(run_cli("sim --seed 1 --net-bw 0"), 2);
  EXPECT_EQ(run_cli("sched-bench"), 2);
  EXPECT_EQ(run_cli("report"), 2);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, RunWritesMetricsAndOutputs) {
  auto dir = scratch("run");
  ASSERT_EQ(run_cli("run --workload zipf --keys 2000 --pairs 20000 --m 3 --n-target 24 --seed 5 --out-dir '" +
                    dir.string() + "'"),
            0);
  auto m = opshard::read_metrics(dir / "metrics.csv", dir / "timings.csv");
  EXPECT_EQ(m.scheduler, "os4m");
  EXPECT_EQ(m.total_pairs, 20000u);
  EXPECT_EQ(m.slot_loads.size(), 3u);
  EXPECT_GE(m.ratio, 1.0);
  EXPECT_LE(m.collect_bytes + m.broadcast_bytes, m.network_bound);
  EXPECT_FALSE(fs::is_empty(dir / "output"));
  EXPECT_EQ(run_cli("report --out-dir '" + dir.string() + "' --out '" + (dir / "r.csv").string() + "'"), 0);
  EXPECT_TRUE(fs::exists(dir / "r.csv"));
  EXPECT_TRUE(fs::exists(dir / "r_timing.csv"));
}

TEST(Cli, SchedBenchUniformEqualLoadsAreBalanced) {
  auto dir = scratch("bench");
  ASSERT_EQ(run_cli("sched-bench --family uniform --m 4 --instances 1 --seed 1 --out-dir '" + dir.string() + "'"), 0);
  auto rows = opshard::csv::read(dir / "sched_bench.csv");
  ASSERT_EQ(rows.size(), 5u);  // header, hash, lpt, os4m, oracle
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][7], "1") << rows[i][4];
}

TEST(Cli, SimCompareWritesBothModes) {
  auto dir = scratch("sim");
  ASSERT_EQ(run_cli("sim --compare --waves 3 --seed 2 --out-dir '" + dir.string() + "'"), 0);
  for (auto f : {"waves.csv", "summary.csv", "progress_hadoop.csv", "progress_os4m.csv", "stages_os4m.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto waves = opshard::csv::read(dir / "waves.csv");
  ASSERT_EQ(waves.size(), 7u);
  double h1 = opshard::csv::to_double(waves[1][2]), h2 = opshard::csv::to_double(waves[2][2]),
         h3 = opshard::csv::to_double(waves[3][2]);
  EXPECT_LT(h1, h2);
  EXPECT_LT(h2, h3);
}
