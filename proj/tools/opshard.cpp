// opshard command-line front end: run, sched-bench, sim, report.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "opshard/comm.hpp"
#include "opshard/engine.hpp"
#include "opshard/metrics.hpp"
#include "opshard/sched.hpp"
#include "opshard/sim.hpp"
#include "opshard/workload.hpp"

namespace fs = std::filesystem;
using namespace opshard;

namespace {

enum class LogLevel { Quiet, Info, Trace };

LogLevel log_level() {
  const char* v = std::getenv("OPSHARD_LOG");
  if (!v) return LogLevel::Quiet;
  std::string s(v);
  if (s == "trace") return LogLevel::Trace;
  if (s == "info" || s == "debug") return LogLevel::Info;
  return LogLevel::Quiet;
}

void info(const std::string& msg) {
  if (log_level() != LogLevel::Quiet) std::cerr << "opshard: " << msg << '\n';
}

SchedulerKind parse_scheduler(const std::string& s) {
  if (s == "hash") return SchedulerKind::Hash;
  if (s == "lpt") return SchedulerKind::LPT;
  return SchedulerKind::OS4M;
}

const std::vector<std::string> kSchedulers{"hash", "lpt", "os4m"};

// ---- run ----------------------------------------------------------------------

struct RunArgs {
  std::string workload;
  std::optional<std::uint64_t> seed;
  double s = 1.0;
  std::uint64_t keys = 10000;
  std::uint64_t pairs = 200000;
  std::uint64_t corpus_bytes = 1 << 20;
  std::string job = "wordcount";
  std::optional<std::uint32_t> m;
  std::optional<std::uint32_t> n_target;
  double eta = 0.002;
  std::uint32_t waves = 2;
  std::uint32_t map_slots = 4;
  std::optional<std::uint32_t> map_tasks;
  std::uint32_t trackers = 1;
  std::uint64_t sort_threshold = kDefaultSortThreshold;
  bool sequential = false;
  std::string scheduler = "os4m";
  std::string out_dir = "opshard-out";
};

int cmd_run(const RunArgs& a) {
  WorkloadGen g;
  g.kind = a.workload == "zipf" ? WorkloadKind::Zipf
           : a.workload == "uniform" ? WorkloadKind::Uniform
                                     : WorkloadKind::WordCorpus;
  g.s = a.s;
  g.distinct_keys = a.keys;
  g.total_pairs = a.pairs;
  g.seed = *a.seed;
  g.corpus_bytes = a.corpus_bytes;

  JobSpec spec;
  auto fns = a.job == "inverted-index" ? inverted_index_job() : wordcount_job();
  spec.map_fn = fns.map;
  spec.reduce_fn = fns.reduce;
  spec.input = gen_workload(g);
  spec.config.m = a.m ? *a.m : default_reduce_slots();
  spec.config.n_target = a.n_target ? *a.n_target : 8 * spec.config.m;
  spec.config.eta = a.eta;
  spec.config.w = a.waves;
  spec.config.map_slots = a.map_slots;
  spec.config.scheduler_kind = parse_scheduler(a.scheduler);
  spec.map_tasks = a.map_tasks;
  spec.trackers = a.trackers;
  spec.sort_threshold = a.sort_threshold;
  spec.pipeline_mode = a.sequential ? PipelineMode::Sequential : PipelineMode::Pipelined;
  spec.work_dir = a.out_dir;
  if (log_level() == LogLevel::Trace) spec.trace_sink = [](const std::string& line) { std::cerr << line << '\n'; };

  fs::create_directories(spec.work_dir);
  auto res = run_job(spec);
  write_metrics_csv(res.metrics, spec.work_dir / "metrics.csv");
  write_timings_csv(res.metrics, spec.work_dir / "timings.csv");
  info("job done: " + std::to_string(res.outputs.size()) + " clusters reduced, ratio " +
       csv::num(res.metrics.ratio) + ", outputs in " + res.output_dir.string());
  return 0;
}

// ---- sched-bench ----------------------------------------------------------------

struct BenchArgs {
  std::string family = "mixed";
  std::optional<std::uint64_t> seed;
  std::uint32_t instances = 200;
  std::optional<std::uint32_t> n;
  std::optional<std::uint32_t> m;
  double eta = 0.002;
  Count load = 1000;
  double s = 1.0;
  std::uint64_t keys = 100000;
  std::uint64_t pairs = 2000000;
  std::string out_dir = "opshard-bench";
};

struct BenchInstance {
  std::string shape;
  KeyDist dist;
  std::uint32_t m = 1;
};

BenchInstance make_instance(const BenchArgs& a, std::uint32_t i, std::mt19937_64& g) {
  if (a.family == "uniform") {
    std::uint32_t m = a.m.value_or(30);
    std::uint32_t n = a.n.value_or(m);
    return {"uniform_equal", KeyDist(std::vector<Count>(n, a.load)), m};
  }
  if (a.family == "zipf-keys") {
    std::uint32_t n = a.n.value_or(240);
    std::uint32_t m = a.m.value_or(30);
    WorkloadGen w{WorkloadKind::Zipf, a.s, a.keys, a.pairs, *a.seed + i};
    return {"zipf_keys", cluster_key_counts(gen_key_counts(w), Clusterer::default_hash(n)), m};
  }
  static constexpr LoadShape kShapes[] = {LoadShape::Uniform, LoadShape::Zipf, LoadShape::HeavyOutlier};
  auto shape = kShapes[i % 3];
  std::uint32_t n = a.n.value_or(4 + static_cast<std::uint32_t>(rng::below(g, 15)));
  std::uint32_t m = a.m.value_or(2 + static_cast<std::uint32_t>(rng::below(g, 3)));
  return {to_string(shape), KeyDist(gen_cluster_loads(shape, n, g)), m};
}

int cmd_sched_bench(const BenchArgs& a) {
  fs::path dir(a.out_dir);
  csv::Writer rows(dir / "sched_bench.csv", {"instance", "shape", "n", "m", "solver", "max_load", "ideal_load", "ratio"});
  csv::Writer times(dir / "sched_bench_timing.csv", {"instance", "solver", "solver_seconds"});
  std::mt19937_64 g(*a.seed);
  const OracleLimits guard;
  std::uint32_t compared = 0, within = 0;
  for (std::uint32_t i = 0; i < a.instances; ++i) {
    auto inst = make_instance(a, i, g);
    std::vector<std::pair<std::string, ScheduleResult>> results;
    for (const auto& name : kSchedulers) results.emplace_back(name, run_scheduler(inst.dist, inst.m, parse_scheduler(name), a.eta));
    if (inst.dist.n() <= guard.max_n && inst.m <= guard.max_m) {
      results.emplace_back("oracle", brute_force_optimal(inst.dist, inst.m, guard));
      ++compared;
      const double cap = (1.0 + a.eta) * static_cast<double>(results.back().second.max_load);
      if (static_cast<double>(results[2].second.max_load) <= cap) ++within;
    }
    for (const auto& [name, r] : results) {
      rows.line({std::to_string(i + 1), inst.shape, std::to_string(inst.dist.n()), std::to_string(inst.m), name,
                 csv::num(r.max_load), csv::num(r.ideal.to_double()), csv::num(r.ratio)});
      times.line({std::to_string(i + 1), name, csv::num(std::chrono::duration<double>(r.solver_time).count())});
    }
  }
  info(std::to_string(a.instances) + " instances; os4m within (1+eta) of oracle on " + std::to_string(within) + "/" +
       std::to_string(compared));
  return 0;
}

// ---- sim ------------------------------------------------------------------------

struct SimArgs {
  std::optional<std::uint64_t> seed;
  bool compare = false;
  std::string overlap = "os4m";
  std::uint32_t waves = 3;
  std::optional<std::uint32_t> map_tasks;
  std::uint32_t nodes = 4;
  std::uint32_t map_slots_per_node = 4;
  std::uint32_t reduce_slots_per_node = 2;
  double net_bw = 37.0;
  double disk_read_bw = 203.0;
  double disk_write_bw = 121.0;
  double map_work = 5.0;
  double map_input_mb = 128.0;
  double map_output_mb = 128.0;
  double sort_threshold_mb = 64.0 * 1024 * 1024 / sim::kMB;
  double per_item_overhead = 0.1;
  double fetch_latency = 0.01;
  bool sequential = false;
  double s = 1.0;
  std::uint64_t keys = 5000;
  std::uint64_t pairs = 100000;
  std::optional<std::uint32_t> m;
  std::uint32_t n_target = 48;
  double eta = 0.002;
  std::string scheduler = "os4m";
  std::string out_dir = "opshard-sim";
};

void write_sim_trace(const fs::path& dir, const std::string& mode, const sim::SimTrace& t) {
  csv::Writer p(dir / ("progress_" + mode + ".csv"), {"t", "map_fraction", "reduce_fraction", "event"});
  for (const auto& s : t.progress) p.line({csv::num(s.t), csv::num(s.map_fraction), csv::num(s.reduce_fraction), s.event});
  csv::Writer st(dir / ("stages_" + mode + ".csv"), {"slot", "cluster", "stage", "start", "end"});
  for (const auto& r : t.stages)
    st.line({std::to_string(r.slot), std::to_string(r.cluster), to_string(r.stage), csv::num(r.start), csv::num(r.end)});
}

int cmd_sim(const SimArgs& a) {
  sim::SimConfig cfg;
  cfg.nodes = a.nodes;
  cfg.map_slots_per_node = a.map_slots_per_node;
  cfg.reduce_slots_per_node = a.reduce_slots_per_node;
  cfg.net_bw = a.net_bw;
  cfg.disk_read_bw = a.disk_read_bw;
  cfg.disk_write_bw = a.disk_write_bw;
  cfg.waves = a.waves;
  cfg.map_tasks = a.map_tasks;
  cfg.map_task_work = a.map_work;
  cfg.map_input_bytes = a.map_input_mb * sim::kMB;
  cfg.map_output_bytes = a.map_output_mb * sim::kMB;
  cfg.sort_threshold = a.sort_threshold_mb * sim::kMB;
  cfg.per_item_overhead = a.per_item_overhead;
  cfg.fetch_latency = a.fetch_latency;
  cfg.pipeline_mode = a.sequential ? PipelineMode::Sequential : PipelineMode::Pipelined;
  const std::uint32_t m = a.m.value_or(a.nodes * a.reduce_slots_per_node);
  WorkloadGen w{WorkloadKind::Zipf, a.s, a.keys, a.pairs, *a.seed};
  cfg.dist = cluster_key_counts(gen_key_counts(w), Clusterer::default_hash(a.n_target));
  cfg.schedule = run_scheduler(cfg.dist, m, parse_scheduler(a.scheduler), a.eta).schedule;
  cfg.validate();

  fs::path dir(a.out_dir);
  std::vector<std::pair<std::string, sim::SimTrace>> traces;
  if (a.compare) {
    auto r = sim::compare_modes(cfg);
    traces.emplace_back("hadoop", std::move(r.hadoop_trace));
    traces.emplace_back("os4m", std::move(r.os4m_trace));
  } else {
    cfg.overlap_mode = a.overlap == "hadoop" ? sim::OverlapMode::HadoopOverlap : sim::OverlapMode::OS4MDeferred;
    traces.emplace_back(a.overlap, sim::simulate(cfg));
  }

  csv::Writer waves(dir / "waves.csv", {"mode", "wave", "duration"});
  csv::Writer summary(dir / "summary.csv", {"mode", "map_phase_time", "reduce_start", "reduce_end", "reduce_phase_time",
                                            "slot_busy_total", "job_time"});
  for (const auto& [mode, t] : traces) {
    for (std::size_t i = 0; i < t.wave_durations.size(); ++i)
      waves.line({mode, std::to_string(i + 1), csv::num(t.wave_durations[i])});
    summary.line({mode, csv::num(t.map_phase_end), csv::num(t.reduce_start), csv::num(t.reduce_end),
                  csv::num(t.reduce_end - t.map_phase_end), csv::num(t.total_reduce_time()), csv::num(t.job_end)});
    write_sim_trace(dir, mode, t);
  }
  info("simulation written to " + dir.string());
  return 0;
}

// ---- report ---------------------------------------------------------------------

struct ReportArgs {
  std::string dir;
  std::string metrics;
  std::string timings;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  fs::path metrics = a.metrics.empty() ? fs::path(a.dir) / "metrics.csv" : fs::path(a.metrics);
  fs::path timings = a.timings.empty() ? (a.dir.empty() ? fs::path() : fs::path(a.dir) / "timings.csv") : fs::path(a.timings);
  if (!timings.empty() && !fs::exists(timings)) timings.clear();
  auto m = read_metrics(metrics, timings);

  std::vector<std::vector<std::string>> rows{
      {"scheduler", m.scheduler},
      {"map_tasks", csv::num(m.map_tasks)},
      {"clusters", csv::num(m.clusters)},
      {"effective_clusters", csv::num(m.effective_clusters)},
      {"total_pairs", csv::num(m.total_pairs)},
      {"max_load", csv::num(m.max_load)},
      {"ideal_load", csv::num(m.ideal_load)},
      {"ratio", csv::num(m.ratio)},
      {"slot_load_rel_stddev", csv::num(m.slot_load_rel_stddev)},
      {"stats_bytes", csv::num(m.collect_bytes + m.broadcast_bytes)},
      {"network_bound", csv::num(m.network_bound)},
      {"within_bound", m.collect_bytes + m.broadcast_bytes <= m.network_bound ? "1" : "0"},
  };
  std::vector<std::vector<std::string>> timing_rows;
  if (!timings.empty()) {
    auto ms = m.map_spread(), rs = m.reduce_spread();
    timing_rows = {
        {"map_seconds_mean", csv::num(ms.mean)},
        {"map_seconds_rel_stddev", csv::num(ms.rel_stddev)},
        {"reduce_seconds_mean", csv::num(rs.mean)},
        {"reduce_seconds_rel_stddev", csv::num(rs.rel_stddev)},
        {"sort_delay_mean_seconds", csv::num(spread_of(m.sort_delay_seconds).mean)},
        {"run_delay_mean_seconds", csv::num(spread_of(m.run_delay_seconds).mean)},
        {"scheduler_seconds", csv::num(m.scheduler_seconds)},
    };
  }
  std::cout << csv::row({"metric", "value"}) << '\n';
  for (const auto& r : rows) std::cout << csv::row(r) << '\n';
  for (const auto& r : timing_rows) std::cout << csv::row(r) << '\n';
  if (!a.out.empty()) {
    // wall-clock rows go to a sibling file so the summary stays reproducible
    fs::path out(a.out);
    csv::Writer w(out, {"metric", "value"});
    for (const auto& r : rows) w.line(r);
    if (!timing_rows.empty()) {
      csv::Writer tw(out.parent_path() / (out.stem().string() + "_timing" + out.extension().string()), {"metric", "value"});
      for (const auto& r : timing_rows) tw.line(r);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opshard: single-machine MapReduce with operation-level Reduce scheduling"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run a MapReduce job and write outputs plus metrics.csv");
  run->add_option("--workload", ra.workload, "Input generator")->required()->check(CLI::IsMember({"zipf", "uniform", "corpus"}));
  run->add_option("--seed", ra.seed, "Workload seed")->required();
  run->add_option("--s", ra.s, "Zipf exponent")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--keys", ra.keys, "Distinct keys (corpus: vocabulary size)")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--pairs", ra.pairs, "Intermediate pairs for zipf/uniform")->capture_default_str();
  run->add_option("--corpus-bytes", ra.corpus_bytes, "Corpus size in bytes")->capture_default_str();
  run->add_option("--job", ra.job, "Job")->capture_default_str()->check(CLI::IsMember({"wordcount", "inverted-index"}));
  run->add_option("--m", ra.m, "Reduce slots (default: 95% of cores, at least 2)")->check(CLI::PositiveNumber);
  run->add_option("--n-target", ra.n_target, "Operation clusters (default: 8 * m)")->check(CLI::PositiveNumber);
  run->add_option("--eta", ra.eta, "OS4M precision")->capture_default_str()->check(CLI::Range(1e-9, 0.999999));
  run->add_option("--waves", ra.waves, "Map waves")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--map-slots", ra.map_slots, "Map slots")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--map-tasks", ra.map_tasks, "Map task count (default: waves * map slots)")->check(CLI::PositiveNumber);
  run->add_option("--trackers", ra.trackers, "Per-node trackers")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_option("--sort-threshold", ra.sort_threshold, "Bytes sorted in memory before spilling")->capture_default_str()->check(CLI::PositiveNumber);
  run->add_flag("--sequential", ra.sequential, "Run copy/sort/run back to back instead of pipelined");
  run->add_option("--scheduler", ra.scheduler, "Reduce scheduler")->capture_default_str()->check(CLI::IsMember(kSchedulers));
  run->add_option("--out-dir", ra.out_dir, "Output directory")->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand("sched-bench", "Compare hash, LPT, OS4M and the exact oracle");
  bench->add_option("--family", ba.family, "Instance family")->capture_default_str()->check(CLI::IsMember({"mixed", "uniform", "zipf-keys"}));
  bench->add_option("--seed", ba.seed, "Instance seed")->required();
  bench->add_option("--instances", ba.instances, "Number of instances")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--n-target", ba.n, "Clusters per instance (mixed: random in [4, 18])")->check(CLI::PositiveNumber);
  bench->add_option("--m", ba.m, "Reduce slots (mixed: random in {2, 3, 4})")->check(CLI::PositiveNumber);
  bench->add_option("--eta", ba.eta, "OS4M precision")->capture_default_str()->check(CLI::Range(1e-9, 0.999999));
  bench->add_option("--load", ba.load, "Per-cluster load for the uniform family")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--s", ba.s, "Zipf exponent for zipf-keys")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--keys", ba.keys, "Distinct keys for zipf-keys")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--pairs", ba.pairs, "Pairs for zipf-keys")->capture_default_str();
  bench->add_option("--out-dir", ba.out_dir, "Output directory")->capture_default_str();

  SimArgs sa;
  auto* simc = app.add_subcommand("sim", "Simulate a cluster job and write progress curves");
  simc->add_option("--seed", sa.seed, "Workload seed")->required();
  simc->add_flag("--compare", sa.compare, "Simulate both overlap modes");
  simc->add_option("--overlap", sa.overlap, "Shuffle overlap mode")->capture_default_str()->check(CLI::IsMember({"hadoop", "os4m"}));
  simc->add_option("--waves", sa.waves, "Map waves")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--map-tasks", sa.map_tasks, "Map task count (default: waves * map slots)")->check(CLI::PositiveNumber);
  simc->add_option("--nodes", sa.nodes, "Nodes")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--map-slots-per-node", sa.map_slots_per_node, "Map slots per node")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--reduce-slots-per-node", sa.reduce_slots_per_node, "Reduce slots per node")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--net-bw", sa.net_bw, "Network MB/s per node")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--disk-read-bw", sa.disk_read_bw, "Disk read MB/s per node")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--disk-write-bw", sa.disk_write_bw, "Disk write MB/s per node")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--map-work", sa.map_work, "Map compute seconds per task")->capture_default_str()->check(CLI::NonNegativeNumber);
  simc->add_option("--map-input-mb", sa.map_input_mb, "Map input MB per task")->capture_default_str()->check(CLI::NonNegativeNumber);
  simc->add_option("--map-output-mb", sa.map_output_mb, "Map output MB per task")->capture_default_str()->check(CLI::NonNegativeNumber);
  simc->add_option("--sort-threshold-mb", sa.sort_threshold_mb, "In-memory sort limit in MB")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--per-item-overhead", sa.per_item_overhead, "Seconds per Reduce item")->capture_default_str()->check(CLI::NonNegativeNumber);
  simc->add_option("--fetch-latency", sa.fetch_latency, "Seconds per bucket fetch")->capture_default_str()->check(CLI::NonNegativeNumber);
  simc->add_flag("--sequential", sa.sequential, "Unpipelined Reduce slots");
  simc->add_option("--s", sa.s, "Zipf exponent")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--keys", sa.keys, "Distinct keys")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--pairs", sa.pairs, "Intermediate pairs")->capture_default_str();
  simc->add_option("--m", sa.m, "Reduce slots (default: nodes * reduce slots per node)")->check(CLI::PositiveNumber);
  simc->add_option("--n-target", sa.n_target, "Operation clusters")->capture_default_str()->check(CLI::PositiveNumber);
  simc->add_option("--eta", sa.eta, "OS4M precision")->capture_default_str()->check(CLI::Range(1e-9, 0.999999));
  simc->add_option("--scheduler", sa.scheduler, "Reduce scheduler")->capture_default_str()->check(CLI::IsMember(kSchedulers));
  simc->add_option("--out-dir", sa.out_dir, "Output directory")->capture_default_str();

  ReportArgs pa;
  auto* report = app.add_subcommand("report", "Summarise metrics.csv and timings.csv");
  report->add_option("--out-dir", pa.dir, "Directory written by run");
  report->add_option("--metrics", pa.metrics, "metrics.csv path");
  report->add_option("--timings", pa.timings, "timings.csv path");
  report->add_option("--out", pa.out, "Also write the summary here");

  try {
    app.parse(argc, argv);
    if (report->parsed() && pa.dir.empty() && pa.metrics.empty())
      throw CLI::RequiredError("--out-dir or --metrics");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(ra);
    if (bench->parsed()) return cmd_sched_bench(ba);
    if (simc->parsed()) return cmd_sim(sa);
    return cmd_report(pa);
  } catch (const Error& e) {
    std::cerr << "opshard: " << to_string(e.kind()) << ": " << e.what() << '\n';
    if (e.kind() == ErrorKind::InvalidInput) {
      std::cerr << app.get_subcommands().front()->help();
      return 2;
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "opshard: " << e.what() << '\n';
    return 1;
  }
}
