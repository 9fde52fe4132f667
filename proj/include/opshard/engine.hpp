#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "opshard/cluster.hpp"
#include "opshard/comm.hpp"
#include "opshard/core.hpp"
#include "opshard/metrics.hpp"
#include "opshard/pipeline.hpp"
#include "opshard/sched.hpp"
#include "opshard/wire.hpp"

namespace opshard {

namespace fs = std::filesystem;

using Emit = std::function<void(std::string_view key, std::string_view value)>;
using MapFn = std::function<void(const std::string& record, const Emit& emit)>;
using ReduceFn = std::function<void(const std::string& key, const std::vector<std::string>& values, const Emit& emit)>;

/// m = max(2, floor(0.95 * logical cores)).
inline std::uint32_t default_reduce_slots() {
  unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::uint32_t>(2, static_cast<std::uint32_t>(std::floor(0.95 * cores)));
}

// ---- input splitting --------------------------------------------------------

/// Contiguous split into `tasks` parts whose sizes differ by at most one;
/// the first (size mod tasks) parts take the extra record.
inline std::vector<std::vector<std::string>> split_into(const std::vector<std::string>& input, std::uint32_t tasks) {
  if (tasks == 0) throw Error(ErrorKind::InvalidInput, "need at least one map task");
  std::vector<std::vector<std::string>> out(tasks);
  const std::size_t base = input.size() / tasks, extra = input.size() % tasks;
  std::size_t pos = 0;
  for (std::uint32_t i = 0; i < tasks; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    out[i].assign(input.begin() + static_cast<std::ptrdiff_t>(pos), input.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

/// M = w * map_slots Map task inputs.
inline std::vector<std::vector<std::string>> split_input(const std::vector<std::string>& input, std::uint32_t map_slots,
                                                         std::uint32_t w) {
  if (w < 1) throw Error(ErrorKind::InvalidInput, "w must be >= 1");
  if (map_slots < 1) throw Error(ErrorKind::InvalidInput, "map_slots must be >= 1");
  return split_into(input, w * map_slots);
}

/// Task counts per wave when M tasks run on map_slots slots.
inline std::vector<std::uint32_t> wave_sizes(std::uint32_t M, std::uint32_t map_slots) {
  if (map_slots < 1) throw Error(ErrorKind::InvalidInput, "map_slots must be >= 1");
  std::vector<std::uint32_t> out;
  for (std::uint32_t left = M; left > 0; left -= std::min(left, map_slots)) out.push_back(std::min(left, map_slots));
  return out;
}

// ---- record files -----------------------------------------------------------

inline constexpr char kBucketMagic[] = "OSB1";
inline constexpr char kOutputMagic[] = "OSR1";

/// Header [magic][owner:4][cluster:4][count:8], then [klen:4][key][vlen:4][val]
/// per record. `owner` is the Map task id for buckets, the slot for outputs.
struct RecordFile {
  std::string magic;
  std::uint32_t owner = 0;
  ClusterId cluster;
  std::vector<Record> records;
};

inline wire::Bytes encode_record_file(std::string_view magic, std::uint32_t owner, ClusterId cluster,
                                      const std::vector<Record>& records) {
  wire::Bytes b;
  wire::put_bytes(b, magic);
  wire::put_u32(b, owner);
  wire::put_u32(b, cluster.value);
  wire::put_u64(b, records.size());
  for (const auto& [k, v] : records) {
    if (k.size() > UINT32_MAX || v.size() > UINT32_MAX) throw Error(ErrorKind::Size, "record field too long");
    wire::put_u32(b, static_cast<std::uint32_t>(k.size()));
    wire::put_bytes(b, k);
    wire::put_u32(b, static_cast<std::uint32_t>(v.size()));
    wire::put_bytes(b, v);
  }
  return b;
}

inline void write_record_file(const fs::path& path, std::string_view magic, std::uint32_t owner, ClusterId cluster,
                              const std::vector<Record>& records) {
  auto b = encode_record_file(magic, owner, cluster, records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

inline RecordFile read_record_file(const fs::path& path, std::string_view magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    wire::Reader in(bytes);
    RecordFile out;
    out.magic = in.str(4);
    if (out.magic != magic) throw Error(ErrorKind::Io, "bad magic in " + path.string());
    out.owner = in.u32();
    out.cluster = ClusterId{in.u32()};
    std::uint64_t count = in.u64();
    out.records.reserve(std::min<std::uint64_t>(count, bytes.size() / 8));
    for (std::uint64_t i = 0; i < count; ++i) {
      Record r;
      r.first = in.str(in.u32());
      r.second = in.str(in.u32());
      out.records.push_back(std::move(r));
    }
    if (!in.done()) throw Error(ErrorKind::Io, "trailing bytes in " + path.string());
    return out;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(ErrorKind::Io, "corrupt record file " + path.string() + ": " + e.what());
  }
}

inline fs::path bucket_path(const fs::path& dir, std::uint32_t task, ClusterId c) {
  return dir / ("m" + std::to_string(task) + "-c" + std::to_string(c.value) + ".osb");
}

inline fs::path output_path(const fs::path& dir, ClusterId c) {
  return dir / ("c" + std::to_string(c.value) + ".osr");
}

// ---- map side ---------------------------------------------------------------

struct MapTaskOutput {
  std::map<ClusterId, fs::path> buckets;
  StatsMessage stats;
};

/// One Map attempt: runs map_fn over the task input, writes one bucket file
/// per non-empty cluster and builds the matching stats message.
inline MapTaskOutput run_map_task(std::uint32_t task_id, std::uint32_t attempt, const std::vector<std::string>& input,
                                  const MapFn& map_fn, const Clusterer& clusterer, const fs::path& bucket_dir) {
  std::map<ClusterId, std::vector<Record>> per_cluster;
  Emit emit = [&](std::string_view k, std::string_view v) {
    per_cluster[clusterer(k)].emplace_back(std::string(k), std::string(v));
  };
  for (const auto& rec : input) map_fn(rec, emit);

  MapTaskOutput out;
  out.stats = StatsMessage{task_id, attempt, std::vector<Count>(clusterer.n_target(), 0), true};
  for (const auto& [c, recs] : per_cluster) {
    auto p = bucket_path(bucket_dir, task_id, c);
    write_record_file(p, kBucketMagic, task_id, c, recs);
    out.buckets[c] = p;
    out.stats.counts[c.index()] = recs.size();
  }
  return out;
}

// ---- built-in jobs ------------------------------------------------------------

namespace detail {

// Words of a record; text after the first tab when there is one.
template <typename Fn>
void for_each_word(const std::string& record, Fn&& fn) {
  auto tab = record.find('\t');
  std::size_t i = tab == std::string::npos ? 0 : tab + 1;
  while (i < record.size()) {
    while (i < record.size() && (record[i] == ' ' || record[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < record.size() && record[j] != ' ' && record[j] != '\t') ++j;
    if (j > i) fn(std::string_view(record).substr(i, j - i));
    i = j;
  }
}

}  // namespace detail

struct JobFns {
  MapFn map;
  ReduceFn reduce;
};

inline JobFns wordcount_job() {
  return {[](const std::string& rec, const Emit& emit) { detail::for_each_word(rec, [&](std::string_view w) { emit(w, "1"); }); },
          [](const std::string& key, const std::vector<std::string>& vals, const Emit& emit) {
            std::uint64_t sum = 0;
            for (const auto& v : vals) sum += csv::to_u64(v);
            emit(key, std::to_string(sum));
          }};
}

/// word -> comma-joined sorted distinct doc ids ("d<line>" field of a record).
inline JobFns inverted_index_job() {
  return {[](const std::string& rec, const Emit& emit) {
            auto tab = rec.find('\t');
            std::string_view doc = tab == std::string::npos ? std::string_view{} : std::string_view(rec).substr(0, tab);
            detail::for_each_word(rec, [&](std::string_view w) { emit(w, doc); });
          },
          [](const std::string& key, const std::vector<std::string>& vals, const Emit& emit) {
            std::vector<std::string> docs(vals);
            std::sort(docs.begin(), docs.end());
            docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
            std::string joined;
            for (std::size_t i = 0; i < docs.size(); ++i) {
              if (i) joined.push_back(',');
              joined += docs[i];
            }
            emit(key, joined);
          }};
}

// ---- job ----------------------------------------------------------------------

struct JobSpec {
  MapFn map_fn;
  ReduceFn reduce_fn;
  std::vector<std::string> input;
  JobConfig config;
  std::optional<Clusterer> clusterer;  // default hash over n_target when empty
  fs::path work_dir;

  std::optional<std::uint32_t> map_tasks;  // overrides w * map_slots
  std::uint32_t trackers = 1;
  std::uint64_t sort_threshold = kDefaultSortThreshold;
  PipelineMode pipeline_mode = PipelineMode::Pipelined;
  TraceLog::Sink trace_sink;

  // fault injection: attempt fails before running map_fn
  std::function<bool(std::uint32_t task, std::uint32_t attempt)> fail_attempt;
  // task reports a second, identical successful attempt
  std::function<bool(std::uint32_t task)> duplicate_attempt;
};

struct TaskSpan {
  std::uint32_t task = 0;
  std::uint32_t wave = 0;
  std::int64_t start = 0;  // micros, TraceLog clock
  std::int64_t end = 0;
};

struct JobResult {
  std::vector<ClusterOutput> outputs;  // by cluster id
  KeyDist dist;
  ScheduleResult schedule;
  MetricsBundle metrics;
  std::vector<TaskSpan> map_spans;
  std::vector<TraceEvent> trace;
  std::vector<DelayReport> delays;  // slots with at least one item
  std::vector<std::uint32_t> registry_tasks;  // task ids held by the master registry
  fs::path bucket_dir;
  fs::path output_dir;
};

namespace detail {

inline double seconds_between(std::int64_t a, std::int64_t b) { return static_cast<double>(b - a) * 1e-6; }

inline std::vector<Record> reduce_sorted(const ReduceFn& fn, std::vector<Record> sorted) {
  std::vector<Record> out;
  Emit emit = [&](std::string_view k, std::string_view v) { out.emplace_back(std::string(k), std::string(v)); };
  std::vector<std::string> values;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    values.clear();
    while (j < sorted.size() && sorted[j].first == sorted[i].first) values.push_back(std::move(sorted[j++].second));
    fn(sorted[i].first, values, emit);
    i = j;
  }
  return out;
}

}  // namespace detail

/// Map phase, barrier, stats aggregation, scheduling, schedule broadcast, then
/// one copy/sort/run pipeline per Reduce slot. Bucket files live under
/// work_dir/buckets, reduce outputs under work_dir/output.
inline JobResult run_job(const JobSpec& spec) {
  spec.config.validate();
  if (!spec.map_fn || !spec.reduce_fn) throw Error(ErrorKind::InvalidInput, "job needs map and reduce functions");
  if (spec.work_dir.empty()) throw Error(ErrorKind::InvalidInput, "job needs a work directory");
  if (spec.trackers < 1) throw Error(ErrorKind::InvalidInput, "need at least one tracker");
  const auto& cfg = spec.config;
  const Clusterer clusterer = spec.clusterer ? *spec.clusterer : Clusterer::default_hash(cfg.n_target);
  const std::uint32_t n = clusterer.n_target();

  JobResult res;
  res.bucket_dir = spec.work_dir / "buckets";
  res.output_dir = spec.work_dir / "output";
  fs::path spill_dir = spec.work_dir / "spill";
  for (const auto& d : {res.bucket_dir, res.output_dir}) {
    fs::remove_all(d);
    fs::create_directories(d);
  }
  fs::create_directories(spill_dir);

  auto tasks = spec.map_tasks ? split_into(spec.input, *spec.map_tasks) : split_input(spec.input, cfg.map_slots, cfg.w);
  const auto M = static_cast<std::uint32_t>(tasks.size());

  TraceLog trace(spec.trace_sink);
  Transport net;
  std::deque<Tracker> trackers;
  for (std::uint32_t i = 0; i < spec.trackers; ++i) trackers.emplace_back(i + 1, net);
  for (std::uint32_t s = 1; s <= cfg.m; ++s) trackers[(s - 1) % spec.trackers].attach_reduce_slot(s);

  // Map phase: map_slots workers drain the task queue in id order.
  std::vector<std::map<ClusterId, fs::path>> buckets(M);
  res.map_spans.resize(M);
  std::atomic<std::uint32_t> next{0};
  std::mutex err_mu;
  std::optional<Error> map_error;
  auto worker = [&] {
    for (std::uint32_t i; (i = next++) < M;) {
      const std::uint32_t task_id = i + 1;
      auto& span = res.map_spans[i];
      span.task = task_id;
      span.wave = i / cfg.map_slots + 1;
      span.start = TraceLog::now();
      Tracker& tr = trackers[i % spec.trackers];
      bool ok = false;
      std::string last_error;
      for (std::uint32_t attempt = 0; attempt < 2 && !ok; ++attempt) {
        try {
          if (spec.fail_attempt && spec.fail_attempt(task_id, attempt))
            throw Error(ErrorKind::JobFailure, "injected map failure");
          auto out = run_map_task(task_id, attempt, tasks[i], spec.map_fn, clusterer, res.bucket_dir);
          tracker_forward(tr, out.stats);
          if (spec.duplicate_attempt && spec.duplicate_attempt(task_id)) {
            auto dup = out.stats;
            dup.attempt_id = attempt + 1;
            tracker_forward(tr, dup);
          }
          buckets[i] = std::move(out.buckets);
          ok = true;
        } catch (const std::exception& e) {
          last_error = e.what();
          tracker_forward(tr, StatsMessage{task_id, attempt, {}, false});
        }
      }
      span.end = TraceLog::now();
      if (!ok) {
        std::lock_guard lk(err_mu);
        if (!map_error)
          map_error = Error(ErrorKind::JobFailure, "map task " + std::to_string(task_id) + " failed twice: " + last_error);
      }
    }
  };
  {
    std::vector<std::thread> pool;
    for (std::uint32_t s = 0; s < std::min(cfg.map_slots, std::max<std::uint32_t>(M, 1)); ++s) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (map_error) throw *map_error;
  trace.map_done();

  // Stats collection and scheduling.
  StatsRegistry registry(M, n);
  for (auto& t : trackers) ingest_batch(registry, t.flush());
  res.dist = aggregate(registry);
  for (const auto& [task, counts] : registry.by_task()) res.registry_tasks.push_back(task);
  res.schedule = run_scheduler(res.dist, cfg.m, cfg.scheduler_kind, cfg.eta);
  std::vector<Tracker*> tptrs;
  for (auto& t : trackers) tptrs.push_back(&t);
  auto delivered = broadcast_schedule(res.schedule.schedule, tptrs);

  // Reduce phase: one pipeline per slot.
  std::vector<std::vector<ClusterOutput>> slot_outputs(cfg.m);
  std::vector<std::int64_t> slot_start(cfg.m, 0), slot_end(cfg.m, 0);
  std::vector<char> slot_has_items(cfg.m, 0);
  std::optional<Error> reduce_error;
  {
    std::vector<std::thread> slots;
    for (const auto& [slot, sched] : delivered) {
      slots.emplace_back([&, slot = slot, sched = sched] {
        try {
          std::vector<ClusterId> owned;
          for (auto c : sched.owned_by(slot))
            if (res.dist[c.index()] > 0) owned.push_back(c);
          auto p = plan(owned, res.dist, spec.sort_threshold, slot);
          for (auto& it : p.items)
            for (std::uint32_t i = 0; i < M; ++i)
              if (auto f = buckets[i].find(it.cluster); f != buckets[i].end()) it.copy_bytes += fs::file_size(f->second);
          slot_has_items[slot - 1] = !p.items.empty();

          Fetcher fetch = [&](const PipelineItem& it) {
            std::vector<Record> recs;
            for (std::uint32_t i = 0; i < M; ++i)
              if (auto f = buckets[i].find(it.cluster); f != buckets[i].end()) {
                auto rf = read_record_file(f->second, kBucketMagic);
                if (rf.cluster != it.cluster || rf.owner != i + 1)
                  throw Error(ErrorKind::Io, "bucket header mismatch in " + f->second.string());
                recs.insert(recs.end(), std::make_move_iterator(rf.records.begin()),
                            std::make_move_iterator(rf.records.end()));
              }
            return recs;
          };
          Sorter sorter = [&](std::vector<Record> recs, const PipelineItem&) {
            return sort_cluster(std::move(recs), spec.sort_threshold, spill_dir);
          };
          Reducer reducer = [&](ClusterId c, std::vector<Record> sorted) {
            auto out = detail::reduce_sorted(spec.reduce_fn, std::move(sorted));
            write_record_file(output_path(res.output_dir, c), kOutputMagic, slot, c, out);
            return out;
          };
          slot_start[slot - 1] = TraceLog::now();
          auto er = execute(std::move(p), fetch, sorter, reducer, trace, {spec.pipeline_mode});
          slot_end[slot - 1] = TraceLog::now();
          slot_outputs[slot - 1] = std::move(er.outputs);
        } catch (const std::exception& e) {
          std::lock_guard lk(err_mu);
          if (!reduce_error) reduce_error = Error(ErrorKind::JobFailure, std::string("reduce slot ") + std::to_string(slot) + ": " + e.what());
        }
      });
    }
    for (auto& t : slots) t.join();
  }
  if (reduce_error) throw *reduce_error;

  for (auto& so : slot_outputs)
    for (auto& o : so) res.outputs.push_back(std::move(o));
  std::sort(res.outputs.begin(), res.outputs.end(),
            [](const ClusterOutput& a, const ClusterOutput& b) { return a.cluster < b.cluster; });
  res.trace = trace.events();

  // Metrics.
  auto& mb = res.metrics;
  mb.scheduler = to_string(cfg.scheduler_kind);
  mb.map_tasks = M;
  mb.clusters = n;
  mb.effective_clusters = effective_n(res.dist);
  mb.total_pairs = res.dist.total();
  mb.slot_loads = slot_loads(res.dist, res.schedule.schedule).loads;
  mb.max_load = res.schedule.max_load;
  mb.ideal_load = res.schedule.ideal.to_double();
  mb.ratio = res.schedule.ratio;
  mb.slot_load_rel_stddev = spread_of(mb.slot_loads).rel_stddev;
  auto ts = net.stats();
  mb.collect_bytes = ts.collect_payload();
  mb.broadcast_bytes = ts.broadcast_payload();
  mb.network_bound = network_cost_estimate(std::max<std::uint32_t>(M, 1), n, spec.trackers, cfg.m).total_upper_bound;
  mb.wire_bytes = ts.total_wire();
  for (const auto& s : res.map_spans) mb.map_seconds.push_back(detail::seconds_between(s.start, s.end));
  mb.scheduler_seconds = std::chrono::duration<double>(res.schedule.solver_time).count();
  for (std::uint32_t s = 1; s <= cfg.m; ++s) {
    mb.reduce_seconds.push_back(detail::seconds_between(slot_start[s - 1], slot_end[s - 1]));
    if (slot_has_items[s - 1]) {
      auto d = measure_delays(res.trace, s);
      res.delays.push_back(d);
      mb.sort_delay_seconds.push_back(static_cast<double>(d.sort_delay) * 1e-6);
      mb.run_delay_seconds.push_back(static_cast<double>(d.run_delay) * 1e-6);
    } else {
      mb.sort_delay_seconds.push_back(0.0);
      mb.run_delay_seconds.push_back(0.0);
    }
  }
  return res;
}

}  // namespace opshard
