#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <unistd.h>

#include "opshard/core.hpp"
#include "opshard/wire.hpp"

namespace opshard {

using Record = std::pair<std::string, std::string>;

inline std::uint64_t record_bytes(const Record& r) { return 8 + r.first.size() + r.second.size(); }

enum class ItemState { Pending, Copying, Copied, Sorting, Sorted, Running, Done };

struct PipelineItem {
  ClusterId cluster;
  Count load = 0;
  std::uint64_t copy_bytes = 0;
  ItemState state = ItemState::Pending;

  void advance(ItemState next) {
    if (static_cast<int>(next) != static_cast<int>(state) + 1)
      throw Error(ErrorKind::Consistency, "pipeline item state may only move one step forward");
    state = next;
  }
};

inline constexpr std::uint64_t kDefaultSortThreshold = 64ULL << 20;

struct PipelinePlan {
  std::vector<PipelineItem> items;
  std::uint32_t slot = 1;
  std::uint64_t memory_sort_threshold = kDefaultSortThreshold;
};

/// Owned clusters ordered by load ascending, ties by id.
template <typename Range>
PipelinePlan plan(const Range& owned, const KeyDist& dist, std::uint64_t threshold = kDefaultSortThreshold,
                  std::uint32_t slot = 1) {
  PipelinePlan p;
  p.slot = slot;
  p.memory_sort_threshold = threshold;
  for (ClusterId c : owned) {
    if (c.index() >= dist.n()) throw Error(ErrorKind::InvalidInput, "owned cluster outside distribution");
    p.items.push_back(PipelineItem{c, dist[c.index()], 0, ItemState::Pending});
  }
  std::sort(p.items.begin(), p.items.end(), [](const PipelineItem& a, const PipelineItem& b) {
    return a.load != b.load ? a.load < b.load : a.cluster < b.cluster;
  });
  return p;
}

// ---- trace ----------------------------------------------------------------

enum class Stage { Copy, Sort, Run };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::Copy: return "copy";
    case Stage::Sort: return "sort";
    case Stage::Run: return "run";
  }
  return "?";
}

enum class TraceKind { PhaseEnter, PhaseExit, MapDone };

struct TraceEvent {
  TraceKind kind = TraceKind::PhaseEnter;
  std::uint32_t slot = 0;
  std::uint32_t cluster = 0;
  Stage stage = Stage::Copy;
  std::int64_t t = 0;  // micros

  bool operator==(const TraceEvent&) const = default;
};

inline std::string format_trace_line(const TraceEvent& e) {
  if (e.kind == TraceKind::MapDone) return "event=map_done t=" + std::to_string(e.t);
  return std::string("event=") + (e.kind == TraceKind::PhaseEnter ? "phase_enter" : "phase_exit") +
         " slot=" + std::to_string(e.slot) + " cluster=" + std::to_string(e.cluster) +
         " stage=" + to_string(e.stage) + " t=" + std::to_string(e.t);
}

namespace detail {

template <typename Int>
Int parse_int_field(std::string_view v) {
  Int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw Error(ErrorKind::InvalidInput, "bad trace field value '" + std::string(v) + "'");
  return out;
}

}  // namespace detail

inline TraceEvent parse_trace_line(std::string_view line) {
  TraceEvent e;
  bool have_event = false, have_t = false, have_slot = false, have_cluster = false, have_stage = false;
  while (!line.empty()) {
    auto sp = line.find(' ');
    auto tok = line.substr(0, sp);
    line = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
    if (tok.empty()) continue;
    auto eq = tok.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorKind::InvalidInput, "bad trace token");
    auto k = tok.substr(0, eq), v = tok.substr(eq + 1);
    if (k == "event") {
      if (v == "phase_enter") e.kind = TraceKind::PhaseEnter;
      else if (v == "phase_exit") e.kind = TraceKind::PhaseExit;
      else if (v == "map_done") e.kind = TraceKind::MapDone;
      else throw Error(ErrorKind::InvalidInput, "unknown trace event");
      have_event = true;
    } else if (k == "slot") {
      e.slot = detail::parse_int_field<std::uint32_t>(v);
      have_slot = true;
    } else if (k == "cluster") {
      e.cluster = detail::parse_int_field<std::uint32_t>(v);
      have_cluster = true;
    } else if (k == "stage") {
      if (v == "copy") e.stage = Stage::Copy;
      else if (v == "sort") e.stage = Stage::Sort;
      else if (v == "run") e.stage = Stage::Run;
      else throw Error(ErrorKind::InvalidInput, "unknown trace stage");
      have_stage = true;
    } else if (k == "t") {
      e.t = detail::parse_int_field<std::int64_t>(v);
      have_t = true;
    }
  }
  if (!have_event || !have_t) throw Error(ErrorKind::InvalidInput, "trace line lacks event or t");
  if (e.kind != TraceKind::MapDone && !(have_slot && have_cluster && have_stage))
    throw Error(ErrorKind::InvalidInput, "phase trace line lacks slot, cluster or stage");
  return e;
}

/// Thread-safe event log with a monotonic microsecond clock.
class TraceLog {
 public:
  using Sink = std::function<void(const std::string&)>;

  TraceLog() = default;
  explicit TraceLog(Sink sink) : sink_(std::move(sink)) {}

  static std::int64_t now() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }

  void record(TraceEvent e) {
    std::lock_guard lk(mu_);
    events_.push_back(e);
    if (sink_) sink_(format_trace_line(e));
  }

  void enter(std::uint32_t slot, ClusterId c, Stage s) { record({TraceKind::PhaseEnter, slot, c.value, s, now()}); }
  void exit(std::uint32_t slot, ClusterId c, Stage s) { record({TraceKind::PhaseExit, slot, c.value, s, now()}); }
  std::int64_t map_done() {
    auto t = now();
    record({TraceKind::MapDone, 0, 0, Stage::Copy, t});
    return t;
  }

  std::vector<TraceEvent> events() const {
    std::lock_guard lk(mu_);
    return events_;
  }

  std::vector<std::string> lines() const {
    std::vector<std::string> out;
    for (const auto& e : events()) out.push_back(format_trace_line(e));
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
  Sink sink_;
};

struct DelayReport {
  std::int64_t map_done_at = 0;
  std::int64_t first_sort_at = 0;
  std::int64_t first_run_at = 0;
  std::int64_t sort_delay = 0;
  std::int64_t run_delay = 0;
};

/// Delays of one slot relative to the map_done anchor.
inline DelayReport measure_delays(const std::vector<TraceEvent>& trace, std::uint32_t slot) {
  std::optional<std::int64_t> done, sort, run;
  for (const auto& e : trace) {
    if (e.kind == TraceKind::MapDone) {
      done = done ? std::max(*done, e.t) : e.t;
    } else if (e.kind == TraceKind::PhaseEnter && e.slot == slot) {
      if (e.stage == Stage::Sort) sort = sort ? std::min(*sort, e.t) : e.t;
      if (e.stage == Stage::Run) run = run ? std::min(*run, e.t) : e.t;
    }
  }
  if (!done) throw Error(ErrorKind::IncompleteTrace, "trace has no map_done event");
  if (!sort) throw Error(ErrorKind::IncompleteTrace, "no sort entry for slot " + std::to_string(slot));
  if (!run) throw Error(ErrorKind::IncompleteTrace, "no run entry for slot " + std::to_string(slot));
  DelayReport r{*done, *sort, *run, *sort - *done, *run - *done};
  if (r.sort_delay < 0 || r.run_delay < r.sort_delay)
    throw Error(ErrorKind::IncompleteTrace, "trace events out of order for slot " + std::to_string(slot));
  return r;
}

inline DelayReport measure_delays(const std::vector<std::string>& lines, std::uint32_t slot) {
  std::vector<TraceEvent> ev;
  ev.reserve(lines.size());
  for (const auto& l : lines) ev.push_back(parse_trace_line(l));
  return measure_delays(ev, slot);
}

// ---- sort -----------------------------------------------------------------

namespace detail {

inline bool key_less(const Record& a, const Record& b) { return a.first < b.first; }

inline void write_run(const std::filesystem::path& p, const std::vector<Record>& run) {
  wire::Bytes buf;
  for (const auto& r : run) {
    wire::put_u32(buf, static_cast<std::uint32_t>(r.first.size()));
    wire::put_bytes(buf, r.first);
    wire::put_u32(buf, static_cast<std::uint32_t>(r.second.size()));
    wire::put_bytes(buf, r.second);
  }
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error(ErrorKind::Io, "spill write failed: " + p.string());
}

class RunReader {
 public:
  explicit RunReader(const std::filesystem::path& p) : f_(p, std::ios::binary) {
    if (!f_) throw Error(ErrorKind::Io, "spill open failed: " + p.string());
  }

  std::optional<Record> next() {
    std::uint32_t klen;
    if (!read_u32(klen)) return std::nullopt;
    Record r;
    r.first = read_str(klen);
    std::uint32_t vlen;
    if (!read_u32(vlen)) throw Error(ErrorKind::Io, "truncated spill file");
    r.second = read_str(vlen);
    return r;
  }

 private:
  bool read_u32(std::uint32_t& out) {
    unsigned char b[4];
    f_.read(reinterpret_cast<char*>(b), 4);
    if (f_.gcount() == 0 && f_.eof()) return false;
    if (f_.gcount() != 4) throw Error(ErrorKind::Io, "truncated spill file");
    out = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
    return true;
  }

  std::string read_str(std::uint32_t n) {
    std::string s(n, '\0');
    f_.read(s.data(), n);
    if (static_cast<std::uint32_t>(f_.gcount()) != n) throw Error(ErrorKind::Io, "truncated spill file");
    return s;
  }

  std::ifstream f_;
};

}  // namespace detail

struct SortStats {
  bool external = false;
  std::size_t spill_runs = 0;
};

/// Groups records by key (stable: values keep arrival order within a key).
/// Inputs over `threshold` bytes go through an external merge sort with
/// spill runs of at most `threshold` bytes under `spill_dir`; both paths
/// produce the same sequence.
inline std::vector<Record> sort_cluster(std::vector<Record> records, std::uint64_t threshold,
                                        const std::filesystem::path& spill_dir = std::filesystem::temp_directory_path(),
                                        SortStats* stats = nullptr) {
  std::uint64_t bytes = 0;
  for (const auto& r : records) bytes += record_bytes(r);
  if (bytes <= threshold) {
    std::stable_sort(records.begin(), records.end(), detail::key_less);
    if (stats) *stats = SortStats{false, 0};
    return records;
  }

  namespace fs = std::filesystem;
  static std::atomic<std::uint64_t> seq{0};
  std::error_code ec;
  fs::path dir = spill_dir / ("opshard-spill-" + std::to_string(::getpid()) + "-" + std::to_string(seq++));
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create spill dir " + dir.string() + ": " + ec.message());

  struct Cleanup {
    fs::path d;
    ~Cleanup() {
      std::error_code e;
      fs::remove_all(d, e);
    }
  } cleanup{dir};

  std::vector<fs::path> runs;
  std::vector<Record> chunk;
  std::uint64_t chunk_bytes = 0;
  auto flush = [&] {
    std::stable_sort(chunk.begin(), chunk.end(), detail::key_less);
    runs.push_back(dir / ("run" + std::to_string(runs.size())));
    detail::write_run(runs.back(), chunk);
    chunk.clear();
    chunk_bytes = 0;
  };
  for (auto& r : records) {
    auto b = record_bytes(r);
    if (!chunk.empty() && chunk_bytes + b > threshold) flush();
    chunk_bytes += b;
    chunk.push_back(std::move(r));
  }
  if (!chunk.empty()) flush();
  records.clear();
  records.shrink_to_fit();

  std::vector<detail::RunReader> readers;
  readers.reserve(runs.size());
  for (const auto& p : runs) readers.emplace_back(p);
  // (record, run index); ties go to the earlier run for stability
  using Head = std::pair<Record, std::size_t>;
  auto cmp = [](const Head& a, const Head& b) {
    return a.first.first != b.first.first ? a.first.first > b.first.first : a.second > b.second;
  };
  std::priority_queue<Head, std::vector<Head>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < readers.size(); ++i)
    if (auto r = readers[i].next()) heap.emplace(std::move(*r), i);
  std::vector<Record> out;
  while (!heap.empty()) {
    auto [rec, i] = heap.top();
    heap.pop();
    out.push_back(std::move(rec));
    if (auto r = readers[i].next()) heap.emplace(std::move(*r), i);
  }
  if (stats) *stats = SortStats{true, runs.size()};
  return out;
}

// ---- execution ------------------------------------------------------------

enum class PipelineMode { Sequential, Pipelined };

using Fetcher = std::function<std::vector<Record>(const PipelineItem&)>;
using Sorter = std::function<std::vector<Record>(std::vector<Record>, const PipelineItem&)>;
using Reducer = std::function<std::vector<Record>(ClusterId, std::vector<Record>)>;

struct ClusterOutput {
  ClusterId cluster;
  std::vector<Record> records;

  bool operator==(const ClusterOutput&) const = default;
};

struct ExecResult {
  std::vector<ClusterOutput> outputs;  // plan order
  std::vector<PipelineItem> items;     // final states
};

struct ExecOptions {
  PipelineMode mode = PipelineMode::Pipelined;
  std::uint32_t fetch_attempts = 2;
};

namespace detail {

/// Single-slot blocking handoff buffer.
template <typename T>
class Handoff {
 public:
  bool put(T v) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !slot_ || closed_; });
    if (closed_) return false;
    slot_ = std::move(v);
    cv_.notify_all();
    return true;
  }

  std::optional<T> take() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return slot_ || closed_ || done_; });
    if (closed_ || !slot_) return std::nullopt;
    auto v = std::move(slot_);
    slot_.reset();
    cv_.notify_all();
    return v;
  }

  // no more items after the current one
  void finish() {
    std::lock_guard lk(mu_);
    done_ = true;
    cv_.notify_all();
  }

  // abort: wake everyone, drop contents
  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<T> slot_;
  bool done_ = false;
  bool closed_ = false;
};

struct Failure {
  std::mutex mu;
  std::optional<Error> first;
  std::atomic<bool> failed{false};

  void set(const Error& e) {
    std::lock_guard lk(mu);
    if (!first) first = e;
    failed = true;
  }
};

inline Error slot_failure(std::uint32_t slot, ClusterId c, Stage s, const std::string& why) {
  return Error(ErrorKind::JobFailure, "slot " + std::to_string(slot) + " cluster " + std::to_string(c.value) +
                                          " " + to_string(s) + " failed: " + why);
}

template <typename Fn>
void guarded(Failure& fail, std::uint32_t slot, ClusterId c, Stage s, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    fail.set(slot_failure(slot, c, s, e.what()));
  } catch (const std::exception& e) {
    fail.set(slot_failure(slot, c, s, e.what()));
  } catch (...) {
    fail.set(slot_failure(slot, c, s, "unknown exception"));
  }
}

inline std::vector<Record> fetch_with_retry(const Fetcher& fetch, const PipelineItem& item, std::uint32_t attempts) {
  for (std::uint32_t a = 1;; ++a) {
    try {
      return fetch(item);
    } catch (...) {
      if (a >= attempts) throw;
    }
  }
}

}  // namespace detail

/// Runs a slot's plan through copy, sort and run.
///
/// Pipelined: one executor thread per stage, single-slot handoffs between
/// them, so item i sorts after its own copy and after item i-1 has left the
/// sort stage. Sequential: copy every item, then sort every item, then run
/// every item. Failures carry the slot and cluster id and abort the slot.
inline ExecResult execute(PipelinePlan p, const Fetcher& fetch, const Sorter& sort, const Reducer& reduce,
                          TraceLog& trace, ExecOptions opts = {}) {
  const std::uint32_t slot = p.slot;
  auto& items = p.items;
  const std::size_t n = items.size();
  std::vector<ClusterOutput> outputs(n);
  detail::Failure fail;

  auto do_copy = [&](std::size_t i) {
    items[i].advance(ItemState::Copying);
    trace.enter(slot, items[i].cluster, Stage::Copy);
    auto recs = detail::fetch_with_retry(fetch, items[i], opts.fetch_attempts);
    trace.exit(slot, items[i].cluster, Stage::Copy);
    items[i].advance(ItemState::Copied);
    return recs;
  };
  auto do_sort = [&](std::size_t i, std::vector<Record> recs) {
    items[i].advance(ItemState::Sorting);
    trace.enter(slot, items[i].cluster, Stage::Sort);
    auto sorted = sort(std::move(recs), items[i]);
    trace.exit(slot, items[i].cluster, Stage::Sort);
    items[i].advance(ItemState::Sorted);
    return sorted;
  };
  auto do_run = [&](std::size_t i, std::vector<Record> sorted) {
    items[i].advance(ItemState::Running);
    trace.enter(slot, items[i].cluster, Stage::Run);
    outputs[i] = ClusterOutput{items[i].cluster, reduce(items[i].cluster, std::move(sorted))};
    trace.exit(slot, items[i].cluster, Stage::Run);
    items[i].advance(ItemState::Done);
  };

  if (opts.mode == PipelineMode::Sequential) {
    std::vector<std::vector<Record>> buf(n);
    auto stage_all = [&](Stage s, auto&& body) {
      for (std::size_t i = 0; i < n && !fail.failed; ++i) detail::guarded(fail, slot, items[i].cluster, s, [&] { body(i); });
    };
    stage_all(Stage::Copy, [&](std::size_t i) { buf[i] = do_copy(i); });
    stage_all(Stage::Sort, [&](std::size_t i) { buf[i] = do_sort(i, std::move(buf[i])); });
    stage_all(Stage::Run, [&](std::size_t i) { do_run(i, std::move(buf[i])); });
  } else {
    using Packet = std::pair<std::size_t, std::vector<Record>>;
    detail::Handoff<Packet> to_sort, to_run;
    auto abort_all = [&] {
      to_sort.close();
      to_run.close();
    };

    std::thread copier([&] {
      for (std::size_t i = 0; i < n && !fail.failed; ++i) {
        std::vector<Record> recs;
        detail::guarded(fail, slot, items[i].cluster, Stage::Copy, [&] { recs = do_copy(i); });
        if (fail.failed || !to_sort.put({i, std::move(recs)})) break;
      }
      if (fail.failed) abort_all();
      to_sort.finish();
    });
    std::thread sorter([&] {
      while (auto pk = to_sort.take()) {
        std::vector<Record> sorted;
        detail::guarded(fail, slot, items[pk->first].cluster, Stage::Sort,
                        [&] { sorted = do_sort(pk->first, std::move(pk->second)); });
        if (fail.failed || !to_run.put({pk->first, std::move(sorted)})) break;
      }
      if (fail.failed) abort_all();
      to_run.finish();
    });
    std::thread runner([&] {
      while (auto pk = to_run.take()) {
        detail::guarded(fail, slot, items[pk->first].cluster, Stage::Run,
                        [&] { do_run(pk->first, std::move(pk->second)); });
        if (fail.failed) break;
      }
      if (fail.failed) abort_all();
    });
    copier.join();
    sorter.join();
    runner.join();
  }

  if (fail.first) throw *fail.first;
  return ExecResult{std::move(outputs), std::move(items)};
}

// ---- stage-time algebra ---------------------------------------------------

struct StageTimes {
  double copy = 0.0;
  double sort = 0.0;
  double run = 0.0;
};

struct StageSpan {
  double copy_start = 0, copy_end = 0, sort_start = 0, sort_end = 0, run_start = 0, run_end = 0;
};

/// Timeline of a slot with fixed stage durations, starting at t=0.
///
/// Pipelined follows the single-slot handoff discipline: an item leaves a
/// stage only once the buffer to the next stage is free, and the buffer
/// frees when the next stage picks its previous item up.
inline std::vector<StageSpan> pipeline_timeline(const std::vector<StageTimes>& items, PipelineMode mode) {
  std::vector<StageSpan> out(items.size());
  if (mode == PipelineMode::Sequential) {
    double t = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i].copy_start = t;
      t += items[i].copy;
      out[i].copy_end = t;
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i].sort_start = t;
      t += items[i].sort;
      out[i].sort_end = t;
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i].run_start = t;
      t += items[i].run;
      out[i].run_end = t;
    }
    return out;
  }
  double prev_handoff1 = 0, prev_handoff2 = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& s = out[i];
    s.copy_start = prev_handoff1;
    s.copy_end = s.copy_start + items[i].copy;
    double handoff1 = i ? std::max(s.copy_end, out[i - 1].sort_start) : s.copy_end;
    s.sort_start = i ? std::max(handoff1, prev_handoff2) : handoff1;
    s.sort_end = s.sort_start + items[i].sort;
    double handoff2 = i ? std::max(s.sort_end, out[i - 1].run_start) : s.sort_end;
    s.run_start = i ? std::max(handoff2, out[i - 1].run_end) : handoff2;
    s.run_end = s.run_start + items[i].run;
    prev_handoff1 = handoff1;
    prev_handoff2 = handoff2;
  }
  return out;
}

inline double pipeline_makespan(const std::vector<StageTimes>& items, PipelineMode mode) {
  auto tl = pipeline_timeline(items, mode);
  double end = 0;
  for (const auto& s : tl) end = std::max(end, s.run_end);
  return end;
}

}  // namespace opshard
