#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "opshard/core.hpp"
#include "opshard/pipeline.hpp"

namespace opshard::sim {

// ---- fluid processor-sharing event engine -----------------------------------

struct Step {
  enum Kind { Compute, Transfer } kind = Compute;
  double amount = 0.0;  // seconds for Compute, bytes for Transfer
  std::size_t resource = 0;
};

struct ResourceUsage {
  std::string name;
  double capacity = 0.0;   // bytes/s
  double requested = 0.0;  // bytes of all flows started
  double moved = 0.0;      // integral of allocated rate over time
};

/// Single-threaded event loop. Concurrent flows on one resource split its
/// capacity equally; compute steps take fixed time. Events due at the same
/// instant fire in creation order.
class EventEngine {
 public:
  using Callback = std::function<void()>;

  std::size_t add_resource(std::string name, double capacity) {
    if (!(capacity > 0.0)) throw Error(ErrorKind::InvalidInput, "resource capacity must be > 0: " + name);
    resources_.push_back(ResourceUsage{std::move(name), capacity, 0.0, 0.0});
    return resources_.size() - 1;
  }

  double now() const { return now_; }
  const std::vector<ResourceUsage>& resources() const { return resources_; }

  void after(double dt, Callback cb) { timers_.push(Timer{now_ + std::max(0.0, dt), seq_++, std::move(cb)}); }

  void transfer(std::size_t res, double bytes, Callback cb) {
    if (bytes <= 0.0) {
      after(0.0, std::move(cb));
      return;
    }
    resources_.at(res).requested += bytes;
    flows_.push_back(Flow{res, bytes, bytes, seq_++, std::move(cb)});
  }

  /// Runs the steps in order, then `done`.
  void run_steps(std::shared_ptr<const std::vector<Step>> steps, Callback done, std::size_t i = 0) {
    if (i == steps->size()) {
      after(0.0, std::move(done));
      return;
    }
    const Step& s = (*steps)[i];
    auto next = [this, steps, done = std::move(done), i]() mutable { run_steps(steps, std::move(done), i + 1); };
    if (s.kind == Step::Compute) after(s.amount, std::move(next));
    else transfer(s.resource, s.amount, std::move(next));
  }

  /// Hook invoked after every batch of simultaneous events.
  void on_batch(Callback cb) { on_batch_ = std::move(cb); }

  void run() {
    while (!flows_.empty() || !timers_.empty()) {
      std::vector<std::size_t> active(resources_.size(), 0);
      for (const auto& f : flows_) ++active[f.res];
      double dt = std::numeric_limits<double>::infinity();
      for (const auto& f : flows_) dt = std::min(dt, f.remaining * active[f.res] / resources_[f.res].capacity);
      if (!timers_.empty()) dt = std::min(dt, timers_.top().t - now_);
      dt = std::max(dt, 0.0);

      struct Due {
        std::uint64_t seq;
        Callback cb;
      };
      std::vector<Due> due;
      std::vector<Flow> still;
      for (auto& f : flows_) {
        double rate = resources_[f.res].capacity / static_cast<double>(active[f.res]);
        double step = std::min(f.remaining, rate * dt);
        f.remaining -= step;
        resources_[f.res].moved += step;
        if (f.remaining <= 1e-9 * f.initial + 1e-6) {
          resources_[f.res].moved += f.remaining;
          due.push_back(Due{f.seq, std::move(f.cb)});
        } else {
          still.push_back(std::move(f));
        }
      }
      flows_ = std::move(still);
      now_ += dt;
      while (!timers_.empty() && timers_.top().t <= now_) {
        auto& t = const_cast<Timer&>(timers_.top());
        due.push_back(Due{t.seq, std::move(t.cb)});
        timers_.pop();
      }
      std::sort(due.begin(), due.end(), [](const Due& a, const Due& b) { return a.seq < b.seq; });
      for (auto& d : due) d.cb();
      if (on_batch_) on_batch_();
    }
  }

 private:
  struct Flow {
    std::size_t res;
    double remaining;
    double initial;
    std::uint64_t seq;
    Callback cb;
  };
  struct Timer {
    double t;
    std::uint64_t seq;
    Callback cb;
    bool operator>(const Timer& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::vector<ResourceUsage> resources_;
  std::vector<Flow> flows_;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
  Callback on_batch_;
};

// ---- slot pipeline on the event engine --------------------------------------

struct SimItem {
  std::uint32_t cluster = 0;
  Count load = 0;
  double bytes = 0.0;
  std::shared_ptr<const std::vector<Step>> stages[3];
};

struct StageRecord {
  std::uint32_t slot = 0;
  std::uint32_t cluster = 0;
  Stage stage = Stage::Copy;
  double start = 0.0;
  double end = 0.0;
};

/// Copy/sort/run executor of one slot. Pipelined mode uses single-slot
/// buffers between stages (an item that finished a stage waits there until
/// the buffer ahead is free); sequential mode copies everything, then sorts
/// everything, then runs everything.
class SlotPipeline {
 public:
  using StageHook = std::function<void(const SimItem&, Stage)>;

  SlotPipeline(EventEngine& ev, std::uint32_t slot, std::vector<SimItem> items, PipelineMode mode,
               std::vector<StageRecord>& records, StageHook on_stage_end, std::function<void()> on_done)
      : ev_(ev), slot_(slot), items_(std::move(items)), mode_(mode), records_(records),
        on_stage_end_(std::move(on_stage_end)), on_done_(std::move(on_done)) {}

  void start() {
    started_ = true;
    if (items_.empty()) {
      finish();
      return;
    }
    if (mode_ == PipelineMode::Sequential) seq_next(Stage::Copy, 0);
    else advance();
  }

  bool done() const { return finished_; }

 private:
  static constexpr int kNone = -1;

  void begin(std::size_t i, Stage s, std::function<void()> after) {
    auto rec = records_.size();
    records_.push_back(StageRecord{slot_, items_[i].cluster, s, ev_.now(), ev_.now()});
    ev_.run_steps(items_[i].stages[static_cast<int>(s)], [this, i, s, rec, after = std::move(after)] {
      records_[rec].end = ev_.now();
      if (on_stage_end_) on_stage_end_(items_[i], s);
      after();
    });
  }

  void seq_next(Stage s, std::size_t i) {
    if (i == items_.size()) {
      if (s == Stage::Run) finish();
      else seq_next(static_cast<Stage>(static_cast<int>(s) + 1), 0);
      return;
    }
    begin(i, s, [this, s, i] { seq_next(s, i + 1); });
  }

  void advance() {
    for (bool changed = true; changed;) {
      changed = false;
      if (run_ == kNone && buf2_ != kNone) {
        run_ = buf2_;
        buf2_ = kNone;
        begin(run_, Stage::Run, [this] {
          run_ = kNone;
          if (++completed_ == items_.size()) finish();
          else advance();
        });
        changed = true;
      }
      if (sort_held_ != kNone && buf2_ == kNone) {
        buf2_ = sort_held_;
        sort_held_ = kNone;
        sort_ = kNone;
        changed = true;
      }
      if (sort_ == kNone && buf1_ != kNone) {
        sort_ = buf1_;
        buf1_ = kNone;
        begin(sort_, Stage::Sort, [this] {
          sort_held_ = sort_;
          advance();
        });
        changed = true;
      }
      if (copy_held_ != kNone && buf1_ == kNone) {
        buf1_ = copy_held_;
        copy_held_ = kNone;
        copy_ = kNone;
        changed = true;
      }
      if (copy_ == kNone && next_ < items_.size()) {
        copy_ = static_cast<int>(next_++);
        begin(copy_, Stage::Copy, [this] {
          copy_held_ = copy_;
          advance();
        });
        changed = true;
      }
    }
  }

  void finish() {
    finished_ = true;
    if (on_done_) on_done_();
  }

  EventEngine& ev_;
  std::uint32_t slot_;
  std::vector<SimItem> items_;
  PipelineMode mode_;
  std::vector<StageRecord>& records_;
  StageHook on_stage_end_;
  std::function<void()> on_done_;
  bool started_ = false, finished_ = false;
  std::size_t next_ = 0, completed_ = 0;
  int copy_ = kNone, copy_held_ = kNone, buf1_ = kNone, sort_ = kNone, sort_held_ = kNone, buf2_ = kNone,
      run_ = kNone;
};

/// One slot with fixed stage durations, driven through the event engine.
inline std::vector<StageRecord> simulate_stage_times(const std::vector<StageTimes>& times, PipelineMode mode) {
  EventEngine ev;
  std::vector<SimItem> items;
  for (std::size_t i = 0; i < times.size(); ++i) {
    SimItem it;
    it.cluster = static_cast<std::uint32_t>(i + 1);
    double d[3] = {times[i].copy, times[i].sort, times[i].run};
    for (int s = 0; s < 3; ++s)
      it.stages[s] = std::make_shared<const std::vector<Step>>(std::vector<Step>{{Step::Compute, d[s], 0}});
    items.push_back(std::move(it));
  }
  std::vector<StageRecord> records;
  SlotPipeline slot(ev, 1, std::move(items), mode, records, nullptr, nullptr);
  slot.start();
  ev.run();
  return records;
}

inline double stage_makespan(const std::vector<StageRecord>& records) {
  double end = 0.0;
  for (const auto& r : records) end = std::max(end, r.end);
  return end;
}

// ---- cluster simulation -------------------------------------------------------

enum class OverlapMode { HadoopOverlap, OS4MDeferred };

inline const char* to_string(OverlapMode m) { return m == OverlapMode::HadoopOverlap ? "hadoop" : "os4m"; }

inline constexpr double kMB = 1e6;

struct SimConfig {
  std::uint32_t nodes = 4;
  std::uint32_t map_slots_per_node = 4;
  std::uint32_t reduce_slots_per_node = 2;
  double net_bw = 37.0;  // MB/s
  double disk_read_bw = 203.0;
  double disk_write_bw = 121.0;

  std::uint32_t waves = 3;
  std::optional<std::uint32_t> map_tasks;  // overrides waves * map slots
  double map_task_work = 5.0;              // seconds of compute
  double map_input_bytes = 128 * kMB;
  double map_output_bytes = 128 * kMB;

  OverlapMode overlap_mode = OverlapMode::OS4MDeferred;
  PipelineMode pipeline_mode = PipelineMode::Pipelined;
  KeyDist dist;
  Schedule schedule;

  double sort_threshold = 64.0 * 1024 * 1024;  // bytes sorted in memory
  double sort_cpu_bw = 400.0;                  // MB/s, in-memory sort
  std::uint32_t merge_factor = 10;
  std::uint32_t parallel_copies = 5;
  double run_seconds_per_pair = 1e-6;
  double per_item_overhead = 0.1;  // seconds per Reduce operation cluster
  double fetch_latency = 0.01;     // seconds per bucket file fetched

  std::uint32_t total_map_slots() const { return nodes * map_slots_per_node; }
  std::uint32_t map_task_count() const { return map_tasks ? *map_tasks : waves * total_map_slots(); }
  std::uint32_t reduce_slots() const { return dist.n() ? schedule.m() : nodes * reduce_slots_per_node; }

  void validate() const {
    if (nodes < 1 || map_slots_per_node < 1 || reduce_slots_per_node < 1)
      throw Error(ErrorKind::InvalidInput, "node and slot counts must be >= 1");
    if (!(net_bw > 0 && disk_read_bw > 0 && disk_write_bw > 0))
      throw Error(ErrorKind::InvalidInput, "bandwidths must be > 0");
    if (waves < 1 && !map_tasks) throw Error(ErrorKind::InvalidInput, "waves must be >= 1");
    if (map_task_work < 0 || map_input_bytes < 0 || map_output_bytes < 0)
      throw Error(ErrorKind::InvalidInput, "map work and byte sizes must be >= 0");
    if (fetch_latency < 0 || per_item_overhead < 0 || run_seconds_per_pair < 0)
      throw Error(ErrorKind::InvalidInput, "latencies and per-item costs must be >= 0");
    if (!(sort_threshold > 0) || !(sort_cpu_bw > 0) || merge_factor < 2 || parallel_copies < 1)
      throw Error(ErrorKind::InvalidInput, "bad sort or shuffle parameters");
    if (dist.n() && dist.n() != schedule.n())
      throw Error(ErrorKind::InvalidInput, "schedule does not cover the distribution");
    if (dist.n() && schedule.m() > nodes * reduce_slots_per_node)
      throw Error(ErrorKind::InvalidInput, "schedule uses more slots than the cluster has");
  }
};

struct ProgressSample {
  double t = 0.0;
  double map_fraction = 0.0;
  double reduce_fraction = 0.0;
  std::string event;
};

struct MapTaskRecord {
  std::uint32_t task = 0;
  std::uint32_t wave = 0;
  std::uint32_t node = 0;
  double start = 0.0;
  double end = 0.0;
};

struct SlotDelay {
  std::uint32_t slot = 0;
  double sort_delay = 0.0;
  double run_delay = 0.0;
};

struct SimTrace {
  std::vector<ProgressSample> progress;
  std::vector<MapTaskRecord> map_tasks;
  std::vector<double> wave_durations;
  std::vector<StageRecord> stages;  // per-slot reduce timelines
  std::vector<SlotDelay> delays;
  std::vector<double> slot_busy;    // first reduce activity to last, per slot
  std::vector<ResourceUsage> resources;
  double map_phase_end = 0.0;
  double reduce_start = 0.0;
  double reduce_end = 0.0;
  double job_end = 0.0;
  double first_copy_start = -1.0;

  double total_reduce_time() const {
    double s = 0;
    for (double b : slot_busy) s += b;
    return s;
  }
};

namespace detail {

class Simulation {
 public:
  explicit Simulation(const SimConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (std::uint32_t n = 0; n < cfg_.nodes; ++n) {
      net_.push_back(ev_.add_resource("net" + std::to_string(n + 1), cfg_.net_bw * kMB));
      dr_.push_back(ev_.add_resource("disk_read" + std::to_string(n + 1), cfg_.disk_read_bw * kMB));
      dw_.push_back(ev_.add_resource("disk_write" + std::to_string(n + 1), cfg_.disk_write_bw * kMB));
    }
    M_ = cfg_.map_task_count();
    R_ = cfg_.reduce_slots();
    total_load_ = cfg_.dist.n() ? cfg_.dist.total() : 0;
    slot_load_.assign(R_, 0);
    slot_clusters_.assign(R_, {});
    if (cfg_.dist.n()) {
      for (std::size_t j = 0; j < cfg_.dist.n(); ++j) {
        auto s = cfg_.schedule.slot_of(j) - 1;
        slot_load_[s] += cfg_.dist[j];
        if (cfg_.dist[j] > 0) slot_clusters_[s].push_back(static_cast<std::uint32_t>(j + 1));
      }
    }
    shuffle_total_ = cfg_.map_output_bytes * M_;
    trace_.slot_busy.assign(R_, 0.0);
    slot_first_.assign(R_, -1.0);
    slot_last_.assign(R_, 0.0);
  }

  SimTrace run() {
    ev_.on_batch([this] { sample(); });
    sample("start");
    map_slots_free_ = cfg_.total_map_slots();
    trace_.map_tasks.resize(M_);
    if (cfg_.overlap_mode == OverlapMode::HadoopOverlap) start_hadoop_reducers();
    dispatch_maps();
    if (M_ == 0) after_maps();
    ev_.run();
    finalize();
    return std::move(trace_);
  }

 private:
  std::uint32_t node_of_map_slot(std::uint32_t s) const { return s % cfg_.nodes; }
  std::uint32_t node_of_reduce_slot(std::uint32_t s) const { return s % cfg_.nodes; }

  double cluster_bytes(Count load) const {
    return total_load_ ? shuffle_total_ * static_cast<double>(load) / static_cast<double>(total_load_) : 0.0;
  }

  // -- map side --

  void dispatch_maps() {
    while (next_map_ < M_ && !free_slots_empty()) {
      std::uint32_t slot = take_map_slot();
      std::uint32_t i = next_map_++;
      std::uint32_t node = node_of_map_slot(slot);
      auto& rec = trace_.map_tasks[i];
      rec = MapTaskRecord{i + 1, i / cfg_.total_map_slots() + 1, node + 1, ev_.now(), 0.0};
      auto steps = std::make_shared<const std::vector<Step>>(std::vector<Step>{
          {Step::Transfer, cfg_.map_input_bytes, dr_[node]},
          {Step::Compute, cfg_.map_task_work, 0},
          {Step::Transfer, cfg_.map_output_bytes, dw_[node]},
      });
      ev_.run_steps(steps, [this, i, slot, node] {
        trace_.map_tasks[i].end = ev_.now();
        ++maps_done_;
        last_event_ = "map_end";
        release_map_slot(slot);
        if (cfg_.overlap_mode == OverlapMode::HadoopOverlap) on_map_output(node);
        if (maps_done_ == M_) after_maps();
        dispatch_maps();
      });
    }
  }

  bool free_slots_empty() const { return map_slots_free_ == 0; }

  std::uint32_t take_map_slot() {
    // lowest free slot id
    if (map_slot_busy_.empty()) map_slot_busy_.assign(cfg_.total_map_slots(), false);
    for (std::uint32_t s = 0; s < map_slot_busy_.size(); ++s)
      if (!map_slot_busy_[s]) {
        map_slot_busy_[s] = true;
        --map_slots_free_;
        return s;
      }
    throw Error(ErrorKind::Consistency, "no free map slot");
  }

  void release_map_slot(std::uint32_t s) {
    map_slot_busy_[s] = false;
    ++map_slots_free_;
  }

  void after_maps() {
    trace_.map_phase_end = ev_.now();
    if (cfg_.overlap_mode == OverlapMode::OS4MDeferred) start_deferred_reducers();
    else for (std::uint32_t s = 0; s < R_; ++s) maybe_finish_shuffle(s);
  }

  // -- deferred (per-cluster pipelines after the barrier) --

  std::vector<SimItem> items_for_slot(std::uint32_t s) const {
    std::vector<std::uint32_t> ids = slot_clusters_[s];
    std::sort(ids.begin(), ids.end(), [&](std::uint32_t a, std::uint32_t b) {
      Count la = cfg_.dist[a - 1], lb = cfg_.dist[b - 1];
      return la != lb ? la < lb : a < b;
    });
    std::uint32_t node = node_of_reduce_slot(s);
    std::vector<SimItem> items;
    for (auto c : ids) {
      SimItem it;
      it.cluster = c;
      it.load = cfg_.dist[c - 1];
      it.bytes = cluster_bytes(it.load);
      // one bucket file per Map task
      it.stages[0] = std::make_shared<const std::vector<Step>>(std::vector<Step>{
          {Step::Compute, cfg_.fetch_latency * M_, 0}, {Step::Transfer, it.bytes, net_[node]}});
      it.stages[1] = std::make_shared<const std::vector<Step>>(sort_steps(it.bytes, node));
      it.stages[2] = std::make_shared<const std::vector<Step>>(std::vector<Step>{
          {Step::Compute, cfg_.per_item_overhead + static_cast<double>(it.load) * cfg_.run_seconds_per_pair, 0}});
      items.push_back(std::move(it));
    }
    return items;
  }

  /// In-memory sort below the threshold; otherwise spill sorted runs and
  /// merge them with fan-in merge_factor, the last pass streaming to run.
  std::vector<Step> sort_steps(double bytes, std::uint32_t node) const {
    std::vector<Step> st{{Step::Compute, bytes / (cfg_.sort_cpu_bw * kMB), 0}};
    if (bytes <= cfg_.sort_threshold) return st;
    double runs = std::ceil(bytes / cfg_.sort_threshold);
    auto passes = static_cast<std::uint32_t>(
        std::max(1.0, std::ceil(std::log(runs) / std::log(static_cast<double>(cfg_.merge_factor)) - 1e-12)));
    st.push_back({Step::Transfer, bytes, dw_[node]});
    for (std::uint32_t p = 1; p <= passes; ++p) {
      st.push_back({Step::Transfer, bytes, dr_[node]});
      if (p < passes) st.push_back({Step::Transfer, bytes, dw_[node]});
    }
    return st;
  }

  void start_deferred_reducers() {
    trace_.reduce_start = ev_.now();
    for (std::uint32_t s = 0; s < R_; ++s) {
      pipelines_.push_back(std::make_unique<SlotPipeline>(
          ev_, s + 1, items_for_slot(s), cfg_.pipeline_mode, trace_.stages,
          [this](const SimItem& it, Stage st) { on_item_stage(it, st); }, nullptr));
    }
    for (auto& p : pipelines_) p->start();
  }

  void on_item_stage(const SimItem& it, Stage st) {
    Count& acc = st == Stage::Copy ? copied_load_ : st == Stage::Sort ? sorted_load_ : run_load_;
    acc += it.load;
    last_event_ = std::string(to_string(st)) + "_end";
  }

  // -- Hadoop-style overlapped shuffle --

  struct Reducer {
    std::deque<std::pair<double, Count>> pending;  // (bytes, load share)
    std::uint32_t active = 0;
    std::vector<double> on_disk;
    bool merging = false;
    bool reducing = false;
    std::uint32_t segments_copied = 0;
  };

  void start_hadoop_reducers() {
    reducers_.assign(R_, Reducer{});
    trace_.reduce_start = 0.0;
  }

  void on_map_output(std::uint32_t src_node) {
    for (std::uint32_t s = 0; s < R_; ++s) {
      double share = total_load_ ? static_cast<double>(slot_load_[s]) / static_cast<double>(total_load_) : 0.0;
      // load credit per segment: slot load spread over M map outputs
      Count credit = M_ ? slot_load_[s] / M_ + (maps_done_ <= slot_load_[s] % M_ ? 1 : 0) : 0;
      reducers_[s].pending.emplace_back(cfg_.map_output_bytes * share, credit);
      pump_copies(s, src_node);
    }
  }

  void pump_copies(std::uint32_t s, std::uint32_t src_node) {
    auto& r = reducers_[s];
    std::uint32_t dst = node_of_reduce_slot(s);
    while (r.active < cfg_.parallel_copies && !r.pending.empty()) {
      auto [bytes, credit] = r.pending.front();
      r.pending.pop_front();
      ++r.active;
      if (trace_.first_copy_start < 0 && bytes > 0) trace_.first_copy_start = ev_.now();
      touch_slot(s);
      auto steps = std::make_shared<const std::vector<Step>>(std::vector<Step>{
          {Step::Transfer, bytes, dr_[src_node]},
          {Step::Transfer, bytes, net_[dst]},
          {Step::Transfer, bytes, dw_[dst]},
      });
      ev_.run_steps(steps, [this, s, bytes, credit = credit, src_node] {
        auto& rr = reducers_[s];
        --rr.active;
        ++rr.segments_copied;
        copied_load_ += credit;
        last_event_ = "copy_end";
        touch_slot(s);
        if (bytes > 0) rr.on_disk.push_back(bytes);
        maybe_merge(s);
        pump_copies(s, src_node);
        maybe_finish_shuffle(s);
      });
    }
  }

  void maybe_merge(std::uint32_t s) {
    auto& r = reducers_[s];
    if (r.merging || r.on_disk.size() < cfg_.merge_factor) return;
    double bytes = 0;
    for (double b : r.on_disk) bytes += b;
    r.on_disk.clear();
    r.merging = true;
    std::uint32_t node = node_of_reduce_slot(s);
    auto steps = std::make_shared<const std::vector<Step>>(std::vector<Step>{
        {Step::Transfer, bytes, dr_[node]},
        {Step::Transfer, bytes, dw_[node]},
    });
    ev_.run_steps(steps, [this, s, bytes] {
      auto& rr = reducers_[s];
      rr.merging = false;
      rr.on_disk.push_back(bytes);
      last_event_ = "merge_end";
      touch_slot(s);
      maybe_merge(s);
      maybe_finish_shuffle(s);
    });
  }

  void maybe_finish_shuffle(std::uint32_t s) {
    auto& r = reducers_[s];
    if (r.reducing || maps_done_ < M_ || r.active || !r.pending.empty() || r.merging) return;
    r.reducing = true;
    double bytes = 0;
    for (double b : r.on_disk) bytes += b;
    std::uint32_t node = node_of_reduce_slot(s);
    SimItem whole;
    whole.cluster = 0;
    whole.load = slot_load_[s];
    whole.bytes = bytes;
    whole.stages[0] = std::make_shared<const std::vector<Step>>();
    whole.stages[1] = std::make_shared<const std::vector<Step>>(std::vector<Step>{{Step::Transfer, bytes, dr_[node]}});
    whole.stages[2] = std::make_shared<const std::vector<Step>>(std::vector<Step>{
        {Step::Compute,
         cfg_.per_item_overhead * static_cast<double>(slot_clusters_[s].size()) +
             static_cast<double>(whole.load) * cfg_.run_seconds_per_pair,
         0}});
    std::vector<SimItem> items;
    if (whole.load > 0) items.push_back(std::move(whole));
    pipelines_.push_back(std::make_unique<SlotPipeline>(
        ev_, s + 1, std::move(items), PipelineMode::Sequential, trace_.stages,
        [this](const SimItem& it, Stage st) {
          if (st != Stage::Copy) on_item_stage(it, st);
        },
        nullptr));
    pipelines_.back()->start();
  }

  void touch_slot(std::uint32_t s) {
    if (slot_first_[s] < 0) slot_first_[s] = ev_.now();
    slot_last_[s] = ev_.now();
  }

  // -- bookkeeping --

  void sample(const std::string& label = {}) {
    double mf = M_ ? static_cast<double>(maps_done_) / M_ : 1.0;
    double rf;
    if (total_load_)
      rf = (static_cast<double>(std::min(copied_load_, total_load_)) + static_cast<double>(sorted_load_) +
            static_cast<double>(run_load_)) /
           (3.0 * static_cast<double>(total_load_));
    else
      rf = ev_.now() > 0 && maps_done_ == M_ ? 1.0 : 0.0;
    rf = std::min(rf, 1.0);
    if (!trace_.progress.empty()) {
      const auto& last = trace_.progress.back();
      mf = std::max(mf, last.map_fraction);
      rf = std::max(rf, last.reduce_fraction);
      if (mf == last.map_fraction && rf == last.reduce_fraction) return;
    }
    trace_.progress.push_back(ProgressSample{ev_.now(), mf, rf, label.empty() ? last_event_ : label});
  }

  void finalize() {
    trace_.job_end = ev_.now();
    trace_.resources = ev_.resources();
    const auto S = cfg_.total_map_slots();
    for (std::uint32_t w = 0; w * S < M_; ++w) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0;
      for (std::uint32_t i = w * S; i < std::min(M_, (w + 1) * S); ++i) {
        lo = std::min(lo, trace_.map_tasks[i].start);
        hi = std::max(hi, trace_.map_tasks[i].end);
      }
      trace_.wave_durations.push_back(hi - lo);
    }
    double reduce_end = trace_.map_phase_end;
    for (const auto& r : trace_.stages) {
      auto s = r.slot - 1;
      if (slot_first_[s] < 0 || r.start < slot_first_[s]) slot_first_[s] = r.start;
      slot_last_[s] = std::max(slot_last_[s], r.end);
      reduce_end = std::max(reduce_end, r.end);
    }
    trace_.reduce_end = reduce_end;
    for (std::uint32_t s = 0; s < R_; ++s) {
      trace_.slot_busy[s] = slot_first_[s] < 0 ? 0.0 : slot_last_[s] - slot_first_[s];
      std::optional<double> first_sort, first_run;
      for (const auto& r : trace_.stages) {
        if (r.slot != s + 1) continue;
        if (r.stage == Stage::Sort && !first_sort) first_sort = r.start;
        if (r.stage == Stage::Run && !first_run) first_run = r.start;
      }
      if (first_sort && first_run)
        trace_.delays.push_back(
            SlotDelay{s + 1, *first_sort - trace_.map_phase_end, *first_run - trace_.map_phase_end});
    }
    if (trace_.progress.empty() || trace_.progress.back().reduce_fraction < 1.0 ||
        trace_.progress.back().map_fraction < 1.0)
      trace_.progress.push_back(ProgressSample{trace_.job_end, 1.0, 1.0, "job_end"});
  }

  SimConfig cfg_;
  EventEngine ev_;
  std::vector<std::size_t> net_, dr_, dw_;
  std::uint32_t M_ = 0, R_ = 0;
  Count total_load_ = 0;
  double shuffle_total_ = 0.0;
  std::vector<Count> slot_load_;
  std::vector<std::vector<std::uint32_t>> slot_clusters_;

  std::uint32_t next_map_ = 0, maps_done_ = 0, map_slots_free_ = 0;
  std::vector<bool> map_slot_busy_;
  std::vector<Reducer> reducers_;
  std::vector<std::unique_ptr<SlotPipeline>> pipelines_;
  std::vector<double> slot_first_, slot_last_;
  Count copied_load_ = 0, sorted_load_ = 0, run_load_ = 0;
  std::string last_event_ = "start";
  SimTrace trace_;
};

}  // namespace detail

inline SimTrace simulate(const SimConfig& cfg) { return detail::Simulation(cfg).run(); }

struct ModeSummary {
  OverlapMode mode = OverlapMode::OS4MDeferred;
  std::vector<double> wave_durations;
  double map_phase_time = 0.0;
  double reduce_start = 0.0;
  double reduce_end = 0.0;
  double job_time = 0.0;
};

struct CompareReport {
  ModeSummary hadoop;
  ModeSummary os4m;
  SimTrace hadoop_trace;
  SimTrace os4m_trace;
};

inline ModeSummary summarize(OverlapMode mode, const SimTrace& t) {
  return ModeSummary{mode, t.wave_durations, t.map_phase_end, t.reduce_start, t.reduce_end, t.job_end};
}

/// Same workload under both overlap modes.
inline CompareReport compare_modes(SimConfig cfg) {
  CompareReport r;
  cfg.overlap_mode = OverlapMode::HadoopOverlap;
  r.hadoop_trace = simulate(cfg);
  cfg.overlap_mode = OverlapMode::OS4MDeferred;
  r.os4m_trace = simulate(cfg);
  r.hadoop = summarize(OverlapMode::HadoopOverlap, r.hadoop_trace);
  r.os4m = summarize(OverlapMode::OS4MDeferred, r.os4m_trace);
  return r;
}

}  // namespace opshard::sim
