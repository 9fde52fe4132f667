#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <string_view>
#include <vector>

#include "opshard/cluster.hpp"
#include "opshard/core.hpp"
#include "opshard/wire.hpp"

// Statistics collection and schedule broadcast between Map workers, per-node
// trackers and the master. Transport is in-process; every transmission is
// encoded to its big-endian wire form and byte-counted.
namespace opshard {

/// Per-Map-task key distribution vector K^(i).
struct StatsMessage {
  std::uint32_t map_task_id = 1;
  std::uint32_t attempt_id = 0;
  std::vector<Count> counts;
  bool success = true;

  bool operator==(const StatsMessage&) const = default;
};

// [task_id:4][attempt:4][success:1][n:4][n x count:8]
inline void encode_into(wire::Bytes& out, const StatsMessage& m) {
  wire::put_u32(out, m.map_task_id);
  wire::put_u32(out, m.attempt_id);
  wire::put_u8(out, m.success ? 1 : 0);
  wire::put_u32(out, static_cast<std::uint32_t>(m.counts.size()));
  for (Count c : m.counts) wire::put_u64(out, c);
}

inline wire::Bytes encode(const StatsMessage& m) {
  wire::Bytes out;
  out.reserve(13 + 8 * m.counts.size());
  encode_into(out, m);
  return out;
}

inline StatsMessage decode_stats(wire::Reader& in) {
  StatsMessage m;
  m.map_task_id = in.u32();
  m.attempt_id = in.u32();
  std::uint8_t ok = in.u8();
  if (ok > 1) throw Error(ErrorKind::Protocol, "bad success flag");
  m.success = ok == 1;
  std::uint32_t n = in.u32();
  if (in.remaining() / 8 < n) throw Error(ErrorKind::Protocol, "truncated count vector");
  m.counts.resize(n);
  for (auto& c : m.counts) c = in.u64();
  return m;
}

inline StatsMessage decode_stats(std::span<const std::uint8_t> frame) {
  wire::Reader in(frame);
  auto m = decode_stats(in);
  if (!in.done()) throw Error(ErrorKind::Protocol, "trailing bytes after stats message");
  return m;
}

// [n:4][n x slot:4 signed]
inline wire::Bytes encode(const Schedule& s) {
  wire::Bytes out;
  out.reserve(4 + 4 * s.n());
  wire::put_u32(out, static_cast<std::uint32_t>(s.n()));
  for (auto slot : s.assignment()) wire::put_i32(out, static_cast<std::int32_t>(slot));
  return out;
}

/// Decodes a schedule frame; m is known to every receiver from the job config.
inline Schedule decode_schedule(std::span<const std::uint8_t> frame, std::uint32_t m) {
  wire::Reader in(frame);
  std::uint32_t n = in.u32();
  if (in.remaining() != 4ULL * n) throw Error(ErrorKind::Protocol, "schedule frame length mismatch");
  std::vector<std::uint32_t> s(n);
  for (auto& x : s) {
    std::int32_t v = in.i32();
    if (v < 1) throw Error(ErrorKind::Protocol, "non-positive slot id on the wire");
    x = static_cast<std::uint32_t>(v);
  }
  return Schedule(std::move(s), m);
}

/// Builds the K^(i) vector of one Map operation from its per-key tallies.
/// `tallies` is any range of (key, count) pairs.
template <typename Tallies>
StatsMessage emit_stats(std::uint32_t map_task_id, std::uint32_t attempt_id, const Tallies& tallies,
                        const Clusterer& clusterer, bool success = true) {
  StatsMessage m{map_task_id, attempt_id, std::vector<Count>(clusterer.n_target(), 0), success};
  for (const auto& [key, count] : tallies) {
    auto& slot = m.counts[clusterer(key).index()];
    slot = add_checked(slot, static_cast<Count>(count));
  }
  return m;
}

// ---- byte accounting -------------------------------------------------------

enum class Leg : std::size_t { MapToTracker = 0, TrackerToMaster, MasterToTracker, TrackerToReduce };

struct TransportStats {
  /// Count/schedule vector bytes only (8 per count, 4 per slot id).
  std::array<std::uint64_t, 4> payload{};
  /// Full frames including headers.
  std::array<std::uint64_t, 4> wire{};

  std::uint64_t collect_payload() const { return payload[0] + payload[1]; }
  std::uint64_t broadcast_payload() const { return payload[2] + payload[3]; }
  std::uint64_t total_payload() const { return collect_payload() + broadcast_payload(); }
  std::uint64_t total_wire() const { return wire[0] + wire[1] + wire[2] + wire[3]; }
};

class Transport {
 public:
  void record(Leg leg, std::uint64_t payload_bytes, std::uint64_t wire_bytes) {
    std::lock_guard lock(mu_);
    stats_.payload[static_cast<std::size_t>(leg)] += payload_bytes;
    stats_.wire[static_cast<std::size_t>(leg)] += wire_bytes;
  }

  TransportStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  mutable std::mutex mu_;
  TransportStats stats_;
};

struct NetworkCost {
  std::uint64_t collect_bytes = 0;    // 16 M n, upper bound
  std::uint64_t broadcast_bytes = 0;  // 4 n (t + r)
  std::uint64_t total_upper_bound = 0;
};

/// Analytic network flow of collection plus broadcast: at most 4n(4M + t + r).
inline NetworkCost network_cost_estimate(std::uint64_t M, std::uint64_t n, std::uint64_t t,
                                         std::uint64_t r) {
  if (M < 1 || n < 1 || t < 1 || r < 1)
    throw Error(ErrorKind::InvalidInput, "network cost needs M, n, t, r >= 1");
  NetworkCost c;
  c.collect_bytes = 16 * M * n;
  c.broadcast_bytes = 4 * n * (t + r);
  c.total_upper_bound = 4 * n * (4 * M + t + r);
  return c;
}

// ---- master registry -------------------------------------------------------

/// One count vector per Map task id, keyed by task id.
class StatsRegistry {
 public:
  StatsRegistry(std::uint32_t expected_tasks, std::uint32_t n) : expected_(expected_tasks), n_(n) {}

  std::uint32_t expected() const { return expected_; }
  std::uint32_t n() const { return n_; }
  std::size_t size() const { return by_task_.size(); }
  bool complete() const { return by_task_.size() == expected_; }
  const std::map<std::uint32_t, std::vector<Count>>& by_task() const { return by_task_; }

  /// A repeated successful attempt replaces the entry; by Map determinism it
  /// must carry the same vector, otherwise the job is inconsistent.
  void ingest(const StatsMessage& msg) {
    if (!msg.success) throw Error(ErrorKind::Protocol, "failed attempt reached the master");
    if (msg.counts.size() != n_)
      throw Error(ErrorKind::Protocol, "stats vector has " + std::to_string(msg.counts.size()) +
                                           " entries, expected " + std::to_string(n_));
    if (msg.map_task_id < 1 || msg.map_task_id > expected_)
      throw Error(ErrorKind::Protocol, "map task id " + std::to_string(msg.map_task_id) + " out of range");
    auto it = by_task_.find(msg.map_task_id);
    if (it != by_task_.end()) {
      if (it->second != msg.counts)
        throw Error(ErrorKind::Consistency,
                    "attempts of task " + std::to_string(msg.map_task_id) + " disagree");
      it->second = msg.counts;
      return;
    }
    by_task_.emplace(msg.map_task_id, msg.counts);
  }

  bool operator==(const StatsRegistry&) const = default;

 private:
  std::uint32_t expected_;
  std::uint32_t n_;
  std::map<std::uint32_t, std::vector<Count>> by_task_;
};

inline StatsRegistry master_ingest(StatsRegistry registry, const StatsMessage& msg) {
  registry.ingest(msg);
  return registry;
}

/// K = sum of all K^(i), element-wise.
inline KeyDist aggregate(const StatsRegistry& registry) {
  if (!registry.complete())
    throw Error(ErrorKind::NotReady, std::to_string(registry.size()) + " of " +
                                         std::to_string(registry.expected()) + " map tasks reported");
  std::vector<Count> k(registry.n(), 0);
  for (const auto& [task, counts] : registry.by_task())
    for (std::size_t j = 0; j < counts.size(); ++j) k[j] = add_checked(k[j], counts[j]);
  return KeyDist(std::move(k));
}

// ---- tracker / master roles ------------------------------------------------

/// Per-node coordinator. Buffers successful stats from local Map attempts and
/// forwards them in one batch; relays the schedule to local Reduce slots.
class Tracker {
 public:
  Tracker(std::uint32_t id, Transport& transport) : id_(id), transport_(&transport) {}

  std::uint32_t id() const { return id_; }

  /// Map worker -> tracker. Returns false when the message was discarded.
  bool receive(std::span<const std::uint8_t> frame) {
    auto msg = decode_stats(frame);
    transport_->record(Leg::MapToTracker, 8 * msg.counts.size(), frame.size());
    if (!msg.success) return false;
    std::lock_guard lock(mu_);
    buffered_.push_back(std::move(msg));
    return true;
  }

  std::size_t buffered() const {
    std::lock_guard lock(mu_);
    return buffered_.size();
  }

  /// Combined transmission to the master: [count:4] followed by stats frames.
  wire::Bytes flush() {
    std::lock_guard lock(mu_);
    wire::Bytes out;
    wire::put_u32(out, static_cast<std::uint32_t>(buffered_.size()));
    std::uint64_t payload = 0;
    for (const auto& m : buffered_) {
      encode_into(out, m);
      payload += 8 * m.counts.size();
    }
    buffered_.clear();
    transport_->record(Leg::TrackerToMaster, payload, out.size());
    return out;
  }

  void attach_reduce_slot(std::uint32_t slot) { reduce_slots_.push_back(slot); }
  const std::vector<std::uint32_t>& reduce_slots() const { return reduce_slots_; }

  void set_reachable(bool reachable) { reachable_ = reachable; }
  bool reachable() const { return reachable_; }

  /// Master -> tracker. Stores the frame for relaying.
  void accept_schedule(wire::Bytes frame) {
    if (!reachable_) throw Error(ErrorKind::JobFailure, "tracker " + std::to_string(id_) + " unreachable");
    transport_->record(Leg::MasterToTracker, frame.size() - 4, frame.size());
    schedule_frame_ = std::move(frame);
  }

  /// Tracker -> each local Reduce slot.
  std::vector<std::pair<std::uint32_t, Schedule>> relay_schedule(std::uint32_t m) {
    std::vector<std::pair<std::uint32_t, Schedule>> out;
    for (auto slot : reduce_slots_) {
      transport_->record(Leg::TrackerToReduce, schedule_frame_.size() - 4, schedule_frame_.size());
      out.emplace_back(slot, decode_schedule(schedule_frame_, m));
    }
    return out;
  }

 private:
  std::uint32_t id_;
  Transport* transport_;
  mutable std::mutex mu_;
  std::vector<StatsMessage> buffered_;
  std::vector<std::uint32_t> reduce_slots_;
  wire::Bytes schedule_frame_;
  bool reachable_ = true;
};

/// Master side of a tracker batch.
inline void ingest_batch(StatsRegistry& registry, std::span<const std::uint8_t> batch) {
  wire::Reader in(batch);
  std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) registry.ingest(decode_stats(in));
  if (!in.done()) throw Error(ErrorKind::Protocol, "trailing bytes after stats batch");
}

/// Success flows to the master; failures are dropped at the tracker.
enum class ForwardDecision { Forwarded, Discarded };

inline ForwardDecision tracker_forward(Tracker& tracker, const StatsMessage& msg) {
  return tracker.receive(encode(msg)) ? ForwardDecision::Forwarded : ForwardDecision::Discarded;
}

/// Delivers the schedule to every tracker first, then to every Reduce slot.
/// Any unreachable tracker aborts before a single slot sees the schedule.
/// Returns (slot, schedule) for every attached Reduce slot, ordered by slot.
inline std::vector<std::pair<std::uint32_t, Schedule>> broadcast_schedule(
    const Schedule& sched, std::span<Tracker* const> trackers) {
  for (const Tracker* t : trackers)
    if (!t->reachable())
      throw Error(ErrorKind::JobFailure,
                  "schedule undeliverable to tracker " + std::to_string(t->id()) + "; reduce phase not started");
  auto frame = encode(sched);
  for (Tracker* t : trackers) t->accept_schedule(frame);
  std::vector<std::pair<std::uint32_t, Schedule>> delivered;
  for (Tracker* t : trackers)
    for (auto& p : t->relay_schedule(sched.m())) delivered.push_back(std::move(p));
  std::sort(delivered.begin(), delivered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return delivered;
}

}  // namespace opshard
