#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opshard {

enum class ErrorKind {
  InvalidInput,
  Protocol,
  NotReady,
  Size,
  Consistency,
  IncompleteTrace,
  Io,
  Overflow,
  JobFailure,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::NotReady: return "not-ready";
    case ErrorKind::Size: return "size";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::IncompleteTrace: return "incomplete-trace";
    case ErrorKind::Io: return "io";
    case ErrorKind::Overflow: return "overflow";
    case ErrorKind::JobFailure: return "job-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

using Count = std::uint64_t;

// Checked 64-bit accumulation; pair counts never wrap.
inline Count add_checked(Count a, Count b) {
  Count out;
  if (__builtin_add_overflow(a, b, &out)) throw Error(ErrorKind::Overflow, "pair count overflow");
  return out;
}

/// 1-based operation-cluster id.
struct ClusterId {
  std::uint32_t value = 1;

  constexpr auto operator<=>(const ClusterId&) const = default;
  constexpr std::size_t index() const { return value - 1; }
};

/// Aggregated per-cluster pair counts k_1..k_n.
class KeyDist {
 public:
  KeyDist() = default;
  explicit KeyDist(std::vector<Count> loads) : loads_(std::move(loads)) {
    // validates finiteness of the total
    (void)total();
  }

  std::size_t n() const { return loads_.size(); }
  std::span<const Count> loads() const { return loads_; }
  Count operator[](std::size_t j) const { return loads_[j]; }

  Count total() const {
    Count t = 0;
    for (Count k : loads_) t = add_checked(t, k);
    return t;
  }

  Count max_cluster() const {
    return loads_.empty() ? 0 : *std::max_element(loads_.begin(), loads_.end());
  }

  bool operator==(const KeyDist&) const = default;

 private:
  std::vector<Count> loads_;
};

/// Assignment vector s_1..s_n of 1-based slot ids over m slots.
class Schedule {
 public:
  Schedule() = default;
  Schedule(std::vector<std::uint32_t> assignment, std::uint32_t m)
      : assignment_(std::move(assignment)), m_(m) {
    if (m_ == 0) throw Error(ErrorKind::InvalidInput, "schedule needs m >= 1");
    for (auto s : assignment_)
      if (s < 1 || s > m_)
        throw Error(ErrorKind::InvalidInput,
                    "slot id " + std::to_string(s) + " outside 1.." + std::to_string(m_));
  }

  std::size_t n() const { return assignment_.size(); }
  std::uint32_t m() const { return m_; }
  std::span<const std::uint32_t> assignment() const { return assignment_; }
  std::uint32_t slot_of(std::size_t j) const { return assignment_[j]; }

  /// Clusters owned by `slot`, ascending.
  std::vector<ClusterId> owned_by(std::uint32_t slot) const {
    std::vector<ClusterId> out;
    for (std::size_t j = 0; j < assignment_.size(); ++j)
      if (assignment_[j] == slot) out.push_back(ClusterId{static_cast<std::uint32_t>(j + 1)});
    return out;
  }

  /// Binary form x_ij (row i = slot, column j = cluster).
  std::vector<std::vector<std::uint8_t>> as_matrix() const {
    std::vector<std::vector<std::uint8_t>> x(m_, std::vector<std::uint8_t>(assignment_.size(), 0));
    for (std::size_t j = 0; j < assignment_.size(); ++j) x[assignment_[j] - 1][j] = 1;
    return x;
  }

  bool operator==(const Schedule&) const = default;

 private:
  std::vector<std::uint32_t> assignment_;
  std::uint32_t m_ = 1;
};

struct SlotLoads {
  std::vector<Count> loads;

  std::size_t m() const { return loads.size(); }
};

/// Exact non-negative rational, used for ideal load comparisons.
struct Rational {
  Count num = 0;
  Count den = 1;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    using u128 = unsigned __int128;
    return u128(a.num) * b.den <=> u128(b.num) * a.den;
  }
  friend bool operator==(const Rational& a, const Rational& b) { return (a <=> b) == 0; }

  friend std::strong_ordering operator<=>(Count v, const Rational& r) {
    using u128 = unsigned __int128;
    return u128(v) * r.den <=> u128(r.num);
  }
  friend bool operator==(Count v, const Rational& r) { return (v <=> r) == 0; }
};

enum class SchedulerKind { Hash, LPT, OS4M };

inline const char* to_string(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::Hash: return "hash";
    case SchedulerKind::LPT: return "lpt";
    case SchedulerKind::OS4M: return "os4m";
  }
  return "?";
}

struct JobConfig {
  std::uint32_t m = 2;
  std::uint32_t map_slots = 1;
  std::uint32_t w = 1;
  std::uint32_t n_target = 16;
  double eta = 0.002;
  SchedulerKind scheduler_kind = SchedulerKind::OS4M;

  void validate() const {
    if (m < 1) throw Error(ErrorKind::InvalidInput, "m must be >= 1");
    if (map_slots < 1) throw Error(ErrorKind::InvalidInput, "map_slots must be >= 1");
    if (w < 1) throw Error(ErrorKind::InvalidInput, "w must be >= 1");
    if (n_target < 1) throw Error(ErrorKind::InvalidInput, "n_target must be >= 1");
    if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorKind::InvalidInput, "eta must lie in (0, 1)");
  }
};

// ---- load metrics ---------------------------------------------------------

inline SlotLoads slot_loads(const KeyDist& dist, const Schedule& sched) {
  if (dist.n() != sched.n())
    throw Error(ErrorKind::InvalidInput, "schedule covers " + std::to_string(sched.n()) +
                                             " clusters, distribution has " +
                                             std::to_string(dist.n()));
  SlotLoads out{std::vector<Count>(sched.m(), 0)};
  for (std::size_t j = 0; j < dist.n(); ++j) {
    auto& p = out.loads[sched.slot_of(j) - 1];
    p = add_checked(p, dist[j]);
  }
  return out;
}

inline Count max_load(const SlotLoads& loads) {
  if (loads.loads.empty()) throw Error(ErrorKind::InvalidInput, "max_load of zero slots");
  return *std::max_element(loads.loads.begin(), loads.loads.end());
}

/// Total load divided evenly over r slots; a lower bound on the optimal max-load.
inline Rational ideal_load(const KeyDist& dist, Count r) {
  if (r == 0) throw Error(ErrorKind::InvalidInput, "ideal_load needs r >= 1");
  Count total = dist.total();
  Count g = std::gcd(total, r);
  if (g == 0) return Rational{0, 1};
  return Rational{total / g, r / g};
}

/// max(ceil(total / m), max_j k_j).
inline Count load_lower_bound(const KeyDist& dist, Count m) {
  Count total = dist.total();
  Count even = total / m + (total % m != 0 ? 1 : 0);
  return std::max(even, dist.max_cluster());
}

/// Mean and stddev/mean of a sample (population stddev). Zero mean gives 0.
struct Spread {
  double mean = 0.0;
  double rel_stddev = 0.0;
};

template <typename Range>
Spread spread_of(const Range& values) {
  Spread s;
  std::size_t n = 0;
  double sum = 0.0;
  for (auto v : values) {
    sum += static_cast<double>(v);
    ++n;
  }
  if (n == 0) return s;
  s.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (auto v : values) {
    double d = static_cast<double>(v) - s.mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / static_cast<double>(n));
  s.rel_stddev = s.mean > 0.0 ? sd / s.mean : 0.0;
  return s;
}

}  // namespace opshard
