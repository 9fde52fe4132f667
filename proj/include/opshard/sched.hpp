#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_set>
#include <vector>

#include "opshard/cluster.hpp"
#include "opshard/core.hpp"
#include "opshard/wire.hpp"

namespace opshard {

struct ScheduleResult {
  Schedule schedule;
  Count max_load = 0;
  Rational ideal;
  double ratio = 1.0;
  std::chrono::nanoseconds solver_time{0};
  /// OS4M only: the search proved max_load <= (1 + eta) * optimum.
  bool certified = false;
};

namespace detail {

inline ScheduleResult finish_result(const KeyDist& dist, Schedule sched,
                                    std::chrono::steady_clock::time_point started) {
  ScheduleResult r;
  r.max_load = max_load(slot_loads(dist, sched));
  r.ideal = ideal_load(dist, sched.m());
  r.ratio = r.ideal.num == 0 ? 1.0 : static_cast<double>(r.max_load) / r.ideal.to_double();
  r.schedule = std::move(sched);
  r.solver_time = std::chrono::steady_clock::now() - started;
  return r;
}

inline void require_slots(std::uint32_t m) {
  if (m < 1) throw Error(ErrorKind::InvalidInput, "m must be >= 1");
}

}  // namespace detail

// ---- hash baseline ---------------------------------------------------------

/// Hash of a cluster id: the id itself. Cluster ids already come from a key
/// hash, so when m divides n the baseline equals key-hash partitioning.
struct ClusterIdHash {
  std::uint64_t operator()(ClusterId id) const { return id.value; }
};

/// s_j = (|hash(j)| mod m) + 1.
template <typename Hash = ClusterIdHash>
ScheduleResult schedule_hash(const KeyDist& dist, std::uint32_t m, Hash hash = {}) {
  detail::require_slots(m);
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint32_t> s(dist.n());
  for (std::size_t j = 0; j < dist.n(); ++j) {
    std::uint64_t h = static_cast<std::uint64_t>(hash(ClusterId{static_cast<std::uint32_t>(j + 1)}));
    s[j] = static_cast<std::uint32_t>(signed_magnitude(h) % m) + 1;
  }
  return detail::finish_result(dist, Schedule(std::move(s), m), t0);
}

// ---- LPT -------------------------------------------------------------------

/// Longest processing time first: clusters by decreasing load (ties by id),
/// each to the currently least-loaded slot (ties by lowest slot).
inline ScheduleResult schedule_lpt(const KeyDist& dist, std::uint32_t m) {
  detail::require_slots(m);
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(dist.n());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  std::vector<Count> load(m, 0);
  std::vector<std::uint32_t> s(dist.n(), 1);
  for (auto j : order) {
    auto it = std::min_element(load.begin(), load.end());
    *it += dist[j];
    s[j] = static_cast<std::uint32_t>(it - load.begin()) + 1;
  }
  return detail::finish_result(dist, Schedule(std::move(s), m), t0);
}

// ---- balanced subset sum ---------------------------------------------------

struct BssCandidate {
  std::uint32_t id = 0;
  Count load = 0;
};

struct BssInstance {
  std::vector<BssCandidate> candidate_loads;
  Count target = 0;
  double eta = 0.002;
};

namespace detail {

/// Subset of `cands` with sum <= cap, maximising the sum up to the scaling
/// loss. Loads are floor-scaled by delta = max(1, floor(eta * cap / n)) and a
/// bitset subset-sum DP runs over the scaled values. Reachable scaled sums
/// are scanned downward from floor(cap / delta); the first reconstructed
/// subset whose real sum fits is taken. Every subset with scaled sum
/// s <= floor(cap / delta) - n fits, so the loss against the best subset is
/// below (n + 1) * delta. Returns positions into `cands`, ascending. Zero
/// loads are never selected.
///
/// Among equal scaled sums the reconstruction drops the highest positions
/// first, so callers that order candidates by id get the lowest ids.
inline std::vector<std::size_t> bss_fill(std::span<const BssCandidate> cands, Count cap,
                                         double eta) {
  std::vector<std::size_t> out;
  if (cap == 0 || cands.empty()) return out;

  Count positive_sum = 0;
  for (const auto& c : cands) positive_sum = add_checked(positive_sum, c.load);
  if (positive_sum <= cap) {
    for (std::size_t i = 0; i < cands.size(); ++i)
      if (cands[i].load > 0) out.push_back(i);
    return out;
  }

  const double n = static_cast<double>(cands.size());
  const Count delta =
      std::max<Count>(1, static_cast<Count>(std::floor(eta * static_cast<double>(cap) / n)));
  const Count top = cap / delta;

  // Items with a zero scaled load are below delta; they are topped up greedily.
  std::vector<std::size_t> items, small;
  std::vector<Count> scaled;
  Count scaled_sum = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].load == 0 || cands[i].load > cap) continue;
    Count w = cands[i].load / delta;
    if (w == 0) {
      small.push_back(i);
      continue;
    }
    items.push_back(i);
    scaled.push_back(w);
    scaled_sum += w;
  }
  const Count range = std::min(top, scaled_sum);
  const std::size_t words = static_cast<std::size_t>(range / 64 + 1);
  const unsigned tail_bits = static_cast<unsigned>(range % 64 + 1);
  const std::uint64_t tail_mask = tail_bits == 64 ? ~0ULL : ((1ULL << tail_bits) - 1);

  std::vector<std::uint64_t> reach(words, 0), next(words);
  std::vector<std::uint64_t> take(items.size() * words, 0);
  reach[0] = 1;

  for (std::size_t k = 0; k < items.size(); ++k) {
    const Count w = scaled[k];
    const std::size_t q = static_cast<std::size_t>(w / 64);
    const unsigned r = static_cast<unsigned>(w % 64);
    next = reach;
    for (std::size_t dst = words; dst-- > q;) {
      std::size_t src = dst - q;
      std::uint64_t v = reach[src] << r;
      if (r != 0 && src > 0) v |= reach[src - 1] >> (64 - r);
      next[dst] |= v;
    }
    next[words - 1] &= tail_mask;
    std::uint64_t* tk = take.data() + k * words;
    for (std::size_t x = 0; x < words; ++x) tk[x] = next[x] & ~reach[x];
    reach.swap(next);
  }

  auto reconstruct = [&](Count s, std::vector<std::size_t>& subset) {
    subset.clear();
    Count real = 0;
    for (std::size_t k = items.size(); k-- > 0 && s > 0;) {
      const std::uint64_t* tk = take.data() + k * words;
      if ((tk[s / 64] >> (s % 64)) & 1ULL) {
        subset.push_back(items[k]);
        real += cands[items[k]].load;
        s -= scaled[k];
      }
    }
    return real;
  };

  Count got = 0;
  std::vector<std::size_t> subset;
  for (Count s = range + 1; s-- > 0;) {
    if (!((reach[s / 64] >> (s % 64)) & 1ULL)) continue;
    Count real = reconstruct(s, subset);
    if (real <= cap) {
      out = subset;
      got = real;
      break;
    }
  }
  for (auto i : small) {
    if (got + cands[i].load <= cap) {
      out.push_back(i);
      got += cands[i].load;
    }
  }
  std::sort(out.begin(), out.end());

  // Never do worse than the best single candidate that fits.
  std::optional<std::size_t> single;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (cands[i].load <= cap && cands[i].load > got &&
        (!single || cands[i].load > cands[*single].load))
      single = i;
  if (single) out = {*single};
  return out;
}

}  // namespace detail

/// Selects the candidate subset whose load sum best approaches the target:
/// the largest achievable sum <= target; when nothing positive fits below,
/// the smallest overshoot (single smallest candidate, lowest id on ties).
/// Returned ids are ascending.
inline std::vector<std::uint32_t> bss_select(const BssInstance& inst) {
  if (!(inst.eta > 0.0 && inst.eta < 1.0)) throw Error(ErrorKind::InvalidInput, "eta must lie in (0, 1)");
  std::vector<std::uint32_t> ids;
  if (inst.target == 0 || inst.candidate_loads.empty()) return ids;

  std::vector<BssCandidate> cands = inst.candidate_loads;
  std::stable_sort(cands.begin(), cands.end(),
                   [](const BssCandidate& a, const BssCandidate& b) { return a.id < b.id; });

  auto picked = detail::bss_fill(cands, inst.target, inst.eta);
  if (!picked.empty()) {
    for (auto i : picked) ids.push_back(cands[i].id);
    return ids;
  }
  bool something_fits = std::any_of(cands.begin(), cands.end(),
                                    [&](const BssCandidate& c) { return c.load <= inst.target; });
  if (something_fits) return ids;

  auto smallest = std::min_element(cands.begin(), cands.end(),
                                   [](const BssCandidate& a, const BssCandidate& b) {
                                     return a.load < b.load;
                                   });
  ids.push_back(smallest->id);
  return ids;
}

// ---- OS4M ------------------------------------------------------------------

namespace detail {

/// Bins of positions into a load vector sorted by decreasing load.
using Bins = std::vector<std::vector<std::size_t>>;

enum class Fit { Feasible, Infeasible, Unknown };

inline Count bin_max(const Bins& bins, std::span<const Count> w) {
  Count mx = 0;
  for (const auto& b : bins) {
    Count s = 0;
    for (auto i : b) s += w[i];
    mx = std::max(mx, s);
  }
  return mx;
}

/// Exact capacity check for small instances: fills one slot at a time with
/// a maximal subset that contains the largest remaining cluster, trying
/// subsets in decreasing-sum-first DFS order, memoising failed states.
class SlotCompletion {
 public:
  SlotCompletion(std::span<const Count> w, std::uint32_t m, std::size_t node_budget)
      : w_(w), m_(m), budget_(node_budget) {}

  Fit run(Count cap, Bins& out) {
    cap_ = cap;
    failed_.clear();
    nodes_ = 0;
    bins_.assign(m_, {});
    Count total = 0;
    for (auto x : w_) total += x;
    try {
      if (!pack(0, m_, total)) return Fit::Infeasible;
    } catch (const BudgetExceeded&) {
      return Fit::Unknown;
    }
    out = bins_;
    return Fit::Feasible;
  }

 private:
  struct BudgetExceeded {};

  std::uint64_t key(std::uint32_t used, std::uint32_t left) const {
    return (static_cast<std::uint64_t>(left) << 32) | used;
  }

  bool pack(std::uint32_t used, std::uint32_t left, Count remaining) {
    if (remaining == 0) return true;
    if (left == 0) return false;
    if (remaining > static_cast<Count>(left) * cap_) return false;
    const std::size_t n = w_.size();
    const std::size_t bin = m_ - left;
    if (left == 1) {
      for (std::size_t i = 0; i < n; ++i)
        if (!(used >> i & 1U)) bins_[bin].push_back(i);
      return true;
    }
    if (failed_.count(key(used, left))) return false;
    if (++nodes_ > budget_) throw BudgetExceeded{};

    std::size_t first = 0;
    while (used >> first & 1U) ++first;
    const Count floor_need = remaining > static_cast<Count>(left - 1) * cap_
                                 ? remaining - static_cast<Count>(left - 1) * cap_
                                 : 0;
    std::vector<std::size_t> chosen{first};
    if (extend(used | (1U << first), left, remaining, first + 1, w_[first], floor_need, chosen,
               std::nullopt))
      return true;
    failed_.insert(key(used, left));
    return false;
  }

  // Enumerate subsets of unused positions >= from; `min_skipped` is the
  // smallest load excluded so far, used to keep only maximal subsets.
  bool extend(std::uint32_t used, std::uint32_t left, Count remaining, std::size_t from, Count sum,
              Count floor_need, std::vector<std::size_t>& chosen,
              std::optional<Count> min_skipped) {
    const std::size_t n = w_.size();
    std::size_t i = from;
    while (i < n && (used >> i & 1U)) ++i;
    if (i == n) {
      if (sum < floor_need) return false;
      if (min_skipped && *min_skipped <= cap_ - sum) return false;
      const std::size_t bin = m_ - left;
      bins_[bin] = chosen;
      if (pack(used, left - 1, remaining - sum)) return true;
      bins_[bin].clear();
      return false;
    }
    if (++nodes_ > budget_) throw BudgetExceeded{};
    if (sum + w_[i] <= cap_) {
      chosen.push_back(i);
      if (extend(used | (1U << i), left, remaining, i + 1, sum + w_[i], floor_need, chosen,
                 min_skipped))
        return true;
      chosen.pop_back();
    }
    // Skip every unused item of equal load together; sorted input keeps them adjacent.
    std::size_t j = i + 1;
    while (j < n && ((used >> j & 1U) || w_[j] == w_[i])) ++j;
    Count skipped = min_skipped ? std::min(*min_skipped, w_[i]) : w_[i];
    return extend(used, left, remaining, j, sum, floor_need, chosen, skipped);
  }

  std::span<const Count> w_;
  std::uint32_t m_;
  std::size_t budget_;
  Count cap_ = 0;
  std::size_t nodes_ = 0;
  Bins bins_;
  std::unordered_set<std::uint64_t> failed_;
};

/// Greedy capacity check for large instances: each slot takes the largest
/// remaining cluster plus a BSS fill of the leftover capacity.
inline Fit greedy_fill(std::span<const Count> w, std::uint32_t m, Count cap, double eta, Bins& out) {
  std::vector<std::size_t> remaining(w.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  Bins bins(m);
  std::vector<BssCandidate> cands;
  for (std::uint32_t b = 0; b < m && !remaining.empty(); ++b) {
    std::size_t head = remaining.front();
    if (w[head] > cap) return Fit::Infeasible;
    cands.clear();
    for (std::size_t k = 1; k < remaining.size(); ++k)
      cands.push_back(BssCandidate{static_cast<std::uint32_t>(remaining[k]), w[remaining[k]]});
    auto picked = bss_fill(cands, cap - w[head], eta);
    bins[b].push_back(head);
    std::vector<char> take(remaining.size(), 0);
    take[0] = 1;
    for (auto p : picked) {
      bins[b].push_back(cands[p].id);
      take[p + 1] = 1;
    }
    std::vector<std::size_t> rest;
    for (std::size_t k = 0; k < remaining.size(); ++k)
      if (!take[k]) rest.push_back(remaining[k]);
    remaining.swap(rest);
  }
  if (!remaining.empty()) return Fit::Unknown;
  out = std::move(bins);
  return Fit::Feasible;
}

}  // namespace detail

struct Os4mOptions {
  /// Clusters at or below this count use the exact slot-completion check.
  std::size_t exact_limit = 20;
  std::size_t node_budget = 4'000'000;
};

/// Operation-level P||C_max scheduler.
///
/// 1. Decomposition pass: for slots 1..m-1, a BSS over the remaining clusters
///    with target remaining_total / remaining_slots; slot m takes the rest.
/// 2. If that is not already within (1 + eta) of max(ideal, largest cluster),
///    binary-search a slot capacity between that bound and the pass result,
///    checking each capacity by filling slots one BSS subproblem at a time.
///    The search stops once hi <= (1 + eta) * (proven lower bound).
///
/// Internally clusters are ranked by (load desc, id asc); BSS tie-breaks act
/// on that rank, so permuting equal loads cannot change the max-load.
inline ScheduleResult schedule_os4m(const KeyDist& dist, std::uint32_t m, double eta,
                                    Os4mOptions opts = {}) {
  detail::require_slots(m);
  if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorKind::InvalidInput, "eta must lie in (0, 1)");
  auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < dist.n(); ++j)
    if (dist[j] > 0) order.push_back(j);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  std::vector<Count> w(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) w[r] = dist[order[r]];

  // 1. decomposition pass
  detail::Bins best(m);
  {
    std::vector<std::size_t> remaining(w.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    Count rem_total = 0;
    for (auto x : w) rem_total += x;
    for (std::uint32_t slot = 0; slot + 1 < m && !remaining.empty(); ++slot) {
      BssInstance inst;
      inst.eta = eta;
      inst.target = rem_total / (m - slot);
      for (auto r : remaining) inst.candidate_loads.push_back({static_cast<std::uint32_t>(r), w[r]});
      auto ids = bss_select(inst);
      std::vector<char> picked(w.size(), 0);
      for (auto r : ids) {
        picked[r] = 1;
        best[slot].push_back(r);
        rem_total -= w[r];
      }
      std::erase_if(remaining, [&](std::size_t r) { return picked[r] != 0; });
    }
    for (auto r : remaining) best[m - 1].push_back(r);
  }

  Count hi = detail::bin_max(best, w);
  Count lo = load_lower_bound(dist, m);
  bool proven = true;
  auto within = [&](Count upper, Count lower) {
    return static_cast<long double>(upper) <= static_cast<long double>(lower) * (1.0L + eta);
  };

  // 2. capacity search
  if (!within(hi, lo)) {
    std::optional<detail::SlotCompletion> exact;
    if (w.size() <= std::min<std::size_t>(opts.exact_limit, 31)) exact.emplace(w, m, opts.node_budget);
    auto check = [&](Count cap, detail::Bins& bins) {
      return exact ? exact->run(cap, bins) : detail::greedy_fill(w, m, cap, eta, bins);
    };
    Count probe = lo;
    while (hi > lo && !within(hi, lo)) {
      detail::Bins bins;
      switch (check(probe, bins)) {
        case detail::Fit::Feasible:
          hi = std::min(hi, detail::bin_max(bins, w));
          best = std::move(bins);
          break;
        case detail::Fit::Unknown:
          proven = false;
          [[fallthrough]];
        case detail::Fit::Infeasible:
          lo = probe + 1;
          break;
      }
      probe = lo + (hi - lo) / 2;
    }
  }

  std::vector<std::uint32_t> s(dist.n(), 0);
  std::vector<Count> slot_load(m, 0);
  for (std::uint32_t b = 0; b < m; ++b)
    for (auto r : best[b]) {
      s[order[r]] = b + 1;
      slot_load[b] += w[r];
    }
  // zero-load clusters go to the least-loaded slot
  for (std::size_t j = 0; j < dist.n(); ++j)
    if (s[j] == 0)
      s[j] = static_cast<std::uint32_t>(std::min_element(slot_load.begin(), slot_load.end()) -
                                        slot_load.begin()) + 1;

  auto result = detail::finish_result(dist, Schedule(std::move(s), m), t0);
  result.certified = proven;
  return result;
}

// ---- exact oracle ----------------------------------------------------------

struct OracleLimits {
  std::size_t max_n = 20;
  std::uint32_t max_m = 5;
};

/// Exact minimum max-load by branch and bound over clusters in decreasing
/// load order. Slots holding equal load are interchangeable, so only the
/// first of each equal-load group is branched on. Refuses instances beyond
/// the guard limits.
inline ScheduleResult brute_force_optimal(const KeyDist& dist, std::uint32_t m,
                                          OracleLimits limits = {}) {
  detail::require_slots(m);
  if (dist.n() > limits.max_n || m > limits.max_m)
    throw Error(ErrorKind::Size, "oracle limited to n <= " + std::to_string(limits.max_n) +
                                     ", m <= " + std::to_string(limits.max_m));
  auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(dist.n());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  const Count lower = load_lower_bound(dist, m);
  std::vector<Count> load(m, 0);
  std::vector<std::uint32_t> cur(dist.n(), 1), best_s(dist.n(), 1);
  Count best = 0;
  for (auto j : order) best += dist[j];  // everything on slot 1

  auto dfs = [&](auto&& self, std::size_t depth, Count cur_max) -> void {
    if (best == lower) return;
    if (depth == order.size()) {
      if (cur_max < best) {
        best = cur_max;
        best_s = cur;
      }
      return;
    }
    const std::size_t j = order[depth];
    for (std::uint32_t b = 0; b < m; ++b) {
      bool seen = false;
      for (std::uint32_t p = 0; p < b && !seen; ++p) seen = load[p] == load[b];
      if (seen) continue;
      Count nl = load[b] + dist[j];
      if (nl >= best) continue;
      load[b] = nl;
      cur[j] = b + 1;
      self(self, depth + 1, std::max(cur_max, nl));
      load[b] -= dist[j];
      if (best == lower) return;
    }
  };
  dfs(dfs, 0, 0);
  return detail::finish_result(dist, Schedule(std::move(best_s), m), t0);
}

/// Dispatch on the configured scheduler kind.
inline ScheduleResult run_scheduler(const KeyDist& dist, std::uint32_t m, SchedulerKind kind,
                                    double eta) {
  switch (kind) {
    case SchedulerKind::Hash: return schedule_hash(dist, m);
    case SchedulerKind::LPT: return schedule_lpt(dist, m);
    case SchedulerKind::OS4M: return schedule_os4m(dist, m, eta);
  }
  throw Error(ErrorKind::InvalidInput, "unknown scheduler");
}

}  // namespace opshard
