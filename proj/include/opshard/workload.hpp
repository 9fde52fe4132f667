#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "opshard/cluster.hpp"
#include "opshard/core.hpp"

namespace opshard {

// Platform-independent draws on top of mt19937_64 (whose output sequence
// is fixed by the standard, unlike the std distributions).
namespace rng {

inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) {
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = g();
    if (r >= threshold) return r % n;
  }
}

inline double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

}  // namespace rng

/// Inverse-CDF sampler over ranks 1..N with P(r) proportional to r^-s.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s) {
    if (!(s > 0.0)) throw Error(ErrorKind::InvalidInput, "zipf exponent must be > 0");
    if (n == 0) throw Error(ErrorKind::InvalidInput, "zipf needs at least one key");
    cdf_.resize(n);
    double acc = 0.0;
    for (std::uint64_t r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -s);
      cdf_[r] = acc;
    }
    for (auto& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
  }

  /// 1-based rank.
  std::uint64_t operator()(std::mt19937_64& g) const {
    double u = rng::unit(g);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                               static_cast<std::ptrdiff_t>(cdf_.size()) - 1)) + 1;
  }

 private:
  std::vector<double> cdf_;
};

enum class WorkloadKind { Zipf, Uniform, WordCorpus };

struct WorkloadGen {
  WorkloadKind kind = WorkloadKind::Zipf;
  double s = 1.0;
  std::uint64_t distinct_keys = 1000;
  std::uint64_t total_pairs = 10000;
  std::uint64_t seed = 1;
  // WordCorpus only
  std::uint64_t corpus_bytes = 1 << 20;
  std::uint32_t words_per_line = 12;
};

inline std::string key_name(std::uint64_t rank) { return "key" + std::to_string(rank); }

namespace detail {

inline std::vector<std::string> make_vocabulary(std::uint64_t n, std::mt19937_64& g) {
  static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  std::vector<std::string> vocab;
  vocab.reserve(n);
  std::vector<std::string> seen;
  while (vocab.size() < n) {
    std::size_t len = 2 + rng::below(g, 9);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w.push_back(kLetters[rng::below(g, 26)]);
    // suffix keeps words unique without a lookup table
    w += std::to_string(vocab.size() % 7);
    vocab.push_back(w + (vocab.size() >= 7 ? std::to_string(vocab.size() / 7) : ""));
  }
  return vocab;
}

}  // namespace detail

/// Input records for a synthetic workload, byte-identical per seed.
///
/// Zipf / Uniform: one record per intermediate pair, each record a key name.
/// WordCorpus: lines "d<line>\t<words...>" with Zipf-distributed words over
/// a seeded vocabulary of `distinct_keys` words, up to `corpus_bytes`.
inline std::vector<std::string> gen_workload(const WorkloadGen& g) {
  std::mt19937_64 engine(g.seed);
  std::vector<std::string> out;
  switch (g.kind) {
    case WorkloadKind::Zipf: {
      ZipfSampler z(g.distinct_keys, g.s);
      out.reserve(g.total_pairs);
      for (std::uint64_t i = 0; i < g.total_pairs; ++i) out.push_back(key_name(z(engine)));
      break;
    }
    case WorkloadKind::Uniform: {
      if (g.distinct_keys == 0) throw Error(ErrorKind::InvalidInput, "uniform needs at least one key");
      out.reserve(g.total_pairs);
      for (std::uint64_t i = 0; i < g.total_pairs; ++i)
        out.push_back(key_name(rng::below(engine, g.distinct_keys) + 1));
      break;
    }
    case WorkloadKind::WordCorpus: {
      if (g.words_per_line == 0) throw Error(ErrorKind::InvalidInput, "words_per_line must be >= 1");
      ZipfSampler z(g.distinct_keys, g.s);
      auto vocab = detail::make_vocabulary(g.distinct_keys, engine);
      std::uint64_t bytes = 0;
      for (std::uint64_t line = 0; bytes < g.corpus_bytes; ++line) {
        std::string rec = "d" + std::to_string(line) + "\t";
        std::uint32_t words = 1 + static_cast<std::uint32_t>(rng::below(engine, 2 * g.words_per_line - 1));
        for (std::uint32_t k = 0; k < words; ++k) {
          if (k) rec.push_back(' ');
          rec += vocab[z(engine) - 1];
        }
        bytes += rec.size() + 1;
        out.push_back(std::move(rec));
      }
      break;
    }
  }
  return out;
}

/// Per-key pair counts of a Zipf or Uniform workload, indexed by rank - 1.
/// Same draws as gen_workload without materialising the records.
inline std::vector<Count> gen_key_counts(const WorkloadGen& g) {
  std::mt19937_64 engine(g.seed);
  std::vector<Count> counts(g.distinct_keys, 0);
  if (g.kind == WorkloadKind::Zipf) {
    ZipfSampler z(g.distinct_keys, g.s);
    for (std::uint64_t i = 0; i < g.total_pairs; ++i) ++counts[z(engine) - 1];
  } else if (g.kind == WorkloadKind::Uniform) {
    for (std::uint64_t i = 0; i < g.total_pairs; ++i) ++counts[rng::below(engine, g.distinct_keys)];
  } else {
    throw Error(ErrorKind::InvalidInput, "key counts only for Zipf/Uniform workloads");
  }
  return counts;
}

/// Folds per-key counts (key names from key_name) into a cluster distribution.
inline KeyDist cluster_key_counts(const std::vector<Count>& per_key, const Clusterer& c) {
  std::vector<Count> loads(c.n_target(), 0);
  for (std::size_t r = 0; r < per_key.size(); ++r)
    if (per_key[r] > 0) {
      auto& slot = loads[c(key_name(r + 1)).index()];
      slot = add_checked(slot, per_key[r]);
    }
  return KeyDist(std::move(loads));
}

/// Least-squares slope of log(count) against log(rank) over ranks 1..max_rank
/// with non-zero counts, counts sorted descending.
inline double rank_frequency_slope(std::vector<Count> counts, std::size_t max_rank) {
  std::sort(counts.begin(), counts.end(), std::greater<>());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = 0;
  for (std::size_t r = 0; r < std::min(max_rank, counts.size()); ++r) {
    if (counts[r] == 0) break;
    double x = std::log(static_cast<double>(r + 1));
    double y = std::log(static_cast<double>(counts[r]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    n += 1;
  }
  if (n < 2) return 0.0;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---- scheduler benchmark instances -------------------------------------------

enum class LoadShape { Uniform, Zipf, HeavyOutlier };

inline const char* to_string(LoadShape s) {
  switch (s) {
    case LoadShape::Uniform: return "uniform";
    case LoadShape::Zipf: return "zipf";
    case LoadShape::HeavyOutlier: return "heavy";
  }
  return "?";
}

/// n cluster loads of the given shape.
/// Uniform: iid in [1, 1000]. Zipf: 10^4 / rank^s with s in [0.5, 1.5],
/// shuffled. HeavyOutlier: iid in [1, 100] plus one or two clusters of
/// 20-60% of the rest.
inline std::vector<Count> gen_cluster_loads(LoadShape shape, std::size_t n, std::mt19937_64& g) {
  std::vector<Count> loads(n, 0);
  switch (shape) {
    case LoadShape::Uniform:
      for (auto& l : loads) l = 1 + rng::below(g, 1000);
      break;
    case LoadShape::Zipf: {
      double s = 0.5 + rng::unit(g);
      for (std::size_t j = 0; j < n; ++j)
        loads[j] = std::max<Count>(1, static_cast<Count>(std::llround(1e4 * std::pow(static_cast<double>(j + 1), -s))));
      for (std::size_t j = n; j > 1; --j) std::swap(loads[j - 1], loads[rng::below(g, j)]);
      break;
    }
    case LoadShape::HeavyOutlier: {
      Count rest = 0;
      for (auto& l : loads) rest += l = 1 + rng::below(g, 100);
      std::size_t heavy = std::min<std::size_t>(n, 1 + rng::below(g, 2));
      for (std::size_t k = 0; k < heavy; ++k) {
        double frac = 0.2 + 0.4 * rng::unit(g);
        loads[rng::below(g, n)] = std::max<Count>(1, static_cast<Count>(frac * static_cast<double>(rest)));
      }
      break;
    }
  }
  return loads;
}


}  // namespace opshard
