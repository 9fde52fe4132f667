#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string_view>

#include "opshard/core.hpp"

namespace opshard {

/// FNV-1a, 64-bit. The default key hash of the engine.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// |h| with h read as a signed 64-bit value. INT64_MIN maps to 2^63.
constexpr std::uint64_t signed_magnitude(std::uint64_t h) {
  return (h >> 63) ? (~h + 1) : h;
}

enum class ClustererKind { DefaultHash, Custom };

/// Maps keys onto operation clusters 1..n_target.
///
/// DefaultHash: id = (|fnv1a64(key)| mod n_target) + 1, so two keys share a
/// cluster iff their hash magnitudes are congruent mod n_target.
/// Custom: the user function returns the id directly; it is validated
/// against n_target on every call.
class Clusterer {
 public:
  using HashFn = std::function<std::uint64_t(std::string_view)>;
  using CustomFn = std::function<std::uint32_t(std::string_view)>;

  static Clusterer default_hash(std::uint32_t n_target, HashFn hash = fnv1a64) {
    if (n_target < 1) throw Error(ErrorKind::InvalidInput, "n_target must be >= 1");
    Clusterer c;
    c.kind_ = ClustererKind::DefaultHash;
    c.n_target_ = n_target;
    c.hash_ = std::move(hash);
    return c;
  }

  static Clusterer custom(std::uint32_t n_target, CustomFn fn) {
    if (n_target < 1) throw Error(ErrorKind::InvalidInput, "n_target must be >= 1");
    Clusterer c;
    c.kind_ = ClustererKind::Custom;
    c.n_target_ = n_target;
    c.custom_ = std::move(fn);
    return c;
  }

  ClustererKind kind() const { return kind_; }
  std::uint32_t n_target() const { return n_target_; }

  ClusterId operator()(std::string_view key) const {
    if (kind_ == ClustererKind::Custom) {
      std::uint32_t id = custom_(key);
      if (id < 1 || id > n_target_)
        throw Error(ErrorKind::InvalidInput, "custom clusterer emitted id " + std::to_string(id) +
                                                 " outside 1.." + std::to_string(n_target_));
      return ClusterId{id};
    }
    return ClusterId{static_cast<std::uint32_t>(signed_magnitude(hash_(key)) % n_target_) + 1};
  }

 private:
  Clusterer() = default;

  ClustererKind kind_ = ClustererKind::DefaultHash;
  std::uint32_t n_target_ = 1;
  HashFn hash_;
  CustomFn custom_;
};

inline ClusterId cluster_of(std::string_view key, const Clusterer& c) { return c(key); }

/// Number of distinct non-empty clusters; never exceeds n_target.
inline std::size_t effective_n(const std::set<ClusterId>& observed, const Clusterer& c) {
  for (auto id : observed)
    if (id.value < 1 || id.value > c.n_target())
      throw Error(ErrorKind::InvalidInput, "observed cluster id outside 1..n_target");
  return observed.size();
}

/// Non-empty cluster count of a distribution.
inline std::size_t effective_n(const KeyDist& dist) {
  return static_cast<std::size_t>(
      std::count_if(dist.loads().begin(), dist.loads().end(), [](Count k) { return k > 0; }));
}

}  // namespace opshard
