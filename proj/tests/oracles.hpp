#pragma once

// Test-only reference computations. Deliberately naive; they must not share
// code paths with the library under test.

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <set>
#include <map>
#include <string>
#include <vector>

namespace oracle {

/// Minimum max-load over all m^n assignments. Only for tiny n.
inline std::uint64_t enumerate_optimum(const std::vector<std::uint64_t>& loads, unsigned m) {
  const std::size_t n = loads.size();
  std::uint64_t total_assignments = 1;
  for (std::size_t i = 0; i < n; ++i) total_assignments *= m;
  std::uint64_t best = UINT64_MAX;
  std::vector<std::uint64_t> slot(m);
  for (std::uint64_t code = 0; code < total_assignments; ++code) {
    std::fill(slot.begin(), slot.end(), 0);
    std::uint64_t c = code;
    for (std::size_t j = 0; j < n; ++j) {
      slot[c % m] += loads[j];
      c /= m;
    }
    std::uint64_t mx = 0;
    for (auto p : slot) mx = std::max(mx, p);
    best = std::min(best, mx);
  }
  return best;
}

/// Exact minimum max-load for n <= ~20 by binary search on the capacity with
/// a bin-packing DP over subsets: best[mask] is the lexicographically least
/// (bins opened, load of the open bin) packing of mask.
inline std::uint64_t subset_dp_optimum(const std::vector<std::uint64_t>& loads, unsigned m) {
  const std::size_t n = loads.size();
  std::uint64_t total = 0, biggest = 0;
  for (auto l : loads) {
    total += l;
    biggest = std::max(biggest, l);
  }
  auto feasible = [&](std::uint64_t cap) {
    const std::uint32_t full = (1u << n) - 1;
    std::vector<std::pair<std::uint32_t, std::uint64_t>> best(full + 1, {UINT32_MAX, 0});
    best[0] = {1, 0};
    for (std::uint32_t mask = 0; mask <= full; ++mask) {
      auto [bins, open] = best[mask];
      if (bins == UINT32_MAX) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (mask >> j & 1u) continue;
        std::pair<std::uint32_t, std::uint64_t> next =
            open + loads[j] <= cap ? std::pair{bins, open + loads[j]} : std::pair{bins + 1, loads[j]};
        auto& slot = best[mask | (1u << j)];
        if (next < slot) slot = next;
      }
    }
    return best[full].first <= m;
  };
  std::uint64_t lo = std::max(biggest, (total + m - 1) / m), hi = total;
  while (lo < hi) {
    std::uint64_t mid = lo + (hi - lo) / 2;
    if (feasible(mid)) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

/// Best subset sum <= target by enumerating all subsets.
inline std::uint64_t best_subset_sum_below(const std::vector<std::uint64_t>& loads,
                                           std::uint64_t target) {
  std::uint64_t best = 0;
  for (std::uint64_t mask = 0; mask < (1ULL << loads.size()); ++mask) {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < loads.size(); ++j)
      if (mask >> j & 1ULL) s += loads[j];
    if (s <= target) best = std::max(best, s);
  }
  return best;
}

/// Word count by straightforward whitespace splitting of the text after the
/// leading "<doc>\t" field.
inline std::map<std::string, std::uint64_t> word_count(const std::vector<std::string>& lines) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& line : lines) {
    std::size_t i = line.find('\t');
    i = i == std::string::npos ? 0 : i + 1;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) out[line.substr(i, j - i)]++;
      i = j;
    }
  }
  return out;
}

/// word -> set of doc ids containing it.
inline std::map<std::string, std::set<std::string>> inverted_index(const std::vector<std::string>& lines) {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& line : lines) {
    auto tab = line.find('\t');
    std::string doc = line.substr(0, tab);
    std::string word;
    for (std::size_t i = tab + 1; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ' ' || line[i] == '\t') {
        if (!word.empty()) out[word].insert(doc);
        word.clear();
      } else {
        word.push_back(line[i]);
      }
    }
  }
  return out;
}

/// Unit-tick simulation of a 3-stage pipeline with single-slot buffers
/// between stages; a finished item stays in its stage until the buffer
/// ahead is free. Durations must be >= 1. Returns the makespan.
inline std::uint64_t tick_pipeline(const std::vector<std::array<std::uint64_t, 3>>& d) {
  struct Occ {
    int item = -1;
    std::uint64_t left = 0;
  };
  Occ stage[3];
  int buf[2] = {-1, -1};
  std::size_t next = 0, done = 0;
  std::uint64_t t = 0;
  while (done < d.size()) {
    bool changed = true;
    while (changed) {
      changed = false;
      if (stage[2].item >= 0 && stage[2].left == 0) {
        stage[2].item = -1;
        ++done;
        changed = true;
      }
      if (stage[2].item < 0 && buf[1] >= 0) {
        stage[2] = {buf[1], d[buf[1]][2]};
        buf[1] = -1;
        changed = true;
      }
      if (stage[1].item >= 0 && stage[1].left == 0 && buf[1] < 0) {
        buf[1] = stage[1].item;
        stage[1].item = -1;
        changed = true;
      }
      if (stage[1].item < 0 && buf[0] >= 0) {
        stage[1] = {buf[0], d[buf[0]][1]};
        buf[0] = -1;
        changed = true;
      }
      if (stage[0].item >= 0 && stage[0].left == 0 && buf[0] < 0) {
        buf[0] = stage[0].item;
        stage[0].item = -1;
        changed = true;
      }
      if (stage[0].item < 0 && next < d.size()) {
        stage[0] = {static_cast<int>(next), d[next][0]};
        ++next;
        changed = true;
      }
    }
    if (done == d.size()) break;
    ++t;
    for (auto& s : stage)
      if (s.item >= 0 && s.left > 0) --s.left;
  }
  return t;
}

struct RawRecordFile {
  std::string magic;
  std::uint32_t owner = 0;
  std::uint32_t cluster = 0;
  std::uint64_t declared = 0;
  std::vector<std::pair<std::string, std::string>> records;
};

/// Byte-level parse of a bucket/output file, written against the format
/// description rather than the library reader.
inline RawRecordFile read_raw_record_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto be = [&](int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 8) | static_cast<unsigned char>(b.at(pos++));
    return v;
  };
  RawRecordFile out;
  out.magic = b.substr(0, 4);
  pos = 4;
  out.owner = static_cast<std::uint32_t>(be(4));
  out.cluster = static_cast<std::uint32_t>(be(4));
  out.declared = be(8);
  while (pos < b.size()) {
    auto kl = be(4);
    std::string k = b.substr(pos, kl);
    pos += kl;
    auto vl = be(4);
    std::string v = b.substr(pos, vl);
    pos += vl;
    out.records.emplace_back(k, v);
  }
  return out;
}

}  // namespace oracle
