#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "opshard/core.hpp"

namespace opshard {

// ---- CSV ------------------------------------------------------------------

namespace csv {

inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(fields[i]);
  }
  return out;
}

/// One record; quoted fields may not span lines here.
inline std::vector<std::string> parse_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw Error(ErrorKind::InvalidInput, "unterminated quote in csv row");
  out.push_back(std::move(cur));
  return out;
}

/// Shortest representation that parses back to the same double.
inline std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string num(std::uint64_t v) { return std::to_string(v); }

inline double to_double(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorKind::InvalidInput, "bad number '" + s + "'");
  return v;
}

inline std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error(ErrorKind::InvalidInput, "bad integer '" + s + "'");
  return v;
}

class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorKind::Io, "cannot write " + path.string());
    line(header);
  }

  void line(const std::vector<std::string>& fields) { out_ << row(fields) << '\n'; }

  ~Writer() { out_.flush(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Header plus rows.
inline std::vector<std::vector<std::string>> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string l;
  while (std::getline(in, l)) {
    if (l.empty()) continue;
    rows.push_back(parse_row(l));
  }
  return rows;
}

}  // namespace csv

// ---- metrics bundle ---------------------------------------------------------

/// Everything a job run reports. Count-valued fields are deterministic for a
/// given seed and config and go to metrics.csv; wall-clock measurements go to
/// timings.csv so that metrics.csv can be compared byte for byte.
struct MetricsBundle {
  std::string scheduler;
  std::uint64_t map_tasks = 0;
  std::uint64_t clusters = 0;
  std::uint64_t effective_clusters = 0;
  std::uint64_t total_pairs = 0;
  std::vector<Count> slot_loads;
  Count max_load = 0;
  double ideal_load = 0.0;
  double ratio = 1.0;
  double slot_load_rel_stddev = 0.0;
  std::uint64_t collect_bytes = 0;
  std::uint64_t broadcast_bytes = 0;
  std::uint64_t network_bound = 0;
  std::uint64_t wire_bytes = 0;

  // timing, seconds
  std::vector<double> map_seconds;
  std::vector<double> reduce_seconds;
  std::vector<double> sort_delay_seconds;  // per slot, 0 for slots without items
  std::vector<double> run_delay_seconds;
  double scheduler_seconds = 0.0;

  Spread map_spread() const { return spread_of(map_seconds); }
  Spread reduce_spread() const { return spread_of(reduce_seconds); }

  bool operator==(const MetricsBundle&) const = default;
};

inline const std::vector<std::string> kMetricsHeader{"metric", "slot_or_task", "value"};

inline void write_metrics_csv(const MetricsBundle& m, const std::filesystem::path& path) {
  csv::Writer w(path, kMetricsHeader);
  w.line({"scheduler", "", m.scheduler});
  w.line({"map_tasks", "", csv::num(m.map_tasks)});
  w.line({"clusters", "", csv::num(m.clusters)});
  w.line({"effective_clusters", "", csv::num(m.effective_clusters)});
  w.line({"total_pairs", "", csv::num(m.total_pairs)});
  for (std::size_t i = 0; i < m.slot_loads.size(); ++i)
    w.line({"slot_load", std::to_string(i + 1), csv::num(m.slot_loads[i])});
  w.line({"max_load", "", csv::num(m.max_load)});
  w.line({"ideal_load", "", csv::num(m.ideal_load)});
  w.line({"ratio", "", csv::num(m.ratio)});
  w.line({"slot_load_rel_stddev", "", csv::num(m.slot_load_rel_stddev)});
  w.line({"collect_bytes", "", csv::num(m.collect_bytes)});
  w.line({"broadcast_bytes", "", csv::num(m.broadcast_bytes)});
  w.line({"network_bound", "", csv::num(m.network_bound)});
  w.line({"wire_bytes", "", csv::num(m.wire_bytes)});
}

inline void write_timings_csv(const MetricsBundle& m, const std::filesystem::path& path) {
  csv::Writer w(path, kMetricsHeader);
  auto series = [&](const std::string& name, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) w.line({name, std::to_string(i + 1), csv::num(v[i])});
  };
  series("map_seconds", m.map_seconds);
  series("reduce_seconds", m.reduce_seconds);
  series("sort_delay_seconds", m.sort_delay_seconds);
  series("run_delay_seconds", m.run_delay_seconds);
  auto ms = m.map_spread(), rs = m.reduce_spread();
  w.line({"map_seconds_mean", "", csv::num(ms.mean)});
  w.line({"map_seconds_rel_stddev", "", csv::num(ms.rel_stddev)});
  w.line({"reduce_seconds_mean", "", csv::num(rs.mean)});
  w.line({"reduce_seconds_rel_stddev", "", csv::num(rs.rel_stddev)});
  w.line({"sort_delay_mean_seconds", "", csv::num(spread_of(m.sort_delay_seconds).mean)});
  w.line({"run_delay_mean_seconds", "", csv::num(spread_of(m.run_delay_seconds).mean)});
  w.line({"scheduler_seconds", "", csv::num(m.scheduler_seconds)});
}

/// Parses metrics.csv and, when present, the timings file next to it.
inline MetricsBundle read_metrics(const std::filesystem::path& metrics_csv,
                                  const std::filesystem::path& timings_csv = {}) {
  MetricsBundle m;
  auto rows = csv::read(metrics_csv);
  if (rows.empty() || rows[0] != kMetricsHeader) throw Error(ErrorKind::InvalidInput, "metrics.csv header mismatch");
  auto index_of = [](const std::string& s) { return static_cast<std::size_t>(csv::to_u64(s)); };
  auto put = [&]<typename T>(std::vector<T>& v, const std::string& idx, T value) {
    std::size_t i = index_of(idx);
    if (i == 0) throw Error(ErrorKind::InvalidInput, "metric index must be >= 1");
    if (v.size() < i) v.resize(i);
    v[i - 1] = value;
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 3) throw Error(ErrorKind::InvalidInput, "metrics row needs 3 fields");
    const auto& k = row[0];
    const auto& v = row[2];
    if (k == "scheduler") m.scheduler = v;
    else if (k == "map_tasks") m.map_tasks = csv::to_u64(v);
    else if (k == "clusters") m.clusters = csv::to_u64(v);
    else if (k == "effective_clusters") m.effective_clusters = csv::to_u64(v);
    else if (k == "total_pairs") m.total_pairs = csv::to_u64(v);
    else if (k == "slot_load") put(m.slot_loads, row[1], csv::to_u64(v));
    else if (k == "max_load") m.max_load = csv::to_u64(v);
    else if (k == "ideal_load") m.ideal_load = csv::to_double(v);
    else if (k == "ratio") m.ratio = csv::to_double(v);
    else if (k == "slot_load_rel_stddev") m.slot_load_rel_stddev = csv::to_double(v);
    else if (k == "collect_bytes") m.collect_bytes = csv::to_u64(v);
    else if (k == "broadcast_bytes") m.broadcast_bytes = csv::to_u64(v);
    else if (k == "network_bound") m.network_bound = csv::to_u64(v);
    else if (k == "wire_bytes") m.wire_bytes = csv::to_u64(v);
  }
  if (!timings_csv.empty()) {
    auto trows = csv::read(timings_csv);
    if (trows.empty() || trows[0] != kMetricsHeader) throw Error(ErrorKind::InvalidInput, "timings header mismatch");
    for (std::size_t r = 1; r < trows.size(); ++r) {
      const auto& row = trows[r];
      if (row.size() != 3) throw Error(ErrorKind::InvalidInput, "timings row needs 3 fields");
      const auto& k = row[0];
      double v = csv::to_double(row[2]);
      if (k == "map_seconds") put(m.map_seconds, row[1], v);
      else if (k == "reduce_seconds") put(m.reduce_seconds, row[1], v);
      else if (k == "sort_delay_seconds") put(m.sort_delay_seconds, row[1], v);
      else if (k == "run_delay_seconds") put(m.run_delay_seconds, row[1], v);
      else if (k == "scheduler_seconds") m.scheduler_seconds = v;
    }
  }
  return m;
}

}  // namespace opshard
