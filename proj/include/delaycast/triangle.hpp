#pragma once

// Censored run-off triangles of reporting counts.
//
// A triangle holds counts indexed by event week t (0-based internally,
// 1-based at the interfaces), reporting delay d in weeks, and optionally a
// region s. A cell is observed exactly when its report week lies on or
// before the observation horizon: (t+1) + d <= horizon, with horizon equal
// to T for a live snapshot. Larger horizons (up to T + D) represent
// retrospectively completed data used for evaluation.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "delaycast/csv.hpp"
#include "delaycast/date.hpp"

namespace delaycast {

struct LineListRecord {
  Date event_time;
  Date report_time;
  std::string region;  // empty when the line list carries no region column
};

struct RegionMap {
  std::vector<std::string> regions;
  std::vector<std::vector<int>> adjacency;  // S x S, 0/1, zero diagonal

  int size() const { return static_cast<int>(regions.size()); }

  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < regions.size(); ++i)
      if (regions[i] == id) return static_cast<int>(i);
    return -1;
  }
};

// Labels connected components of an undirected graph given by a 0/1 matrix.
// Edges are read symmetrically so an asymmetric matrix is treated as its
// symmetric closure.
inline std::vector<int> component_labels(const std::vector<std::vector<int>>& w) {
  const int n = static_cast<int>(w.size());
  std::vector<int> label(n, -1);
  std::vector<int> stack;
  int next = 0;
  for (int start = 0; start < n; ++start) {
    if (label[start] >= 0) continue;
    label[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j = 0; j < n; ++j)
        if (label[j] < 0 && (w[i][j] != 0 || w[j][i] != 0)) {
          label[j] = next;
          stack.push_back(j);
        }
    }
    ++next;
  }
  return label;
}

struct AdjacencyDiagnostics {
  bool symmetric = true;
  int components = 0;
  std::vector<int> isolated;  // region indices with no neighbours
  std::vector<int> degrees;
};

// Structural violations (shape, non-binary entries, nonzero diagonal) are
// hard errors; asymmetry is reported in the diagnostics, never repaired.
inline AdjacencyDiagnostics validate_adjacency(const RegionMap& map) {
  const int n = map.size();
  const auto& w = map.adjacency;
  if (static_cast<int>(w.size()) != n)
    throw std::invalid_argument("adjacency row count does not match region count");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(w[i].size()) != n)
      throw std::invalid_argument("adjacency matrix is not square");
    for (int j = 0; j < n; ++j)
      if (w[i][j] != 0 && w[i][j] != 1)
        throw std::invalid_argument("adjacency entries must be 0 or 1");
    if (w[i][i] != 0) throw std::invalid_argument("adjacency diagonal must be zero");
  }
  AdjacencyDiagnostics diag;
  diag.degrees.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (w[i][j] != w[j][i]) diag.symmetric = false;
      diag.degrees[i] += w[i][j];
    }
    if (diag.degrees[i] == 0) diag.isolated.push_back(i);
  }
  const auto labels = component_labels(w);
  diag.components = labels.empty() ? 0 : 1 + *std::max_element(labels.begin(), labels.end());
  return diag;
}

struct ReportingTriangle {
  int T = 0;  // number of time rows
  int D = 0;  // maximum delay in weeks
  int S = 1;  // number of regions
  std::string unit = "week";
  Date as_of;       // calendar date anchoring time row T
  int horizon = 0;  // observation frontier on the 1-based week axis
  std::vector<std::string> regions{"all"};
  std::vector<long long> counts;    // flat (t, d, s); zero where unobserved
  std::vector<char> mask;           // 1 where observed
  std::vector<long long> overflow;  // per (t, s): records with delay > D
  long long dropped_future_reports = 0;  // records reported after as_of, not serialised

  std::size_t n_cells() const {
    return static_cast<std::size_t>(T) * static_cast<std::size_t>(D + 1) *
           static_cast<std::size_t>(S);
  }
  std::size_t cell(int t, int d, int s) const {
    return (static_cast<std::size_t>(t) * static_cast<std::size_t>(D + 1) + d) *
               static_cast<std::size_t>(S) +
           s;
  }
  bool observed(int t, int d) const { return t + 1 + d <= horizon; }
  long long count(int t, int d, int s = 0) const { return counts[cell(t, d, s)]; }
};

// Throws on structural violations; returns advisory warnings.
inline std::vector<std::string> validate_triangle(const ReportingTriangle& tri) {
  if (tri.T < 1) throw std::invalid_argument("triangle needs at least one time row");
  if (tri.D < 1) throw std::invalid_argument("maximum delay must be at least 1");
  if (tri.S < 1) throw std::invalid_argument("triangle needs at least one region");
  if (static_cast<int>(tri.regions.size()) != tri.S)
    throw std::invalid_argument("region list does not match S");
  if (tri.horizon < tri.T || tri.horizon > tri.T + tri.D)
    throw std::invalid_argument("observation horizon must lie in [T, T+D]");
  if (tri.counts.size() != tri.n_cells() || tri.mask.size() != tri.n_cells())
    throw std::invalid_argument("count array shape mismatch");
  if (tri.overflow.size() != static_cast<std::size_t>(tri.T) * tri.S)
    throw std::invalid_argument("overflow array shape mismatch");
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d) {
      const bool obs = tri.observed(t, d);
      for (int s = 0; s < tri.S; ++s) {
        const auto c = tri.cell(t, d, s);
        if ((tri.mask[c] != 0) != obs)
          throw std::invalid_argument("mask does not match the censoring geometry");
        if (tri.counts[c] < 0) throw std::invalid_argument("negative count");
        if (!obs && tri.counts[c] != 0)
          throw std::invalid_argument("unobserved cell carries a count");
      }
    }
  for (long long v : tri.overflow)
    if (v < 0) throw std::invalid_argument("negative overflow count");
  std::vector<std::string> warnings;
  if (tri.T <= tri.D)
    warnings.push_back("T <= D: no time row is fully observed yet");
  return warnings;
}

struct BuildOptions {
  std::string unit = "week";
  Weekday week_start = Weekday::sunday;
};

// Aggregates a line list into a censored triangle as known at `as_of`.
// Records reported after as_of are dropped (counted, not serialised);
// records with delay beyond D land in overflow. Region labels are only
// interpreted when a RegionMap is supplied, otherwise everything pools
// into a single region.
inline ReportingTriangle build_triangle(const std::vector<LineListRecord>& records, int D,
                                        Date as_of, const RegionMap* map = nullptr,
                                        const BuildOptions& opts = {}) {
  if (D < 1) throw std::invalid_argument("maximum delay must be at least 1");
  if (records.empty()) throw std::invalid_argument("empty record set");
  const int S = map ? map->size() : 1;
  if (S < 1) throw std::invalid_argument("region map has no regions");

  const std::int64_t as_of_week = epiweek_index(as_of, opts.week_start);
  std::int64_t first_week = std::numeric_limits<std::int64_t>::max();
  std::vector<int> region_of(records.size(), 0);
  std::vector<char> keep(records.size(), 0);
  long long dropped = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.report_time < r.event_time)
      throw std::invalid_argument("record " + std::to_string(i) +
                                  ": report_time precedes event_time");
    if (map) {
      const int s = map->index_of(r.region);
      if (s < 0)
        throw std::invalid_argument("record " + std::to_string(i) + ": unknown region '" +
                                    r.region + "'");
      region_of[i] = s;
    }
    if (r.report_time > as_of) {
      ++dropped;
      continue;
    }
    keep[i] = 1;
    first_week = std::min(first_week, epiweek_index(r.event_time, opts.week_start));
  }
  if (first_week == std::numeric_limits<std::int64_t>::max())
    throw std::invalid_argument("no records are visible at the given as_of date");
  if (as_of_week - first_week + 1 > 100000)
    throw std::invalid_argument("time span from first event to as_of is implausibly large");

  ReportingTriangle tri;
  tri.T = static_cast<int>(as_of_week - first_week + 1);
  tri.D = D;
  tri.S = S;
  tri.unit = opts.week_start == Weekday::sunday
                 ? opts.unit
                 : opts.unit + ":" + weekday_name(opts.week_start);
  tri.as_of = as_of;
  tri.horizon = tri.T;
  tri.regions = map ? map->regions : std::vector<std::string>{"all"};
  tri.counts.assign(tri.n_cells(), 0);
  tri.mask.assign(tri.n_cells(), 0);
  tri.overflow.assign(static_cast<std::size_t>(tri.T) * S, 0);
  tri.dropped_future_reports = dropped;
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d)
      if (tri.observed(t, d))
        for (int s = 0; s < S; ++s) tri.mask[tri.cell(t, d, s)] = 1;

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!keep[i]) continue;
    const std::int64_t ew = epiweek_index(records[i].event_time, opts.week_start);
    const std::int64_t rw = epiweek_index(records[i].report_time, opts.week_start);
    const int t = static_cast<int>(ew - first_week);
    const int d = static_cast<int>(rw - ew);
    if (d > D)
      ++tri.overflow[static_cast<std::size_t>(t) * S + region_of[i]];
    else
      ++tri.counts[tri.cell(t, d, region_of[i])];
  }
  validate_triangle(tri);
  return tri;
}

struct RowTotal {
  long long observed_partial = 0;
  bool fully_observed = false;
};

// Per (t, s): sum of the observed cells of the row, and whether every delay
// up to D is already observed (t <= T - D for a live snapshot).
inline std::vector<RowTotal> marginal_totals(const ReportingTriangle& tri) {
  std::vector<RowTotal> out(static_cast<std::size_t>(tri.T) * tri.S);
  for (int t = 0; t < tri.T; ++t)
    for (int s = 0; s < tri.S; ++s) {
      RowTotal& row = out[static_cast<std::size_t>(t) * tri.S + s];
      row.fully_observed = tri.observed(t, tri.D);
      for (int d = 0; d <= tri.D; ++d)
        if (tri.observed(t, d)) row.observed_partial += tri.count(t, d, s);
    }
  return out;
}

// A complete (uncensored) count array, as produced by the simulator.
struct CountCube {
  int T = 0;
  int D = 0;
  int S = 1;
  std::string unit = "week";
  Date as_of;  // calendar date anchoring week T
  std::vector<std::string> regions{"all"};
  std::vector<long long> counts;

  std::size_t cell(int t, int d, int s) const {
    return (static_cast<std::size_t>(t) * static_cast<std::size_t>(D + 1) + d) *
               static_cast<std::size_t>(S) +
           s;
  }
  long long count(int t, int d, int s = 0) const { return counts[cell(t, d, s)]; }
};

// Snapshot of a complete cube as it would have been observed in week
// `as_of_week` (1-based on the cube's own axis). Weeks past the snapshot
// are dropped; cells reported after it are masked out. An as_of_week at or
// beyond T + D yields a fully observed triangle.
inline ReportingTriangle censor(const CountCube& cube, int as_of_week) {
  if (as_of_week < 1) throw std::invalid_argument("as_of week precedes the series start");
  const int Tnew = std::min(cube.T, as_of_week);
  ReportingTriangle tri;
  tri.T = Tnew;
  tri.D = cube.D;
  tri.S = cube.S;
  tri.unit = cube.unit;
  tri.as_of = cube.as_of.plus_days(7 * (static_cast<std::int64_t>(Tnew) - cube.T));
  tri.horizon = std::min(as_of_week, Tnew + cube.D);
  tri.regions = cube.regions;
  tri.counts.assign(tri.n_cells(), 0);
  tri.mask.assign(tri.n_cells(), 0);
  tri.overflow.assign(static_cast<std::size_t>(Tnew) * cube.S, 0);
  for (int t = 0; t < Tnew; ++t)
    for (int d = 0; d <= cube.D; ++d)
      if (tri.observed(t, d))
        for (int s = 0; s < cube.S; ++s) {
          tri.mask[tri.cell(t, d, s)] = 1;
          tri.counts[tri.cell(t, d, s)] = cube.count(t, d, s);
        }
  validate_triangle(tri);
  return tri;
}

// ---------------------------------------------------------------------------
// File formats

inline std::vector<LineListRecord> read_linelist_csv(const std::string& path) {
  const auto table = csv::read_file(path);
  const int ev = table.column("event_date");
  const int rp = table.column("report_date");
  const int rg = table.column("region");
  if (ev < 0 || rp < 0)
    throw std::runtime_error(path + ": line list needs event_date and report_date columns");
  std::vector<LineListRecord> out;
  out.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (static_cast<int>(row.size()) <= std::max(ev, rp))
      throw std::runtime_error(path + ": row " + std::to_string(i + 1) + " is too short");
    LineListRecord r;
    try {
      r.event_time = Date::parse_iso(row[ev]);
      r.report_time = Date::parse_iso(row[rp]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ": row " + std::to_string(i + 1) + ": " + e.what());
    }
    if (rg >= 0 && static_cast<int>(row.size()) > rg) r.region = row[rg];
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_linelist_csv(const std::string& path,
                               const std::vector<LineListRecord>& records, bool with_region) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << (with_region ? "event_date,report_date,region\n" : "event_date,report_date\n");
  for (const auto& r : records) {
    out << r.event_time.iso() << ',' << r.report_time.iso();
    if (with_region) out << ',' << r.region;
    out << '\n';
  }
}

// Adjacency CSV: (S+1) x (S+1) with region identifiers in the first row and
// first column; the corner cell is ignored.
inline RegionMap read_adjacency_csv(const std::string& path) {
  const auto table = csv::read_file(path);
  if (table.header.size() < 2) throw std::runtime_error(path + ": adjacency header too short");
  RegionMap map;
  map.regions.assign(table.header.begin() + 1, table.header.end());
  const int n = map.size();
  if (static_cast<int>(table.rows.size()) != n)
    throw std::runtime_error(path + ": adjacency needs one row per region");
  map.adjacency.assign(n, std::vector<int>(n, 0));
  for (int i = 0; i < n; ++i) {
    const auto& row = table.rows[i];
    if (static_cast<int>(row.size()) != n + 1)
      throw std::runtime_error(path + ": adjacency row " + std::to_string(i + 1) +
                               " has the wrong width");
    if (row[0] != map.regions[i])
      throw std::runtime_error(path + ": row label '" + row[0] +
                               "' does not match header order");
    for (int j = 0; j < n; ++j)
      map.adjacency[i][j] = static_cast<int>(csv::parse_int(row[j + 1]));
  }
  return map;
}

inline void write_adjacency_csv(const std::string& path, const RegionMap& map) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "region";
  for (const auto& r : map.regions) out << ',' << r;
  out << '\n';
  for (int i = 0; i < map.size(); ++i) {
    out << map.regions[i];
    for (int j = 0; j < map.size(); ++j) out << ',' << map.adjacency[i][j];
    out << '\n';
  }
}

inline nlohmann::json triangle_to_json(const ReportingTriangle& tri) {
  nlohmann::json j;
  j["T"] = tri.T;
  j["D"] = tri.D;
  j["S"] = tri.S;
  j["unit"] = tri.unit;
  j["as_of"] = tri.as_of.iso();
  j["regions"] = tri.regions;
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < tri.T; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int d = 0; d <= tri.D; ++d) {
      if (!tri.observed(t, d)) {
        row.push_back(nullptr);
      } else if (tri.S == 1) {
        row.push_back(tri.count(t, d, 0));
      } else {
        nlohmann::json per_s = nlohmann::json::array();
        for (int s = 0; s < tri.S; ++s) per_s.push_back(tri.count(t, d, s));
        row.push_back(std::move(per_s));
      }
    }
    rows.push_back(std::move(row));
  }
  j["counts"] = std::move(rows);
  nlohmann::json ov = nlohmann::json::array();
  for (int t = 0; t < tri.T; ++t) {
    if (tri.S == 1) {
      ov.push_back(tri.overflow[t]);
    } else {
      nlohmann::json per_s = nlohmann::json::array();
      for (int s = 0; s < tri.S; ++s)
        per_s.push_back(tri.overflow[static_cast<std::size_t>(t) * tri.S + s]);
      ov.push_back(std::move(per_s));
    }
  }
  j["overflow"] = std::move(ov);
  return j;
}

inline ReportingTriangle triangle_from_json(const nlohmann::json& j) {
  ReportingTriangle tri;
  tri.T = j.at("T").get<int>();
  tri.D = j.at("D").get<int>();
  tri.S = j.at("S").get<int>();
  tri.unit = j.at("unit").get<std::string>();
  tri.as_of = Date::parse_iso(j.at("as_of").get<std::string>());
  tri.regions = j.at("regions").get<std::vector<std::string>>();
  if (tri.T < 1 || tri.D < 1 || tri.S < 1)
    throw std::invalid_argument("triangle dimensions must be positive");
  tri.counts.assign(static_cast<std::size_t>(tri.T) * (tri.D + 1) * tri.S, 0);
  tri.mask.assign(tri.counts.size(), 0);
  tri.overflow.assign(static_cast<std::size_t>(tri.T) * tri.S, 0);

  const auto& rows = j.at("counts");
  if (static_cast<int>(rows.size()) != tri.T)
    throw std::invalid_argument("counts needs one row per time unit");
  int frontier = 0;
  for (int t = 0; t < tri.T; ++t) {
    const auto& row = rows.at(t);
    if (static_cast<int>(row.size()) != tri.D + 1)
      throw std::invalid_argument("counts row " + std::to_string(t + 1) +
                                  " needs D+1 entries");
    for (int d = 0; d <= tri.D; ++d) {
      const auto& v = row.at(d);
      if (v.is_null()) continue;
      frontier = std::max(frontier, t + 1 + d);
      if (tri.S == 1) {
        tri.counts[tri.cell(t, d, 0)] = v.get<long long>();
        tri.mask[tri.cell(t, d, 0)] = 1;
      } else {
        if (static_cast<int>(v.size()) != tri.S)
          throw std::invalid_argument("count cell needs one entry per region");
        for (int s = 0; s < tri.S; ++s) {
          tri.counts[tri.cell(t, d, s)] = v.at(s).get<long long>();
          tri.mask[tri.cell(t, d, s)] = 1;
        }
      }
    }
  }
  tri.horizon = frontier;

  const auto& ov = j.at("overflow");
  if (static_cast<int>(ov.size()) != tri.T)
    throw std::invalid_argument("overflow needs one entry per time unit");
  for (int t = 0; t < tri.T; ++t) {
    if (tri.S == 1) {
      tri.overflow[t] = ov.at(t).get<long long>();
    } else {
      if (static_cast<int>(ov.at(t).size()) != tri.S)
        throw std::invalid_argument("overflow entry needs one value per region");
      for (int s = 0; s < tri.S; ++s)
        tri.overflow[static_cast<std::size_t>(t) * tri.S + s] = ov.at(t).at(s).get<long long>();
    }
  }
  validate_triangle(tri);
  return tri;
}

inline void write_triangle_json(const std::string& path, const ReportingTriangle& tri) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << triangle_to_json(tri).dump(2) << '\n';
}

inline ReportingTriangle read_triangle_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
    return triangle_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace delaycast
