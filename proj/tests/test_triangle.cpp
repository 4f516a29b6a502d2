#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

#include "delaycast/rng.hpp"
#include "delaycast/triangle.hpp"

using namespace delaycast;

namespace {

const Date kSunday(2011, 1, 2);  // a known Sunday, used as week anchor

CountCube small_cube(int T, int D, long long fill) {
  CountCube cube;
  cube.T = T;
  cube.D = D;
  cube.as_of = kSunday.plus_days(7 * (T - 1));
  cube.counts.assign(static_cast<std::size_t>(T) * (D + 1), fill);
  return cube;
}

}  // namespace

TEST_CASE("single record reported in its own week", "[triangle]") {
  std::vector<LineListRecord> recs{{kSunday, kSunday, ""}};
  auto tri = build_triangle(recs, 3, kSunday);
  CHECK(tri.T == 1);
  CHECK(tri.D == 3);
  CHECK(tri.S == 1);
  CHECK(tri.count(0, 0) == 1);
  long long total = std::accumulate(tri.counts.begin(), tri.counts.end(), 0LL);
  CHECK(total == 1);
  CHECK(tri.observed(0, 0));
  for (int d = 1; d <= 3; ++d) CHECK_FALSE(tri.observed(0, d));
  auto warnings = validate_triangle(tri);
  CHECK_FALSE(warnings.empty());  // T <= D is flagged, not fatal
}

TEST_CASE("delay beyond D lands in overflow", "[triangle]") {
  std::vector<LineListRecord> recs{
      {kSunday, kSunday, ""},                          // week 1, delay 0
      {kSunday, kSunday.plus_days(7 * 11), ""},        // delay 11
  };
  auto tri = build_triangle(recs, 10, kSunday.plus_days(7 * 11));
  CHECK(tri.T == 12);
  CHECK(tri.count(0, 0) == 1);
  long long total = std::accumulate(tri.counts.begin(), tri.counts.end(), 0LL);
  CHECK(total == 1);
  CHECK(tri.overflow[0] == 1);
}

TEST_CASE("ingestion conserves records against the generating truth", "[triangle]") {
  // Events are laid out on a known week grid, so the expected cell of every
  // record is fixed by construction rather than recomputed with library code.
  Rng rng(20260816);
  const int weeks = 20, D = 6, max_delay = 15;
  std::vector<LineListRecord> recs;
  std::vector<long long> truth_totals(weeks, 0);
  std::vector<std::vector<long long>> truth_cells(weeks, std::vector<long long>(max_delay + 1, 0));
  for (int i = 0; i < 1000; ++i) {
    const int w = static_cast<int>(rng.uniform(0.0, weeks));
    const int delta = static_cast<int>(rng.uniform(0.0, max_delay + 1));
    const int dow_e = static_cast<int>(rng.uniform(0.0, 7.0));
    int dow_r = static_cast<int>(rng.uniform(0.0, 7.0));
    if (delta == 0 && dow_r < dow_e) dow_r = dow_e;
    LineListRecord r;
    r.event_time = kSunday.plus_days(7 * w + dow_e);
    r.report_time = kSunday.plus_days(7 * (w + delta) + dow_r);
    recs.push_back(r);
    ++truth_totals[w];
    ++truth_cells[w][delta];
  }
  const Date as_of = kSunday.plus_days(7 * (weeks + max_delay + 1));
  auto tri = build_triangle(recs, D, as_of);
  REQUIRE(tri.T == weeks + max_delay + 2);
  CHECK(tri.dropped_future_reports == 0);

  for (int t = 0; t < weeks; ++t) {
    long long row = tri.overflow[t];
    for (int d = 0; d <= D; ++d) {
      row += tri.count(t, d);
      CHECK(tri.count(t, d) == truth_cells[t][d]);
    }
    CHECK(row == truth_totals[t]);
  }
  long long grand = std::accumulate(tri.counts.begin(), tri.counts.end(), 0LL) +
                    std::accumulate(tri.overflow.begin(), tri.overflow.end(), 0LL);
  CHECK(grand == 1000);

  SECTION("record order does not matter") {
    auto shuffled = recs;
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform(0.0, double(i)))]);
    auto tri2 = build_triangle(shuffled, D, as_of);
    CHECK(tri2.counts == tri.counts);
    CHECK(tri2.overflow == tri.overflow);
    CHECK(tri2.T == tri.T);
  }
}

TEST_CASE("builder rejects malformed input", "[triangle]") {
  std::vector<LineListRecord> bad{{kSunday.plus_days(3), kSunday, ""}};
  CHECK_THROWS_WITH(build_triangle(bad, 5, kSunday.plus_days(10)),
                    Catch::Matchers::ContainsSubstring("record 0"));
  CHECK_THROWS_AS(build_triangle({}, 5, kSunday), std::invalid_argument);
  std::vector<LineListRecord> one{{kSunday, kSunday, ""}};
  CHECK_THROWS_AS(build_triangle(one, 0, kSunday), std::invalid_argument);

  RegionMap map{{"a", "b"}, {{0, 1}, {1, 0}}};
  std::vector<LineListRecord> labelled{{kSunday, kSunday, "c"}};
  CHECK_THROWS_WITH(build_triangle(labelled, 2, kSunday, &map),
                    Catch::Matchers::ContainsSubstring("unknown region"));
  // Without a map the labels are ignored and everything pools.
  auto pooled = build_triangle(labelled, 2, kSunday);
  CHECK(pooled.S == 1);
  CHECK(pooled.count(0, 0) == 1);
}

TEST_CASE("records reported after as_of are dropped and counted", "[triangle]") {
  std::vector<LineListRecord> recs{
      {kSunday, kSunday, ""},
      {kSunday, kSunday.plus_days(30), ""},
  };
  auto tri = build_triangle(recs, 5, kSunday.plus_days(7));
  CHECK(tri.T == 2);
  CHECK(tri.dropped_future_reports == 1);
  long long total = std::accumulate(tri.counts.begin(), tri.counts.end(), 0LL);
  CHECK(total == 1);
}

TEST_CASE("week start day shifts aggregation", "[triangle]") {
  // Event on a Sunday, report next day (Monday). Sunday weeks keep them in
  // one week; Monday weeks put the report one week later.
  std::vector<LineListRecord> recs{{kSunday, kSunday.plus_days(1), ""}};
  auto sun = build_triangle(recs, 3, kSunday.plus_days(6));
  CHECK(sun.count(0, 0) == 1);
  BuildOptions monday;
  monday.week_start = Weekday::monday;
  auto mon = build_triangle(recs, 3, kSunday.plus_days(6), nullptr, monday);
  CHECK(mon.T == 2);
  CHECK(mon.count(0, 1) == 1);
  CHECK(mon.unit == "week:monday");
}

TEST_CASE("marginal totals", "[triangle]") {
  auto cube = small_cube(14, 2, 0);
  cube.counts[cube.cell(0, 0, 0)] = 3;
  cube.counts[cube.cell(0, 1, 0)] = 2;
  cube.counts[cube.cell(0, 2, 0)] = 1;
  cube.counts[cube.cell(13, 0, 0)] = 29;
  cube.counts[cube.cell(13, 1, 0)] = 7;  // masked out by the snapshot
  auto tri = censor(cube, 14);
  auto totals = marginal_totals(tri);
  CHECK(totals[0].observed_partial == 6);
  CHECK(totals[0].fully_observed);
  CHECK(totals[13].observed_partial == 29);
  CHECK_FALSE(totals[13].fully_observed);
  // Last fully observed row is T - D.
  CHECK(totals[11].fully_observed);
  CHECK_FALSE(totals[12].fully_observed);
}

TEST_CASE("marginal totals match a naive recount", "[triangle]") {
  Rng rng(7);
  CountCube cube = small_cube(9, 4, 0);
  for (auto& c : cube.counts) c = static_cast<long long>(rng.uniform(0.0, 40.0));
  auto tri = censor(cube, 9);
  auto totals = marginal_totals(tri);
  for (int t = 0; t < tri.T; ++t) {
    long long naive = 0;
    for (int d = 0; d <= tri.D; ++d)
      if (t + 1 + d <= tri.T) naive += cube.count(t, d);
    CHECK(totals[t].observed_partial == naive);
    CHECK(totals[t].fully_observed == (t + 1 <= tri.T - tri.D));
  }
}

TEST_CASE("censoring geometry", "[triangle]") {
  auto tri = censor(small_cube(10, 3, 1), 10);
  int hidden = 0;
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d)
      if (!tri.observed(t, d)) ++hidden;
  CHECK(hidden == tri.D * (tri.D + 1) / 2);

  SECTION("late snapshots complete the triangle") {
    auto full = censor(small_cube(10, 3, 1), 13);
    CHECK(full.T == 10);
    CHECK(full.horizon == 13);
    CHECK(std::count(full.mask.begin(), full.mask.end(), 1) ==
          static_cast<long long>(full.n_cells()));
    auto totals = marginal_totals(full);
    CHECK(totals[9].fully_observed);
  }
  SECTION("early snapshots drop trailing weeks") {
    auto early = censor(small_cube(10, 3, 1), 6);
    CHECK(early.T == 6);
    CHECK(early.horizon == 6);
    CHECK(early.as_of == kSunday.plus_days(7 * 5));
  }
}

TEST_CASE("triangle validation catches broken shapes", "[triangle]") {
  auto tri = censor(small_cube(6, 2, 3), 6);
  SECTION("count in a hidden cell") {
    tri.counts[tri.cell(5, 2, 0)] = 4;
    CHECK_THROWS_AS(validate_triangle(tri), std::invalid_argument);
  }
  SECTION("negative count") {
    tri.counts[tri.cell(0, 0, 0)] = -1;
    CHECK_THROWS_AS(validate_triangle(tri), std::invalid_argument);
  }
  SECTION("mask drift") {
    tri.mask[tri.cell(5, 0, 0)] = 0;
    CHECK_THROWS_AS(validate_triangle(tri), std::invalid_argument);
  }
  SECTION("horizon out of range") {
    tri.horizon = 3;
    CHECK_THROWS_AS(validate_triangle(tri), std::invalid_argument);
  }
}

TEST_CASE("adjacency validation", "[triangle]") {
  RegionMap pair{{"a", "b"}, {{0, 1}, {1, 0}}};
  auto diag = validate_adjacency(pair);
  CHECK(diag.symmetric);
  CHECK(diag.components == 1);
  CHECK(diag.isolated.empty());

  RegionMap self{{"a", "b"}, {{1, 0}, {0, 0}}};
  CHECK_THROWS_WITH(validate_adjacency(self),
                    Catch::Matchers::ContainsSubstring("diagonal"));
  RegionMap frac{{"a", "b"}, {{0, 2}, {2, 0}}};
  CHECK_THROWS_AS(validate_adjacency(frac), std::invalid_argument);
  RegionMap ragged{{"a", "b"}, {{0, 1}}};
  CHECK_THROWS_AS(validate_adjacency(ragged), std::invalid_argument);

  RegionMap asym{{"a", "b", "c"}, {{0, 1, 0}, {0, 0, 0}, {0, 0, 0}}};
  auto d2 = validate_adjacency(asym);
  CHECK_FALSE(d2.symmetric);
}

TEST_CASE("chain graph diagnostics match a traversal oracle", "[triangle]") {
  const int n = 22;
  RegionMap chain;
  chain.adjacency.assign(n, std::vector<int>(n, 0));
  for (int i = 0; i < n; ++i) {
    chain.regions.push_back("r" + std::to_string(i + 1));
    if (i + 1 < n) chain.adjacency[i][i + 1] = chain.adjacency[i + 1][i] = 1;
  }
  auto diag = validate_adjacency(chain);
  CHECK(diag.components == 1);
  CHECK(std::count(diag.degrees.begin(), diag.degrees.end(), 1) == 2);
  CHECK(diag.isolated.empty());

  // Oracle: plain breadth-first traversal over the same matrix.
  std::vector<int> seen(n, 0);
  std::vector<int> queue{0};
  seen[0] = 1;
  while (!queue.empty()) {
    int i = queue.back();
    queue.pop_back();
    for (int j = 0; j < n; ++j)
      if (chain.adjacency[i][j] && !seen[j]) {
        seen[j] = 1;
        queue.push_back(j);
      }
  }
  CHECK(std::count(seen.begin(), seen.end(), 1) == n);

  SECTION("cutting one edge splits the graph") {
    chain.adjacency[10][11] = chain.adjacency[11][10] = 0;
    auto cut = validate_adjacency(chain);
    CHECK(cut.components == 2);
  }
}

TEST_CASE("triangle json round trip", "[triangle][io]") {
  Rng rng(99);
  auto cube = small_cube(8, 3, 0);
  for (auto& c : cube.counts) c = static_cast<long long>(rng.uniform(0.0, 25.0));
  auto tri = censor(cube, 8);
  tri.overflow[2] = 5;

  auto j = triangle_to_json(tri);
  auto back = triangle_from_json(j);
  CHECK(back.T == tri.T);
  CHECK(back.D == tri.D);
  CHECK(back.S == tri.S);
  CHECK(back.horizon == tri.horizon);
  CHECK(back.as_of == tri.as_of);
  CHECK(back.counts == tri.counts);
  CHECK(back.mask == tri.mask);
  CHECK(back.overflow == tri.overflow);
  CHECK(back.dropped_future_reports == 0);
  CHECK(triangle_to_json(back) == j);

  SECTION("ragged censoring is rejected") {
    j["counts"][0][3] = nullptr;  // cell (1, D) is observed when T > D
    CHECK_THROWS_AS(triangle_from_json(j), std::invalid_argument);
  }
  SECTION("missing field is rejected") {
    j.erase("overflow");
    CHECK_THROWS_AS(triangle_from_json(j), nlohmann::json::exception);
  }
}

TEST_CASE("regional triangle json round trip", "[triangle][io]") {
  CountCube cube;
  cube.T = 5;
  cube.D = 2;
  cube.S = 3;
  cube.as_of = kSunday.plus_days(28);
  cube.regions = {"north", "mid", "south"};
  cube.counts.assign(5 * 3 * 3, 0);
  Rng rng(3);
  for (auto& c : cube.counts) c = static_cast<long long>(rng.uniform(0.0, 12.0));
  auto tri = censor(cube, 5);

  auto back = triangle_from_json(triangle_to_json(tri));
  CHECK(back.regions == tri.regions);
  CHECK(back.counts == tri.counts);
  CHECK(back.overflow == tri.overflow);
}

TEST_CASE("file io round trips", "[triangle][io]") {
  std::vector<LineListRecord> recs{
      {kSunday, kSunday.plus_days(2), "north"},
      {kSunday.plus_days(8), kSunday.plus_days(20), "south"},
  };
  const std::string ll = "build_linelist_rt.csv";
  write_linelist_csv(ll, recs, true);
  auto got = read_linelist_csv(ll);
  REQUIRE(got.size() == 2);
  CHECK(got[0].event_time == recs[0].event_time);
  CHECK(got[1].report_time == recs[1].report_time);
  CHECK(got[1].region == "south");

  RegionMap map{{"north", "south"}, {{0, 1}, {1, 0}}};
  const std::string adj = "build_adj_rt.csv";
  write_adjacency_csv(adj, map);
  auto mback = read_adjacency_csv(adj);
  CHECK(mback.regions == map.regions);
  CHECK(mback.adjacency == map.adjacency);

  const std::string tj = "build_tri_rt.json";
  auto tri = build_triangle(recs, 3, kSunday.plus_days(21), &map);
  write_triangle_json(tj, tri);
  auto tback = read_triangle_json(tj);
  CHECK(tback.counts == tri.counts);
  CHECK(tback.regions == tri.regions);
  std::remove(ll.c_str());
  std::remove(adj.c_str());
  std::remove(tj.c_str());
}
