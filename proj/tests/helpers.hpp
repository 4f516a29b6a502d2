#pragma once

// Builders for synthetic triangles and region maps shared across test files.

#include <string>
#include <vector>

#include "delaycast/model.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/triangle.hpp"

namespace helpers {

// Assembles a triangle directly from a flat count vector (t, d, s layout).
// Counts must be zero outside the observation frontier implied by `horizon`.
inline delaycast::ReportingTriangle make_triangle(int T, int D, int S, int horizon,
                                                  std::vector<long long> counts) {
  delaycast::ReportingTriangle tri;
  tri.T = T;
  tri.D = D;
  tri.S = S;
  tri.horizon = horizon;
  tri.as_of = delaycast::Date(2021, 1, 2);
  tri.regions.clear();
  if (S == 1) {
    tri.regions.push_back("all");
  } else {
    for (int s = 0; s < S; ++s) tri.regions.push_back("r" + std::to_string(s + 1));
  }
  tri.counts = std::move(counts);
  tri.mask.assign(tri.n_cells(), 0);
  tri.overflow.assign(static_cast<std::size_t>(T) * S, 0);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d <= D; ++d)
      if (tri.observed(t, d))
        for (int s = 0; s < S; ++s) tri.mask[tri.cell(t, d, s)] = 1;
  return tri;
}

struct BaseScenario {
  int T = 10;
  int D = 2;
  int horizon = 0;  // defaults to T when <= 0
  double mu = 2.0;
  double alpha_sd = 0.25;          // random-walk step scale
  std::vector<double> beta;        // length D+1; empty = linear decay
  double phi = 10.0;
  std::uint64_t seed = 1234;
};

struct BaseDraw {
  delaycast::ReportingTriangle tri;
  std::vector<double> alpha;
  std::vector<double> beta;
};

// Single-region dataset drawn from the generating model; the first walk
// element is scaled like an ordinary step so the level stays near mu.
inline BaseDraw simulate_base(const BaseScenario& sc) {
  const int horizon = sc.horizon > 0 ? sc.horizon : sc.T;
  delaycast::Rng rng(sc.seed);
  BaseDraw out;
  out.alpha.resize(sc.T);
  double level = 0.0;
  for (int t = 0; t < sc.T; ++t) {
    level += sc.alpha_sd * rng.normal();
    out.alpha[t] = level;
  }
  out.beta = sc.beta;
  if (out.beta.empty()) {
    out.beta.resize(sc.D + 1);
    for (int d = 0; d <= sc.D; ++d) out.beta[d] = -0.8 * d;
  }
  std::vector<long long> counts(static_cast<std::size_t>(sc.T) * (sc.D + 1), 0);
  delaycast::ReportingTriangle shape = make_triangle(sc.T, sc.D, 1, horizon, counts);
  for (int t = 0; t < sc.T; ++t)
    for (int d = 0; d <= sc.D; ++d) {
      if (!shape.observed(t, d)) continue;
      const double lambda = std::exp(sc.mu + out.alpha[t] + out.beta[d]);
      counts[shape.cell(t, d, 0)] = rng.negbin(lambda, sc.phi);
    }
  out.tri = make_triangle(sc.T, sc.D, 1, horizon, std::move(counts));
  return out;
}

// Path graph r1 - r2 - ... - rS.
inline delaycast::RegionMap make_path_map(int S) {
  delaycast::RegionMap map;
  for (int s = 0; s < S; ++s) map.regions.push_back("r" + std::to_string(s + 1));
  map.adjacency.assign(S, std::vector<int>(S, 0));
  for (int s = 0; s + 1 < S; ++s) {
    map.adjacency[s][s + 1] = 1;
    map.adjacency[s + 1][s] = 1;
  }
  return map;
}

}  // namespace helpers
