#pragma once

// Posterior predictive completion of the run-off triangle. For every kept
// posterior draw and every unobserved cell one count is simulated from the
// Negative Binomial at that draw's mean; row totals, quantile summaries, and
// threshold exceedance probabilities follow by arithmetic on the draws.
//
// Each (draw, cell) pair owns its own RNG substream keyed on stable indices,
// so the simulation order is immaterial and results are reproducible across
// any parallel or reordered execution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "delaycast/csv.hpp"
#include "delaycast/inference.hpp"
#include "delaycast/model.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

namespace detail {
inline constexpr std::uint64_t kPredictStreamTag = 0x70726564ULL;
}

struct PredictiveDraws {
  int T = 0, D = 0, S = 1;
  int n_draws = 0;
  std::vector<int> cell_t, cell_d, cell_s;  // unobserved cells, enumeration order
  std::vector<long long> draws;             // n_draws x cells, draw-major

  std::size_t n_cells() const { return cell_t.size(); }
  long long at(int m, std::size_t c) const {
    return draws[static_cast<std::size_t>(m) * n_cells() + c];
  }
};

// One NegBin draw per posterior draw per unobserved cell. The stream key
// uses the flat cell index within the triangle, so enumeration order cannot
// influence any value.
inline PredictiveDraws predict_cells(const PosteriorSamples& samples,
                                     const ReportingTriangle& tri, const CovariateArray* X,
                                     std::optional<std::uint64_t> seed = {}) {
  const auto& spec = samples.spec;
  if (tri.T != spec.T || tri.D != spec.D || tri.S != spec.S)
    throw std::invalid_argument("triangle does not match the fitted model dimensions");
  if (X) check_covariates(*X, spec);
  if (!X && spec.covariate_count != 0)
    throw std::invalid_argument("model expects covariates but none were given");
  const std::uint64_t base = seed ? *seed : samples.config.seed;

  PredictiveDraws out;
  out.T = spec.T;
  out.D = spec.D;
  out.S = spec.S;
  out.n_draws = static_cast<int>(samples.draws.size());
  for (int t = 0; t < spec.T; ++t)
    for (int d = 0; d <= spec.D; ++d) {
      if (tri.observed(t, d)) continue;
      for (int s = 0; s < spec.S; ++s) {
        out.cell_t.push_back(t);
        out.cell_d.push_back(d);
        out.cell_s.push_back(s);
      }
    }
  out.draws.resize(static_cast<std::size_t>(out.n_draws) * out.n_cells());
  for (int m = 0; m < out.n_draws; ++m) {
    const auto& st = samples.draws[m];
    for (std::size_t c = 0; c < out.n_cells(); ++c) {
      const int t = out.cell_t[c], d = out.cell_d[c], s = out.cell_s[c];
      const double eta = log_mean(st, spec, X, t, d, s);
      const double lambda = std::exp(eta);
      if (!std::isfinite(lambda))
        throw std::runtime_error("predictive mean overflowed at cell (" + std::to_string(t + 1) +
                                 "," + std::to_string(d) + ")");
      Rng rng = Rng::stream(base, {detail::kPredictStreamTag, static_cast<std::uint64_t>(m),
                                   static_cast<std::uint64_t>(tri.cell(t, d, s))});
      out.draws[static_cast<std::size_t>(m) * out.n_cells() + c] =
          rng.negbin(std::max(lambda, 1e-300), st.phi);
    }
  }
  return out;
}

struct NowcastTarget {
  int t = 0;   // time row, 0-based
  int s = 0;   // region index; -1 marks the aggregate over all regions
  long long observed_partial = 0;
  std::vector<long long> draws;    // one completed total per posterior draw
  double mean = 0.0;
  std::vector<double> quantiles;   // aligned with NowcastResult::probs
  double exceedance = std::numeric_limits<double>::quiet_NaN();
};

struct NowcastResult {
  std::vector<double> probs{0.025, 0.5, 0.975};
  std::optional<double> threshold;
  std::vector<NowcastTarget> targets;

  const NowcastTarget* find(int t, int s) const {
    for (const auto& tgt : targets)
      if (tgt.t == t && tgt.s == s) return &tgt;
    return nullptr;
  }
};

// Empirical quantile by the inverse-CDF convention: the ceil(p*M)-th order
// statistic.
inline double draw_quantile(std::vector<long long> draws, double p) {
  if (draws.empty()) throw std::invalid_argument("quantile of an empty draw set");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile level outside [0, 1]");
  std::sort(draws.begin(), draws.end());
  const auto m = static_cast<double>(draws.size());
  auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(p * m)));
  idx = std::min(idx, draws.size());
  return static_cast<double>(draws[idx - 1]);
}

// Completed totals N_t for the censored rows t = T-D+1..T (1-based). With
// several regions, per-region targets come first, then the aggregate (s=-1).
inline NowcastResult nowcast_totals(const PredictiveDraws& pred, const ReportingTriangle& tri,
                                    std::optional<double> threshold = {},
                                    std::vector<double> probs = {0.025, 0.5, 0.975}) {
  if (pred.T != tri.T || pred.D != tri.D || pred.S != tri.S)
    throw std::invalid_argument("predictive draws do not match the triangle");
  for (std::size_t c = 0; c < pred.n_cells(); ++c)
    if (tri.observed(pred.cell_t[c], pred.cell_d[c]))
      throw std::invalid_argument("predictive draw supplied for an observed cell");
  std::size_t expected = 0;
  for (int t = 0; t < tri.T; ++t)
    for (int d = 0; d <= tri.D; ++d)
      if (!tri.observed(t, d)) expected += tri.S;
  if (expected != pred.n_cells())
    throw std::invalid_argument("predictive draws do not cover every unobserved cell");
  if (pred.n_draws < 1)
    throw std::invalid_argument("nowcast needs at least one posterior draw");
  if (threshold && !(*threshold > 0.0))
    throw std::invalid_argument("threshold must be positive");
  for (double p : probs)
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile level outside [0, 1]");

  NowcastResult out;
  out.probs = probs;
  out.threshold = threshold;
  const int first_row = std::max(0, tri.T - tri.D);
  const int M = pred.n_draws;

  auto finish = [&](NowcastTarget& tgt) {
    double sum = 0.0;
    long long above = 0;
    for (long long v : tgt.draws) {
      sum += static_cast<double>(v);
      if (threshold && static_cast<double>(v) > *threshold) ++above;
    }
    tgt.mean = tgt.draws.empty() ? static_cast<double>(tgt.observed_partial)
                                 : sum / static_cast<double>(tgt.draws.size());
    for (double p : probs) tgt.quantiles.push_back(draw_quantile(tgt.draws, p));
    if (threshold)
      tgt.exceedance = static_cast<double>(above) / static_cast<double>(tgt.draws.size());
  };

  for (int t = first_row; t < tri.T; ++t) {
    std::vector<NowcastTarget> row(tri.S);
    for (int s = 0; s < tri.S; ++s) {
      row[s].t = t;
      row[s].s = s;
      for (int d = 0; d <= tri.D; ++d)
        if (tri.observed(t, d)) row[s].observed_partial += tri.count(t, d, s);
      row[s].draws.assign(M, row[s].observed_partial);
    }
    for (std::size_t c = 0; c < pred.n_cells(); ++c) {
      if (pred.cell_t[c] != t) continue;
      auto& tgt = row[pred.cell_s[c]];
      for (int m = 0; m < M; ++m) tgt.draws[m] += pred.at(m, c);
    }
    NowcastTarget agg;
    agg.t = t;
    agg.s = -1;
    if (tri.S > 1) {
      agg.draws.assign(M, 0);
      for (const auto& tgt : row) {
        agg.observed_partial += tgt.observed_partial;
        for (int m = 0; m < M; ++m) agg.draws[m] += tgt.draws[m];
      }
    }
    for (auto& tgt : row) {
      finish(tgt);
      out.targets.push_back(std::move(tgt));
    }
    if (tri.S > 1) {
      finish(agg);
      out.targets.push_back(std::move(agg));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rolling protocol: rebuild, refit, nowcast at each as-of date.

struct RollingStep {
  Date as_of;
  ReportingTriangle tri;
  NowcastResult nowcast;
};

inline std::vector<RollingStep> rolling_nowcast(const std::vector<LineListRecord>& records,
                                                int D, ModelSpec spec, SamplerConfig cfg,
                                                const std::vector<Date>& dates,
                                                const RegionMap* map = nullptr,
                                                std::optional<double> threshold = {},
                                                const BuildOptions& opts = {}) {
  if (dates.empty()) throw std::invalid_argument("rolling nowcast needs at least one date");
  for (std::size_t i = 1; i < dates.size(); ++i)
    if (!(dates[i - 1] < dates[i]))
      throw std::invalid_argument("as-of dates must be strictly increasing");
  if (spec.covariate_count != 0)
    throw std::invalid_argument("rolling refits do not support covariates");

  std::vector<RollingStep> out;
  for (const Date& date : dates) {
    RollingStep step;
    step.as_of = date;
    step.tri = build_triangle(records, D, date, map, opts);
    spec.T = step.tri.T;
    spec.S = step.tri.S;
    validate_spec(spec);
    const auto samples = run_mcmc(step.tri, spec, nullptr, map, cfg);
    const auto pred = predict_cells(samples, step.tri, nullptr);
    step.nowcast = nowcast_totals(pred, step.tri, threshold);
    out.push_back(std::move(step));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output formats

inline void write_nowcast_csv(const std::string& path, const NowcastResult& result,
                              const std::vector<std::string>& regions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  // Columns follow the requested probabilities: the median (when asked for)
  // sits next to the mean, the rest appear in ascending order as q<percent>.
  std::vector<std::size_t> order;
  std::size_t median_idx = result.probs.size();
  for (std::size_t i = 0; i < result.probs.size(); ++i) {
    if (result.probs[i] == 0.5 && median_idx == result.probs.size())
      median_idx = i;
    else
      order.push_back(i);
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return result.probs[a] < result.probs[b]; });
  out << "t,s,observed_partial,mean";
  if (median_idx < result.probs.size()) out << ",median";
  for (std::size_t i : order) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%g", result.probs[i] * 100.0);
    out << ',' << buf;
  }
  out << ",exceedance\n";
  for (const auto& tgt : result.targets) {
    const std::string label =
        tgt.s < 0 ? "all" : regions[static_cast<std::size_t>(tgt.s)];
    out << (tgt.t + 1) << ',' << csv::quote(label) << ',' << tgt.observed_partial << ','
        << csv::format_double(tgt.mean);
    if (median_idx < result.probs.size())
      out << ',' << csv::format_double(tgt.quantiles[median_idx]);
    for (std::size_t i : order) out << ',' << csv::format_double(tgt.quantiles[i]);
    out << ',';
    if (result.threshold) out << csv::format_double(tgt.exceedance);
    out << '\n';
  }
}

// Draw-level persistence: one row per posterior draw, one column per cell.
inline void write_cell_draws_csv(const std::string& path, const PredictiveDraws& pred) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "draw";
  for (std::size_t c = 0; c < pred.n_cells(); ++c) {
    std::string name = "n[" + std::to_string(pred.cell_t[c] + 1) + "," +
                       std::to_string(pred.cell_d[c]);
    if (pred.S > 1) name += "," + std::to_string(pred.cell_s[c] + 1);
    name += "]";
    out << ',' << csv::quote(name);
  }
  out << '\n';
  for (int m = 0; m < pred.n_draws; ++m) {
    out << (m + 1);
    for (std::size_t c = 0; c < pred.n_cells(); ++c) out << ',' << pred.at(m, c);
    out << '\n';
  }
}

}  // namespace delaycast
