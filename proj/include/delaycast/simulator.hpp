#pragma once

// Synthetic surveillance data drawn from the estimation model itself:
// effects come either from explicit values or from generative scales, an
// optional outbreak multiplies the mean over a window of weeks, and every
// cell is a negative binomial draw. Also hosts the end-to-end interval
// calibration experiment used to check nowcast coverage.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "delaycast/csv.hpp"

#include "delaycast/inference.hpp"
#include "delaycast/model.hpp"
#include "delaycast/nowcast.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/spatial.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

struct Outbreak {
  int start = 0;       // first affected week, 0-based
  int duration = 1;    // number of affected weeks
  double amplitude = 1.0;  // multiplies the mean of every affected cell
};

// Scales for effects drawn generatively. Walk blocks treat the first
// element as an ordinary step so the level stays near mu; the IAR scale is
// converted to a precision of 1/sd^2. A scale of zero leaves a block flat.
struct GenerativeHyperparams {
  double mu = 2.0;
  std::vector<double> gamma;  // explicit covariate coefficients
  double alpha_sd = 0.25;
  double beta_sd = 0.5;
  double alpha_ts_sd = 0.3;
  double beta_ds_sd = 0.3;
  double delta_ind_sd = 0.3;
  double delta_iar_sd = 0.3;
  double phi = 10.0;
};

struct SimulationScenario {
  ModelSpec spec;
  std::optional<ParameterState> truth;  // explicit effects; drawn when absent
  GenerativeHyperparams hyper;
  std::optional<Outbreak> outbreak;
  std::uint64_t seed = 1;
};

struct SimulationResult {
  CountCube cube;             // every (t, d, s) cell, nothing censored
  ParameterState truth;       // effects that generated the counts
  std::vector<double> lambda; // per cube cell, outbreak multiplier applied
};

inline void validate_scenario(const SimulationScenario& sc) {
  validate_spec(sc.spec);
  if (sc.truth) check_state(*sc.truth, sc.spec);
  if (sc.outbreak) {
    if (!(sc.outbreak->amplitude > 0.0) || !std::isfinite(sc.outbreak->amplitude))
      throw std::invalid_argument("outbreak amplitude must be positive");
    if (sc.outbreak->duration < 1)
      throw std::invalid_argument("outbreak duration must be at least one week");
    if (sc.outbreak->start < 0 || sc.outbreak->start >= sc.spec.T)
      throw std::invalid_argument("outbreak start lies outside the series");
  }
  if (!sc.truth) {
    const auto& h = sc.hyper;
    for (double sd : {h.alpha_sd, h.beta_sd, h.alpha_ts_sd, h.beta_ds_sd, h.delta_ind_sd,
                      h.delta_iar_sd})
      if (!(sd >= 0.0) || !std::isfinite(sd))
        throw std::invalid_argument("effect scales must be finite and nonnegative");
    if (!(h.phi > 0.0) || !std::isfinite(h.phi))
      throw std::invalid_argument("phi must be positive");
    if (!std::isfinite(h.mu)) throw std::invalid_argument("mu must be finite");
    if (!h.gamma.empty() && static_cast<int>(h.gamma.size()) != sc.spec.covariate_count)
      throw std::invalid_argument("gamma does not match the covariate count");
  }
}

namespace detail {

inline constexpr std::uint64_t kEffectStreamTag = 0x65666665ULL;     // effects
inline constexpr std::uint64_t kCellStreamTag = 0x63656c6cULL;       // counts
inline constexpr std::uint64_t kReplicateStreamTag = 0x726570ULL;    // replicate seeds
inline constexpr std::uint64_t kFitStreamTag = 0x666974ULL;          // sampler seeds

inline ParameterState draw_effects(const SimulationScenario& sc, const IarStructure* iar,
                                   Rng& rng) {
  const auto& spec = sc.spec;
  const auto& h = sc.hyper;
  ParameterState st = init_state(spec);
  st.mu = h.mu;
  if (!h.gamma.empty()) st.gamma = h.gamma;
  double level = 0.0;
  for (int t = 0; t < spec.T; ++t) {
    level += h.alpha_sd * rng.normal();
    st.alpha[t] = level;
  }
  level = 0.0;
  for (int d = 0; d <= spec.D; ++d) {
    level += h.beta_sd * rng.normal();
    st.beta[d] = level;
  }
  if (spec.has_alpha_ts() && h.alpha_ts_sd > 0.0) {
    st.tau_alpha_ts = 1.0 / (h.alpha_ts_sd * h.alpha_ts_sd);
    for (int s = 0; s < spec.S; ++s) {
      level = 0.0;
      for (int t = 0; t < spec.T; ++t) {
        level += h.alpha_ts_sd * rng.normal();
        st.alpha_ts[static_cast<std::size_t>(t) * spec.S + s] = level;
      }
    }
  }
  if (spec.has_beta_ds() && h.beta_ds_sd > 0.0) {
    st.tau_beta_ds = 1.0 / (h.beta_ds_sd * h.beta_ds_sd);
    for (int s = 0; s < spec.S; ++s) {
      level = 0.0;
      for (int d = 0; d <= spec.D; ++d) {
        level += h.beta_ds_sd * rng.normal();
        st.beta_ds[static_cast<std::size_t>(d) * spec.S + s] = level;
      }
    }
  }
  if (spec.has_delta_ind() && h.delta_ind_sd > 0.0) {
    st.tau_delta_ind = 1.0 / (h.delta_ind_sd * h.delta_ind_sd);
    for (int s = 0; s < spec.S; ++s) st.delta_ind[s] = h.delta_ind_sd * rng.normal();
  }
  if (spec.has_delta_iar() && h.delta_iar_sd > 0.0) {
    st.tau_delta_iar = 1.0 / (h.delta_iar_sd * h.delta_iar_sd);
    st.delta_iar = sample_iar(*iar, st.tau_delta_iar, rng);
  }
  if (h.alpha_sd > 0.0) st.tau_alpha = 1.0 / (h.alpha_sd * h.alpha_sd);
  if (h.beta_sd > 0.0) st.tau_beta = 1.0 / (h.beta_sd * h.beta_sd);
  st.phi = h.phi;
  return st;
}

}  // namespace detail

// Draws the complete uncensored dataset. The effect and count streams are
// split from the seed separately, so supplying the drawn truth back as an
// explicit state reproduces the same counts.
inline SimulationResult simulate(const SimulationScenario& sc, const RegionMap* map = nullptr,
                                 const CovariateArray* X = nullptr) {
  validate_scenario(sc);
  const auto& spec = sc.spec;
  if (X) check_covariates(*X, spec);
  if (!X && spec.covariate_count != 0)
    throw std::invalid_argument("model expects covariates but none were given");

  IarStructure iar;
  const IarStructure* iarp = nullptr;
  const bool needs_iar = !sc.truth && spec.has_delta_iar() && sc.hyper.delta_iar_sd > 0.0;
  if (needs_iar) {
    if (!map) throw std::invalid_argument("variant with an IAR block needs an adjacency matrix");
    if (map->size() != spec.S)
      throw std::invalid_argument("adjacency matrix does not match the region count");
    iar = build_iar(*map);
    iarp = &iar;
  }

  SimulationResult out;
  if (sc.truth) {
    out.truth = *sc.truth;
  } else {
    Rng effect_rng = Rng::stream(sc.seed, {detail::kEffectStreamTag});
    out.truth = detail::draw_effects(sc, iarp, effect_rng);
  }

  out.cube.T = spec.T;
  out.cube.D = spec.D;
  out.cube.S = spec.S;
  out.cube.as_of = Date(2020, 1, 5).plus_days(7 * (static_cast<std::int64_t>(spec.T) - 1));
  out.cube.regions.clear();
  if (map) {
    out.cube.regions = map->regions;
  } else if (spec.S == 1) {
    out.cube.regions.push_back("all");
  } else {
    for (int s = 0; s < spec.S; ++s) out.cube.regions.push_back("r" + std::to_string(s + 1));
  }
  out.cube.counts.assign(static_cast<std::size_t>(spec.T) * (spec.D + 1) * spec.S, 0);
  out.lambda.assign(out.cube.counts.size(), 0.0);

  const double log_amp = sc.outbreak ? std::log(sc.outbreak->amplitude) : 0.0;
  Rng cell_rng = Rng::stream(sc.seed, {detail::kCellStreamTag});
  for (int t = 0; t < spec.T; ++t) {
    const bool hit = sc.outbreak && t >= sc.outbreak->start &&
                     t < sc.outbreak->start + sc.outbreak->duration;
    for (int d = 0; d <= spec.D; ++d)
      for (int s = 0; s < spec.S; ++s) {
        double eta = log_mean(out.truth, spec, X, t, d, s);
        if (hit) eta += log_amp;
        if (!(eta <= 30.0))
          throw std::runtime_error("log-mean " + std::to_string(eta) + " at week " +
                                   std::to_string(t + 1) +
                                   " exceeds 30; rescale the scenario");
        const std::size_t c = out.cube.cell(t, d, s);
        out.lambda[c] = std::exp(eta);
        out.cube.counts[c] = cell_rng.negbin(out.lambda[c], out.truth.phi);
      }
  }
  return out;
}

// One record per simulated case. Week t events are dated first_week_start
// plus 7t days and reports land exactly d weeks later, so rebuilding a
// triangle at the end of week w reproduces censor(cube, w + 1).
inline std::vector<LineListRecord> simulated_records(const CountCube& cube,
                                                     Date first_week_start) {
  std::vector<LineListRecord> recs;
  for (int t = 0; t < cube.T; ++t) {
    const Date event = first_week_start.plus_days(7 * static_cast<std::int64_t>(t));
    for (int d = 0; d <= cube.D; ++d) {
      const Date report = event.plus_days(7 * static_cast<std::int64_t>(d));
      for (int s = 0; s < cube.S; ++s)
        for (long long k = 0; k < cube.count(t, d, s); ++k)
          recs.push_back({event, report, cube.regions[s]});
    }
  }
  return recs;
}

struct CoverageRow {
  int t = 0;   // 0-based week
  int s = 0;   // region index, -1 for the aggregate
  int replicates = 0;
  double coverage = 0.0;
  double mean_width = 0.0;
  double mean_abs_error = 0.0;
};

struct CoverageTable {
  double level = 0.95;
  int requested = 0;
  int completed = 0;
  std::vector<std::string> failures;  // skipped replicates, one message each
  std::vector<CoverageRow> rows;
};

// Simulate, censor at the last week, refit and nowcast `replicates` times,
// then score the nominal intervals against the known totals. Failed
// replicates are recorded and skipped.
inline CoverageTable coverage_experiment(const SimulationScenario& sc, int replicates,
                                         const SamplerConfig& cfg, double level = 0.95,
                                         const RegionMap* map = nullptr) {
  if (replicates < 1) throw std::invalid_argument("replicates must be at least 1");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("interval level must lie strictly between 0 and 1");
  validate_scenario(sc);
  validate_config(cfg);

  CoverageTable tab;
  tab.level = level;
  tab.requested = replicates;
  const double lo_p = 0.5 * (1.0 - level);
  const std::vector<double> probs = {lo_p, 0.5, 1.0 - lo_p};

  for (int r = 0; r < replicates; ++r) {
    try {
      SimulationScenario rep = sc;
      rep.seed = Rng::stream(sc.seed, {detail::kReplicateStreamTag,
                                       static_cast<std::uint64_t>(r)})
                     .next_u64();
      const SimulationResult sim = simulate(rep, map);
      const ReportingTriangle tri = censor(sim.cube, sim.cube.T);

      SamplerConfig fit_cfg = cfg;
      fit_cfg.seed = Rng::stream(sc.seed, {detail::kFitStreamTag,
                                           static_cast<std::uint64_t>(r)})
                         .next_u64();
      const PosteriorSamples samples = run_mcmc(tri, sc.spec, nullptr, map, fit_cfg);
      const PredictiveDraws pred = predict_cells(samples, tri, nullptr);
      const NowcastResult now = nowcast_totals(pred, tri, std::nullopt, probs);

      if (tab.rows.empty()) {
        tab.rows.resize(now.targets.size());
        for (std::size_t i = 0; i < now.targets.size(); ++i) {
          tab.rows[i].t = now.targets[i].t;
          tab.rows[i].s = now.targets[i].s;
        }
      }
      if (tab.rows.size() != now.targets.size())
        throw std::logic_error("nowcast target layout changed between replicates");

      for (std::size_t i = 0; i < now.targets.size(); ++i) {
        const auto& tg = now.targets[i];
        long long truth = 0;
        for (int d = 0; d <= sim.cube.D; ++d) {
          if (tg.s < 0) {
            for (int s = 0; s < sim.cube.S; ++s) truth += sim.cube.count(tg.t, d, s);
          } else {
            truth += sim.cube.count(tg.t, d, tg.s);
          }
        }
        const double lo = tg.quantiles.front();
        const double hi = tg.quantiles.back();
        auto& row = tab.rows[i];
        row.replicates += 1;
        row.coverage += (static_cast<double>(truth) >= lo && static_cast<double>(truth) <= hi)
                            ? 1.0
                            : 0.0;
        row.mean_width += hi - lo;
        row.mean_abs_error += std::abs(tg.mean - static_cast<double>(truth));
      }
      tab.completed += 1;
    } catch (const std::exception& e) {
      tab.failures.push_back("replicate " + std::to_string(r + 1) + ": " + e.what());
    }
  }
  for (auto& row : tab.rows)
    if (row.replicates > 0) {
      row.coverage /= row.replicates;
      row.mean_width /= row.replicates;
      row.mean_abs_error /= row.replicates;
    }
  return tab;
}

inline void write_coverage_csv(const std::string& path, const CoverageTable& tab,
                               const std::vector<std::string>& regions = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t,s,replicates,coverage,mean_width,mean_abs_error\n";
  for (const auto& row : tab.rows) {
    std::string label = "all";
    if (row.s >= 0)
      label = row.s < static_cast<int>(regions.size()) ? regions[row.s]
                                                       : std::to_string(row.s + 1);
    out << (row.t + 1) << ',' << csv::quote(label) << ',' << row.replicates << ','
        << csv::format_double(row.coverage) << ',' << csv::format_double(row.mean_width)
        << ',' << csv::format_double(row.mean_abs_error) << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON plumbing for scenarios and truth records

inline nlohmann::json state_to_json(const ParameterState& st) {
  nlohmann::json j;
  j["mu"] = st.mu;
  j["gamma"] = st.gamma;
  j["alpha"] = st.alpha;
  j["beta"] = st.beta;
  j["alpha_ts"] = st.alpha_ts;
  j["beta_ds"] = st.beta_ds;
  j["delta_ind"] = st.delta_ind;
  j["delta_iar"] = st.delta_iar;
  j["tau_alpha"] = st.tau_alpha;
  j["tau_beta"] = st.tau_beta;
  j["tau_alpha_ts"] = st.tau_alpha_ts;
  j["tau_beta_ds"] = st.tau_beta_ds;
  j["tau_delta_ind"] = st.tau_delta_ind;
  j["tau_delta_iar"] = st.tau_delta_iar;
  j["phi"] = st.phi;
  return j;
}

inline ParameterState state_from_json(const nlohmann::json& j) {
  ParameterState st;
  st.mu = j.at("mu").get<double>();
  st.gamma = j.at("gamma").get<std::vector<double>>();
  st.alpha = j.at("alpha").get<std::vector<double>>();
  st.beta = j.at("beta").get<std::vector<double>>();
  st.alpha_ts = j.at("alpha_ts").get<std::vector<double>>();
  st.beta_ds = j.at("beta_ds").get<std::vector<double>>();
  st.delta_ind = j.at("delta_ind").get<std::vector<double>>();
  st.delta_iar = j.at("delta_iar").get<std::vector<double>>();
  st.tau_alpha = j.at("tau_alpha").get<double>();
  st.tau_beta = j.at("tau_beta").get<double>();
  st.tau_alpha_ts = j.at("tau_alpha_ts").get<double>();
  st.tau_beta_ds = j.at("tau_beta_ds").get<double>();
  st.tau_delta_ind = j.at("tau_delta_ind").get<double>();
  st.tau_delta_iar = j.at("tau_delta_iar").get<double>();
  st.phi = j.at("phi").get<double>();
  return st;
}

inline nlohmann::json scenario_to_json(const SimulationScenario& sc) {
  nlohmann::json j;
  j["spec"] = modelspec_to_json(sc.spec);
  j["seed"] = sc.seed;
  if (sc.truth) {
    j["truth"] = state_to_json(*sc.truth);
  } else {
    nlohmann::json h;
    h["mu"] = sc.hyper.mu;
    if (!sc.hyper.gamma.empty()) h["gamma"] = sc.hyper.gamma;
    h["alpha_sd"] = sc.hyper.alpha_sd;
    h["beta_sd"] = sc.hyper.beta_sd;
    h["alpha_ts_sd"] = sc.hyper.alpha_ts_sd;
    h["beta_ds_sd"] = sc.hyper.beta_ds_sd;
    h["delta_ind_sd"] = sc.hyper.delta_ind_sd;
    h["delta_iar_sd"] = sc.hyper.delta_iar_sd;
    h["phi"] = sc.hyper.phi;
    j["hyperparameters"] = h;
  }
  if (sc.outbreak) {
    nlohmann::json o;
    o["start_week"] = sc.outbreak->start + 1;  // 1-based on disk
    o["duration"] = sc.outbreak->duration;
    o["amplitude"] = sc.outbreak->amplitude;
    j["outbreak"] = o;
  }
  return j;
}

inline SimulationScenario scenario_from_json(const nlohmann::json& j) {
  SimulationScenario sc;
  sc.spec = modelspec_from_json(j.at("spec"));
  sc.seed = j.value("seed", std::uint64_t{1});
  if (j.contains("truth")) sc.truth = state_from_json(j.at("truth"));
  if (j.contains("hyperparameters")) {
    const auto& h = j.at("hyperparameters");
    sc.hyper.mu = h.value("mu", sc.hyper.mu);
    if (h.contains("gamma")) sc.hyper.gamma = h.at("gamma").get<std::vector<double>>();
    sc.hyper.alpha_sd = h.value("alpha_sd", sc.hyper.alpha_sd);
    sc.hyper.beta_sd = h.value("beta_sd", sc.hyper.beta_sd);
    sc.hyper.alpha_ts_sd = h.value("alpha_ts_sd", sc.hyper.alpha_ts_sd);
    sc.hyper.beta_ds_sd = h.value("beta_ds_sd", sc.hyper.beta_ds_sd);
    sc.hyper.delta_ind_sd = h.value("delta_ind_sd", sc.hyper.delta_ind_sd);
    sc.hyper.delta_iar_sd = h.value("delta_iar_sd", sc.hyper.delta_iar_sd);
    sc.hyper.phi = h.value("phi", sc.hyper.phi);
  }
  if (j.contains("outbreak")) {
    const auto& o = j.at("outbreak");
    Outbreak ob;
    ob.start = o.at("start_week").get<int>() - 1;
    ob.duration = o.value("duration", 1);
    ob.amplitude = o.value("amplitude", 1.0);
    sc.outbreak = ob;
  }
  validate_scenario(sc);
  return sc;
}

inline nlohmann::json truth_to_json(const SimulationResult& sim) {
  nlohmann::json j;
  j["state"] = state_to_json(sim.truth);
  j["lambda"] = sim.lambda;
  j["counts"] = sim.cube.counts;  // uncensored, so true totals are recoverable
  j["T"] = sim.cube.T;
  j["D"] = sim.cube.D;
  j["S"] = sim.cube.S;
  return j;
}

}  // namespace delaycast
