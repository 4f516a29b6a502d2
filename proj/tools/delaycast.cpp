// Command-line surface for the delay-correction pipeline:
// ingest -> fit -> nowcast -> compare -> simulate.
//
// Exit codes: 0 success, 2 input or validation error, 3 convergence
// failure (any monitored R-hat above 1.1 unless --no-strict is given).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "delaycast/delaycast.hpp"

namespace dc = delaycast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

class Timer {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count();
  }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point t0_ = Clock::now();
};

dc::Variant parse_model(std::string name) {
  for (char& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (int v = 0; v <= 8; ++v)
    if (name == dc::variant_name(static_cast<dc::Variant>(v)))
      return static_cast<dc::Variant>(v);
  throw std::invalid_argument("unknown model '" + name + "' (expected BASE or M0..M7)");
}

std::vector<double> parse_probs(const std::string& csv_list) {
  std::vector<double> probs;
  std::string item;
  std::istringstream in(csv_list);
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    probs.push_back(dc::csv::parse_double(item));
  }
  if (probs.empty()) throw std::invalid_argument("--quantiles needs at least one probability");
  return probs;
}

// Model spec for a triangle: spatial variants take the triangle's regions,
// BASE insists on a single pooled region.
dc::ModelSpec spec_for(dc::Variant variant, const dc::ReportingTriangle& tri) {
  dc::ModelSpec spec;
  spec.variant = variant;
  spec.T = tri.T;
  spec.D = tri.D;
  spec.S = spec.spatial() ? tri.S : 1;
  if (!spec.spatial() && tri.S != 1)
    throw std::invalid_argument("BASE expects a single-region triangle; this one has " +
                                std::to_string(tri.S) + " regions");
  dc::validate_spec(spec);
  return spec;
}

dc::RegionMap load_map_for(const std::string& adjacency_path, dc::Variant variant,
                           const dc::ReportingTriangle& tri) {
  if (adjacency_path.empty())
    throw std::invalid_argument(std::string("model ") +
                                dc::variant_name(variant) +
                                " is spatial and needs --adjacency");
  dc::RegionMap map = dc::read_adjacency_csv(adjacency_path);
  if (map.regions != tri.regions)
    throw std::invalid_argument("adjacency regions do not match the triangle's regions");
  return map;
}

struct SamplerFlags {
  int chains = 3;
  long long iters = 20000;
  long long burn = -1;  // -1 means iters / 2
  int thin = 5;
  std::uint64_t seed = 1;
  int threads = 0;

  dc::SamplerConfig config() const {
    dc::SamplerConfig cfg;
    cfg.chains = chains;
    cfg.iterations = static_cast<int>(iters);
    cfg.burn_in = static_cast<int>(burn < 0 ? iters / 2 : burn);
    cfg.thin = thin;
    cfg.seed = seed;
    cfg.threads = threads;
    dc::validate_config(cfg);
    return cfg;
  }

  void attach(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--chains", chains, "Number of MCMC chains");
    cmd->add_option("--iters", iters, "Iterations per chain");
    cmd->add_option("--burn", burn, "Burn-in sweeps (default: iters/2)");
    cmd->add_option("--thin", thin, "Keep every thin-th post-burn-in sweep");
    if (with_seed) cmd->add_option("--seed", seed, "Root seed; all randomness derives from it");
    cmd->add_option("--threads", threads, "Worker cap, 0 = one per chain");
  }

  nlohmann::json resolved() const {
    const auto cfg = config();
    return {{"chains", cfg.chains}, {"iterations", cfg.iterations}, {"burn_in", cfg.burn_in},
            {"thin", cfg.thin},     {"seed", cfg.seed},             {"threads", cfg.threads}};
  }
};

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input, out, adjacency, as_of, unit = "week", week_start = "sunday";
  int max_delay = 0;
};

int cmd_ingest(const IngestArgs& a) {
  Timer timer;
  if (a.unit != "week")
    throw std::invalid_argument("only weekly aggregation is supported (--unit week)");
  const auto records = dc::read_linelist_csv(a.input);
  dc::RegionMap map;
  const bool have_map = !a.adjacency.empty();
  if (have_map) map = dc::read_adjacency_csv(a.adjacency);
  dc::BuildOptions opts;
  opts.unit = a.unit;
  opts.week_start = dc::parse_weekday(a.week_start);
  const auto tri = dc::build_triangle(records, a.max_delay, dc::Date::parse_iso(a.as_of),
                                      have_map ? &map : nullptr, opts);
  dc::write_triangle_json(a.out, tri);

  dc::RunManifest man;
  man.command = "ingest";
  man.config = {{"input", a.input},   {"out", a.out},           {"adjacency", a.adjacency},
                {"as_of", a.as_of},   {"max_delay", a.max_delay}, {"unit", a.unit},
                {"week_start", a.week_start}};
  man.add_input(a.input);
  if (have_map) man.add_input(a.adjacency);
  man.timings_ms.emplace_back("total", timer.ms());
  dc::write_manifest(dc::manifest_path_for(a.out), man);

  long long observed = 0;
  for (char m : tri.mask) observed += m;
  std::printf("triangle T=%d D=%d S=%d observed_cells=%lld dropped_future_reports=%lld\n",
              tri.T, tri.D, tri.S, observed, tri.dropped_future_reports);
  std::printf("wrote %s\n", a.out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string triangle, model = "BASE", adjacency, out_prefix;
  SamplerFlags sampler;
  bool no_strict = false;
};

int cmd_fit(const FitArgs& a) {
  Timer timer;
  const auto tri = dc::read_triangle_json(a.triangle);
  const auto variant = parse_model(a.model);
  const auto spec = spec_for(variant, tri);
  dc::RegionMap map;
  const bool spatial = spec.spatial();
  if (spatial) map = load_map_for(a.adjacency, variant, tri);
  const auto cfg = a.sampler.config();

  Timer fit_timer;
  const auto samples = dc::run_mcmc(tri, spec, nullptr, spatial ? &map : nullptr, cfg);
  const double fit_ms = fit_timer.ms();
  const auto diag = dc::diagnostics(samples);

  const std::string samples_path = a.out_prefix + "_samples.csv";
  const std::string diag_path = a.out_prefix + "_diagnostics.json";
  dc::write_samples_csv(samples_path, samples);
  {
    nlohmann::json j;
    j["tool_version"] = dc::kVersion;
    j["model"] = dc::variant_name(variant);
    j["T"] = spec.T;
    j["D"] = spec.D;
    j["S"] = spec.S;
    j["draws"] = samples.draws.size();
    j["diagnostics"] = dc::diagnostics_to_json(diag);
    j["acceptance_rates"] = samples.acceptance_rates;
    std::ofstream out(diag_path);
    if (!out) throw std::runtime_error("cannot write " + diag_path);
    out << j.dump(2) << '\n';
  }

  std::printf("%-18s %8s %10s\n", "parameter", "rhat", "ess");
  double worst = 0.0;
  bool have_rhat = false;
  for (std::size_t i = 0; i < diag.names.size(); ++i) {
    const double r = diag.rhat[i];
    if (std::isfinite(r)) {
      worst = std::max(worst, r);
      have_rhat = true;
      std::printf("%-18s %8.4f %10.1f\n", diag.names[i].c_str(), r, diag.ess[i]);
    } else {
      std::printf("%-18s %8s %10.1f\n", diag.names[i].c_str(), "nan", diag.ess[i]);
    }
  }

  dc::RunManifest man;
  man.command = "fit";
  man.seed = cfg.seed;
  man.config = {{"triangle", a.triangle}, {"model", dc::variant_name(variant)},
                {"adjacency", a.adjacency}, {"out_prefix", a.out_prefix},
                {"no_strict", a.no_strict}, {"sampler", a.sampler.resolved()}};
  man.add_input(a.triangle);
  if (spatial) man.add_input(a.adjacency);
  man.timings_ms.emplace_back("fit", fit_ms);
  man.timings_ms.emplace_back("total", timer.ms());
  dc::write_manifest(a.out_prefix + "_manifest.json", man);

  std::printf("wrote %s and %s\n", samples_path.c_str(), diag_path.c_str());
  if (have_rhat && worst > 1.1) {
    std::fprintf(stderr, "convergence failure: max rhat %.4f exceeds 1.1\n", worst);
    if (!a.no_strict) return kExitDiverged;
    std::fprintf(stderr, "continuing because --no-strict was given\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct NowcastArgs {
  std::string samples, triangle, model = "BASE", quantiles = "0.025,0.5,0.975";
  std::string out, draws_out;
  double threshold = -1.0;  // negative = no threshold
  std::uint64_t seed = 1;
};

int cmd_nowcast(const NowcastArgs& a) {
  Timer timer;
  const auto tri = dc::read_triangle_json(a.triangle);
  const auto variant = parse_model(a.model);
  const auto spec = spec_for(variant, tri);
  const auto samples = dc::read_samples_csv(a.samples, spec);
  const auto probs = parse_probs(a.quantiles);
  const std::optional<double> threshold =
      a.threshold < 0.0 ? std::nullopt : std::optional<double>(a.threshold);

  const auto pred = dc::predict_cells(samples, tri, nullptr, a.seed);
  const auto result = dc::nowcast_totals(pred, tri, threshold, probs);
  dc::write_nowcast_csv(a.out, result, tri.regions);
  if (!a.draws_out.empty()) dc::write_cell_draws_csv(a.draws_out, pred);

  dc::RunManifest man;
  man.command = "nowcast";
  man.seed = a.seed;
  man.config = {{"samples", a.samples},   {"triangle", a.triangle},
                {"model", dc::variant_name(variant)}, {"quantiles", a.quantiles},
                {"threshold", a.threshold}, {"out", a.out},
                {"draws_out", a.draws_out}};
  man.add_input(a.samples);
  man.add_input(a.triangle);
  man.timings_ms.emplace_back("total", timer.ms());
  dc::write_manifest(dc::manifest_path_for(a.out), man);

  std::printf("nowcast targets=%zu predictive_draws=%d unresolved_cells=%zu\n",
              result.targets.size(), pred.n_draws, pred.n_cells());
  std::printf("wrote %s\n", a.out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string triangle, models, adjacency, out;
  SamplerFlags sampler;
};

int cmd_compare(const CompareArgs& a) {
  Timer timer;
  const auto tri = dc::read_triangle_json(a.triangle);
  std::vector<dc::Variant> variants;
  {
    std::istringstream in(a.models);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (item.empty()) continue;
      const auto v = parse_model(item);
      bool dup = false;
      for (auto seen : variants) dup = dup || seen == v;
      if (dup) {
        std::fprintf(stderr, "warning: duplicate model %s ignored\n", dc::variant_name(v));
        continue;
      }
      variants.push_back(v);
    }
  }
  if (variants.empty()) throw std::invalid_argument("--models lists no models");

  const auto cfg = a.sampler.config();
  std::vector<dc::ModelCriteria> rows;
  int failed = 0;
  for (const auto v : variants) {
    try {
      const auto spec = spec_for(v, tri);
      dc::RegionMap map;
      const bool spatial = spec.spatial();
      if (spatial) map = load_map_for(a.adjacency, v, tri);
      const auto samples = dc::run_mcmc(tri, spec, nullptr, spatial ? &map : nullptr, cfg);
      dc::ModelCriteria row;
      row.model = dc::variant_name(v);
      row.dic = dc::dic(samples, tri);
      row.waic = dc::waic(samples, tri);
      rows.push_back(row);
      std::printf("%-5s Dbar=%.2f pD=%.2f DIC=%.2f WAIC=%.2f\n", row.model.c_str(),
                  row.dic.dbar, row.dic.pd, row.dic.dic, row.waic.waic);
    } catch (const std::exception& e) {
      ++failed;
      std::fprintf(stderr, "model %s failed: %s\n", dc::variant_name(v), e.what());
    }
  }
  dc::write_criteria_csv(a.out, rows);

  dc::RunManifest man;
  man.command = "compare";
  man.seed = cfg.seed;
  man.config = {{"triangle", a.triangle}, {"models", a.models},
                {"adjacency", a.adjacency}, {"out", a.out},
                {"sampler", a.sampler.resolved()}};
  man.add_input(a.triangle);
  if (!a.adjacency.empty()) man.add_input(a.adjacency);
  man.timings_ms.emplace_back("total", timer.ms());
  dc::write_manifest(dc::manifest_path_for(a.out), man);

  std::printf("wrote %s (%zu models, %d failed)\n", a.out.c_str(), rows.size(), failed);
  return failed == 0 ? kExitOk : kExitUsage;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario, out_dir, adjacency;
  int replicates = 1;
  bool coverage = false;
  double level = 0.95;
  SamplerFlags sampler{.chains = 3, .iters = 4000, .burn = -1, .thin = 5};
  std::uint64_t seed = 0;  // 0 = keep the scenario's seed
};

int cmd_simulate(const SimulateArgs& a) {
  Timer timer;
  nlohmann::json sj;
  {
    std::ifstream in(a.scenario);
    if (!in) throw std::invalid_argument("cannot open " + a.scenario);
    in >> sj;
  }
  auto sc = dc::scenario_from_json(sj);
  if (a.seed != 0) sc.seed = a.seed;
  if (a.replicates < 1) throw std::invalid_argument("--replicates must be at least 1");

  dc::RegionMap map;
  const bool have_map = !a.adjacency.empty();
  if (have_map) map = dc::read_adjacency_csv(a.adjacency);

  std::filesystem::create_directories(a.out_dir);
  const auto path_in_dir = [&](const std::string& name) { return a.out_dir + "/" + name; };

  if (a.coverage) {
    auto flags = a.sampler;
    flags.seed = sc.seed;  // replicate fits derive their own streams from it
    const auto cfg = flags.config();
    const auto tab = dc::coverage_experiment(sc, a.replicates, cfg, a.level,
                                             have_map ? &map : nullptr);
    std::vector<std::string> regions;
    if (have_map) {
      regions = map.regions;
    } else if (sc.spec.S == 1) {
      regions = {"all"};
    } else {
      for (int s = 0; s < sc.spec.S; ++s) regions.push_back("r" + std::to_string(s + 1));
    }
    dc::write_coverage_csv(path_in_dir("coverage.csv"), tab, regions);
    for (const auto& msg : tab.failures) std::fprintf(stderr, "%s\n", msg.c_str());
    double pooled = 0.0;
    for (const auto& row : tab.rows) pooled += row.coverage;
    if (!tab.rows.empty()) pooled /= static_cast<double>(tab.rows.size());
    std::printf("coverage level=%.3f completed=%d/%d pooled=%.3f\n", tab.level,
                tab.completed, tab.requested, pooled);
  } else {
    for (int r = 0; r < a.replicates; ++r) {
      auto rep = sc;
      if (a.replicates > 1)
        rep.seed = dc::Rng::stream(sc.seed, {dc::detail::kReplicateStreamTag,
                                             static_cast<std::uint64_t>(r)})
                       .next_u64();
      const auto sim = dc::simulate(rep, have_map ? &map : nullptr);
      const auto tri = dc::censor(sim.cube, sim.cube.T);
      dc::write_triangle_json(path_in_dir("dataset_" + std::to_string(r + 1) + ".json"), tri);
      auto tj = dc::truth_to_json(sim);
      tj["seed"] = rep.seed;
      tj["tool_version"] = dc::kVersion;
      std::ofstream out(path_in_dir("truth_" + std::to_string(r + 1) + ".json"));
      if (!out) throw std::runtime_error("cannot write truth record");
      out << tj.dump(2) << '\n';
    }
    std::printf("wrote %d dataset/truth pairs to %s\n", a.replicates, a.out_dir.c_str());
  }

  dc::RunManifest man;
  man.command = "simulate";
  man.seed = sc.seed;
  man.config = {{"scenario", a.scenario}, {"out_dir", a.out_dir},
                {"adjacency", a.adjacency}, {"replicates", a.replicates},
                {"coverage", a.coverage},   {"level", a.level},
                {"sampler", a.sampler.resolved()}};
  man.add_input(a.scenario);
  if (have_map) man.add_input(a.adjacency);
  man.timings_ms.emplace_back("total", timer.ms());
  dc::write_manifest(path_in_dir("manifest.json"), man);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"delaycast: correct reporting delays in disease surveillance counts"};
  app.set_version_flag("--version", dc::kVersion);
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand(
      "ingest", "Aggregate a line-list CSV into a reporting triangle JSON file");
  ingest_cmd->add_option("--input", ingest.input, "Line-list CSV (event_date, report_date[, region])")
      ->required();
  ingest_cmd->add_option("--max-delay", ingest.max_delay, "Delay cutoff D in weeks")->required();
  ingest_cmd->add_option("--as-of", ingest.as_of, "Snapshot date YYYY-MM-DD")->required();
  ingest_cmd->add_option("--out", ingest.out, "Output triangle JSON path")->required();
  ingest_cmd->add_option("--unit", ingest.unit, "Aggregation unit (week)");
  ingest_cmd->add_option("--adjacency", ingest.adjacency, "Region adjacency CSV");
  ingest_cmd->add_option("--week-start", ingest.week_start, "First day of the week (default sunday)");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Sample the posterior of a delay model by MCMC");
  fit_cmd->add_option("--triangle", fit.triangle, "Triangle JSON from ingest")->required();
  fit_cmd->add_option("--model", fit.model, "BASE or M0..M7");
  fit_cmd->add_option("--adjacency", fit.adjacency, "Region adjacency CSV (spatial models)");
  fit_cmd->add_option("--out-prefix", fit.out_prefix, "Prefix for samples/diagnostics/manifest")
      ->required();
  fit_cmd->add_flag("--no-strict", fit.no_strict, "Do not fail on rhat above 1.1");
  fit.sampler.attach(fit_cmd);

  NowcastArgs nowcast;
  auto* nowcast_cmd =
      app.add_subcommand("nowcast", "Turn posterior samples into nowcasts with uncertainty");
  nowcast_cmd->add_option("--samples", nowcast.samples, "Samples CSV from fit")->required();
  nowcast_cmd->add_option("--triangle", nowcast.triangle, "Triangle JSON the fit used")->required();
  nowcast_cmd->add_option("--model", nowcast.model, "Model the samples came from");
  nowcast_cmd->add_option("--quantiles", nowcast.quantiles, "Comma-separated probabilities");
  nowcast_cmd->add_option("--threshold", nowcast.threshold, "Epidemic threshold for exceedance");
  nowcast_cmd->add_option("--seed", nowcast.seed, "Seed for the predictive draws");
  nowcast_cmd->add_option("--out", nowcast.out, "Output nowcast CSV")->required();
  nowcast_cmd->add_option("--draws-out", nowcast.draws_out, "Optional per-cell draw CSV");

  CompareArgs compare;
  auto* compare_cmd =
      app.add_subcommand("compare", "Fit several models and tabulate DIC and WAIC");
  compare_cmd->add_option("--triangle", compare.triangle, "Triangle JSON")->required();
  compare_cmd->add_option("--models", compare.models, "Comma-separated list, e.g. M0,M1,M4")
      ->required();
  compare_cmd->add_option("--adjacency", compare.adjacency, "Region adjacency CSV");
  compare_cmd->add_option("--out", compare.out, "Output criteria CSV")->required();
  compare.sampler.attach(compare_cmd);

  SimulateArgs simulate;
  auto* simulate_cmd =
      app.add_subcommand("simulate", "Draw synthetic datasets or run a coverage experiment");
  simulate_cmd->add_option("--scenario", simulate.scenario, "Scenario JSON")->required();
  simulate_cmd->add_option("--out-dir", simulate.out_dir, "Output directory")->required();
  simulate_cmd->add_option("--replicates", simulate.replicates, "Number of datasets");
  simulate_cmd->add_flag("--coverage", simulate.coverage,
                         "Run the censor-refit-nowcast coverage experiment");
  simulate_cmd->add_option("--level", simulate.level, "Nominal interval level");
  simulate_cmd->add_option("--adjacency", simulate.adjacency, "Region adjacency CSV");
  simulate_cmd->add_option("--seed", simulate.seed, "Override the scenario seed (0 keeps it)");
  simulate.sampler.attach(simulate_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(ingest_cmd)) return cmd_ingest(ingest);
    if (app.got_subcommand(fit_cmd)) return cmd_fit(fit);
    if (app.got_subcommand(nowcast_cmd)) return cmd_nowcast(nowcast);
    if (app.got_subcommand(compare_cmd)) return cmd_compare(compare);
    if (app.got_subcommand(simulate_cmd)) return cmd_simulate(simulate);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
