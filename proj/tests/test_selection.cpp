#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "delaycast/inference.hpp"
#include "delaycast/selection.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace delaycast;

namespace {

PosteriorSamples make_samples(const ModelSpec& spec, std::vector<ParameterState> draws) {
  PosteriorSamples s;
  s.spec = spec;
  s.config = SamplerConfig{};
  s.chain_id.assign(draws.size(), 1);
  s.iteration.resize(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) s.iteration[i] = static_cast<int>(i + 1);
  s.draws = std::move(draws);
  return s;
}

}  // namespace

TEST_CASE("identical draws carry no complexity penalty", "[selection]") {
  ModelSpec spec;
  spec.T = 3;
  spec.D = 1;
  auto tri = helpers::make_triangle(3, 1, 1, 3, {7, 3, 9, 4, 12, 0});

  ParameterState st = init_state(spec);
  st.mu = 2.1;
  st.alpha = {0.1, -0.2, 0.3};
  st.beta = {0.0, -0.9};
  st.phi = 6.0;
  st.tau_alpha = 3.0;
  st.tau_beta = 0.5;
  auto samples = make_samples(spec, std::vector<ParameterState>(5, st));

  const DicResult d = dic(samples, tri);
  const WaicResult w = waic(samples, tri);

  const double dev = -2.0 * log_likelihood(st, spec, nullptr, tri);
  REQUIRE(d.dbar == Catch::Approx(dev).margin(1e-12));
  REQUIRE(d.pd == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(d.dic == Catch::Approx(dev).margin(1e-9));
  REQUIRE(w.p_waic == 0.0);
  REQUIRE(w.waic == Catch::Approx(-2.0 * w.lppd).margin(1e-12));
  REQUIRE(w.waic == Catch::Approx(dev).margin(1e-9));
}

TEST_CASE("two draws on one cell match a hand computation", "[selection]") {
  ModelSpec spec;
  spec.T = 1;
  spec.D = 1;
  auto tri = helpers::make_triangle(1, 1, 1, 1, {3, 0});
  REQUIRE(tri.observed(0, 0));
  REQUIRE_FALSE(tri.observed(0, 1));

  ParameterState a = init_state(spec);
  a.mu = std::log(2.0);
  a.phi = 5.0;
  ParameterState b = init_state(spec);
  b.mu = std::log(4.0);
  b.phi = 2.0;
  auto samples = make_samples(spec, {a, b});

  const double la = oracle::negbin_lpmf(3, 2.0, 5.0);
  const double lb = oracle::negbin_lpmf(3, 4.0, 2.0);
  const double dbar = -(la + lb);
  const double lam_hat = std::exp(0.5 * (std::log(2.0) + std::log(4.0)));
  const double phi_hat = std::exp(0.5 * (std::log(5.0) + std::log(2.0)));
  const double d_hat = -2.0 * oracle::negbin_lpmf(3, lam_hat, phi_hat);

  const DicResult d = dic(samples, tri);
  REQUIRE(d.dbar == Catch::Approx(dbar).epsilon(1e-12));
  REQUIRE(d.pd == Catch::Approx(dbar - d_hat).margin(1e-10));
  REQUIRE(d.dic == Catch::Approx(2.0 * dbar - d_hat).epsilon(1e-10));

  const double lppd = std::log(0.5 * (std::exp(la) + std::exp(lb)));
  const double pw = 0.25 * (la - lb) * (la - lb);
  const WaicResult w = waic(samples, tri);
  REQUIRE(w.lppd == Catch::Approx(lppd).epsilon(1e-12));
  REQUIRE(w.p_waic == Catch::Approx(pw).epsilon(1e-12));
  REQUIRE(w.waic == Catch::Approx(-2.0 * (lppd - pw)).epsilon(1e-12));
}

TEST_CASE("criteria ignore draw order and draw duplication", "[selection]") {
  ModelSpec spec;
  spec.variant = Variant::m0;
  spec.T = 4;
  spec.D = 2;
  spec.S = 2;
  std::vector<long long> counts(static_cast<std::size_t>(4) * 3 * 2, 0);
  auto shape = helpers::make_triangle(4, 2, 2, 4, counts);
  std::mt19937 gen(99);
  std::poisson_distribution<long long> pois(8.0);
  for (int t = 0; t < 4; ++t)
    for (int d = 0; d <= 2; ++d)
      if (shape.observed(t, d))
        for (int s = 0; s < 2; ++s) counts[shape.cell(t, d, s)] = pois(gen);
  auto tri = helpers::make_triangle(4, 2, 2, 4, counts);

  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<ParameterState> draws;
  for (int m = 0; m < 7; ++m) {
    ParameterState st = init_state(spec);
    st.mu = 2.0 + 0.3 * z(gen);
    for (auto& v : st.alpha) v = 0.2 * z(gen);
    for (auto& v : st.beta) v = 0.2 * z(gen);
    for (auto& v : st.delta_ind) v = 0.2 * z(gen);
    st.phi = std::exp(1.5 + 0.4 * z(gen));
    st.tau_alpha = std::exp(z(gen));
    st.tau_beta = std::exp(z(gen));
    st.tau_delta_ind = std::exp(z(gen));
    draws.push_back(st);
  }

  auto base = make_samples(spec, draws);
  const DicResult d0 = dic(base, tri);
  const WaicResult w0 = waic(base, tri);

  auto shuffled = draws;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  auto perm = make_samples(spec, shuffled);
  const DicResult d1 = dic(perm, tri);
  const WaicResult w1 = waic(perm, tri);
  REQUIRE(d1.dbar == Catch::Approx(d0.dbar).epsilon(1e-12));
  REQUIRE(d1.pd == Catch::Approx(d0.pd).margin(1e-9));
  REQUIRE(w1.lppd == Catch::Approx(w0.lppd).epsilon(1e-12));
  REQUIRE(w1.p_waic == Catch::Approx(w0.p_waic).epsilon(1e-10));

  auto doubled = draws;
  doubled.insert(doubled.end(), draws.begin(), draws.end());
  auto twice = make_samples(spec, doubled);
  const DicResult d2 = dic(twice, tri);
  const WaicResult w2 = waic(twice, tri);
  REQUIRE(d2.dbar == Catch::Approx(d0.dbar).epsilon(1e-12));
  REQUIRE(d2.pd == Catch::Approx(d0.pd).margin(1e-9));
  REQUIRE(d2.dic == Catch::Approx(d0.dic).epsilon(1e-10));
  REQUIRE(w2.lppd == Catch::Approx(w0.lppd).epsilon(1e-12));
  REQUIRE(w2.p_waic == Catch::Approx(w0.p_waic).epsilon(1e-10));
  REQUIRE(w2.waic == Catch::Approx(w0.waic).epsilon(1e-10));
}

TEST_CASE("criteria from a sampled fit are finite with nonnegative p_waic", "[selection]") {
  helpers::BaseScenario sc;
  sc.T = 10;
  sc.D = 2;
  auto sim = helpers::simulate_base(sc);

  ModelSpec spec;
  spec.T = sc.T;
  spec.D = sc.D;
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 700;
  cfg.burn_in = 300;
  cfg.thin = 2;
  cfg.seed = 31;
  auto samples = run_mcmc(sim.tri, spec, nullptr, nullptr, cfg);

  const DicResult d = dic(samples, sim.tri);
  const WaicResult w = waic(samples, sim.tri);
  REQUIRE(std::isfinite(d.dbar));
  REQUIRE(std::isfinite(d.pd));
  REQUIRE(d.dic == Catch::Approx(d.dbar + d.pd));
  REQUIRE(d.dic > 0.0);
  REQUIRE(w.p_waic >= 0.0);
  REQUIRE(std::isfinite(w.lppd));
  REQUIRE(w.waic == Catch::Approx(-2.0 * (w.lppd - w.p_waic)));
  REQUIRE(w.waic > 0.0);
  // Both criteria estimate the same out-of-sample deviance scale.
  REQUIRE(std::abs(d.dic - w.waic) < 0.5 * std::abs(d.dic));
}

TEST_CASE("criteria reject short or overflowing draw sets", "[selection]") {
  ModelSpec spec;
  spec.T = 2;
  spec.D = 1;
  auto tri = helpers::make_triangle(2, 1, 1, 2, {4, 2, 5, 0});
  ParameterState st = init_state(spec);
  st.mu = 1.0;

  auto one = make_samples(spec, {st});
  REQUIRE_THROWS_AS(dic(one, tri), std::invalid_argument);
  REQUIRE_THROWS_AS(waic(one, tri), std::invalid_argument);

  ParameterState bad = st;
  bad.mu = 1000.0;  // exp overflows the mean
  auto mixed = make_samples(spec, {st, bad, st});
  REQUIRE_THROWS_WITH(dic(mixed, tri), Catch::Matchers::ContainsSubstring("draw 2"));
  REQUIRE_THROWS_WITH(waic(mixed, tri), Catch::Matchers::ContainsSubstring("draw 2"));
}

TEST_CASE("criteria table is written with the fixed header", "[selection]") {
  std::vector<ModelCriteria> rows(2);
  rows[0].model = "m0";
  rows[0].dic = {100.0, 4.5, 104.5};
  rows[0].waic = {-51.0, 5.0, 112.0};
  rows[1].model = "m1";
  rows[1].dic = {90.0, -0.25, 89.75};
  rows[1].waic = {-44.0, 3.0, 94.0};

  const std::string path = "criteria_test.csv";
  write_criteria_csv(path, rows);
  std::ifstream in(path);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "model,Dbar,pD,DIC,WAIC");
  std::getline(in, line);
  auto f0 = delaycast::csv::split(line);
  REQUIRE(f0[0] == "m0");
  REQUIRE(std::stod(f0[1]) == Catch::Approx(100.0));
  REQUIRE(std::stod(f0[3]) == Catch::Approx(104.5));
  REQUIRE(std::stod(f0[4]) == Catch::Approx(112.0));
  std::getline(in, line);  // negative pD is flagged before the row
  REQUIRE(line == "# warning: negative pD for m1");
  std::getline(in, line);
  auto f1 = delaycast::csv::split(line);
  REQUIRE(f1[0] == "m1");
  REQUIRE(std::stod(f1[2]) == Catch::Approx(-0.25));
  std::remove(path.c_str());
}
